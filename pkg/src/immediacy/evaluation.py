"""Evaluation machinery: rater-replacement ICC tables, median-fusion
correlations, external validation against questionnaire/observer data,
and report generation.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DatasetManifest, load_manifest
from .errors import EmptyDatasetError, ImmediacyError, UndefinedStatisticError
from .features import ScoreRow
from .stats import CorrelationResult, IccResult, fdr_adjust, icc2k, pearson

MODEL_COLUMN = "Model"

#: Measure columns of the external-validation CSV, one per hypothesis.
MEASURE_NAMES = (
    "interest_math",
    "cognitive_activation",
    "perceived_enthusiasm",
    "socio_emotional_support",
)
HYPOTHESES = {f"H{i + 1}": name for i, name in enumerate(MEASURE_NAMES)}
VARIANT_SUFFIX = {"full": "a", "additional-only": "b"}


@dataclass
class RaterMatrix:
    """Named rating columns over a shared item list, no missing values."""

    item_ids: list[str]
    columns: dict[str, np.ndarray]

    def __post_init__(self):
        n = len(self.item_ids)
        clean: dict[str, np.ndarray] = {}
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (n,):
                raise ValueError(
                    f"column {name!r} has {arr.shape} values for {n} items"
                )
            if not np.isfinite(arr).all():
                raise ValueError(f"column {name!r} contains missing values")
            clean[name] = arr
        self.columns = clean

    def __len__(self) -> int:
        return len(self.item_ids)

    def grid(self, names: list[str] | None = None) -> np.ndarray:
        """Items x columns array in the given (or insertion) column order."""
        names = list(self.columns) if names is None else names
        return np.column_stack([self.columns[n] for n in names])


@dataclass(frozen=True)
class IccTableRow:
    combination: tuple[str, ...]
    icc: IccResult


def rater_replacement_table(
    matrix: RaterMatrix, model_column: str = MODEL_COLUMN
) -> list[IccTableRow]:
    """ICC of every rater/model combination used in the replacement study.

    Expects three human rater columns plus one model column and returns
    five rows: the all-human triple, the three leave-one-human-out
    combinations with the model substituted, and all four columns
    together.
    """
    if model_column not in matrix.columns:
        raise ValueError(f"missing column {model_column!r}")
    raters = [name for name in matrix.columns if name != model_column]
    if len(raters) != 3:
        raise ValueError(f"expected exactly 3 rater columns, got {raters}")

    combos: list[tuple[str, ...]] = [tuple(raters)]
    for i in range(2, -1, -1):
        combo = list(raters)
        combo[i] = model_column
        combos.append(tuple(combo))
    combos.append(tuple(raters) + (model_column,))

    return [
        IccTableRow(combination=combo, icc=icc2k(matrix.grid(list(combo))))
        for combo in combos
    ]


@dataclass(frozen=True)
class ColumnCorrelation:
    """Correlation of one column with the per-item cross-source median."""

    column: str
    result: CorrelationResult | None
    zero_variance: bool = False


def median_fusion_correlations(matrix: RaterMatrix) -> list[ColumnCorrelation]:
    """Correlate each source against the per-item median of all sources.

    With an even number of sources the median is the mean of the two
    middle values.  A constant column has no defined correlation and is
    returned flagged instead of raising.
    """
    if len(matrix) < 3:
        raise ValueError("need at least 3 items")
    grid = matrix.grid()
    median = np.median(grid, axis=1)
    out: list[ColumnCorrelation] = []
    for name in matrix.columns:
        try:
            result = pearson(matrix.columns[name], median)
        except UndefinedStatisticError:
            out.append(ColumnCorrelation(column=name, result=None, zero_variance=True))
        else:
            out.append(ColumnCorrelation(column=name, result=result))
    return out


# -- external validation -------------------------------------------------------


@dataclass
class ExternalMeasures:
    """Aggregated questionnaire/observer scores keyed by teacher or video."""

    level: str  # "teacher" or "video"
    rows: dict[str, dict[str, float]]

    def __post_init__(self):
        if self.level not in ("teacher", "video"):
            raise ValueError(f"unknown aggregation level {self.level!r}")
        for key, row in self.rows.items():
            missing = [m for m in MEASURE_NAMES if m not in row]
            if missing:
                raise ValueError(f"row {key!r} missing measures: {missing}")


def read_measures_csv(path: str | Path) -> ExternalMeasures:
    """Read the documented CSV: key column (teacher_id or video_id) then
    the four measure columns."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        names = reader.fieldnames or []
        if not names or names[0] not in ("teacher_id", "video_id"):
            raise ImmediacyError(
                f"{path}: first column must be teacher_id or video_id"
            )
        missing = [m for m in MEASURE_NAMES if m not in names]
        if missing:
            raise ImmediacyError(f"{path}: missing measure columns {missing}")
        level = "teacher" if names[0] == "teacher_id" else "video"
        rows: dict[str, dict[str, float]] = {}
        for i, record in enumerate(reader, start=2):
            key = record[names[0]]
            if key in rows:
                raise ImmediacyError(f"{path}: duplicate key {key!r} at line {i}")
            try:
                rows[key] = {m: float(record[m]) for m in MEASURE_NAMES}
            except (TypeError, ValueError) as exc:
                raise ImmediacyError(
                    f"{path}: non-numeric measure at line {i}: {exc}"
                ) from exc
    return ExternalMeasures(level=level, rows=rows)


def write_measures_csv(measures: ExternalMeasures, path: str | Path) -> None:
    key_field = "teacher_id" if measures.level == "teacher" else "video_id"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([key_field, *MEASURE_NAMES])
        for key in sorted(measures.rows):
            row = measures.rows[key]
            writer.writerow([key, *[repr(row[m]) for m in MEASURE_NAMES]])


@dataclass(frozen=True)
class HypothesisResult:
    hypothesis_id: str
    measure: str
    r: float
    p_raw: float
    p_adjusted: float
    n: int


@dataclass
class CorrelationReport:
    """Named-hypothesis correlations with FDR-adjusted p-values."""

    level: str
    variant: str
    entries: list[HypothesisResult]
    unmatched_scores: list[str] = field(default_factory=list)
    unmatched_measures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "variant": self.variant,
            "entries": [
                {
                    "hypothesis": e.hypothesis_id,
                    "measure": e.measure,
                    "r": e.r,
                    "p_raw": e.p_raw,
                    "p_adjusted": e.p_adjusted,
                    "n": e.n,
                }
                for e in self.entries
            ],
            "unmatched_scores": self.unmatched_scores,
            "unmatched_measures": self.unmatched_measures,
        }


def aggregate_scores(scores: list[ScoreRow], level: str) -> dict[str, float]:
    """Mean immediacy score per teacher or per video."""
    if level not in ("teacher", "video"):
        raise ValueError(f"unknown aggregation level {level!r}")
    buckets: dict[str, list[float]] = {}
    for row in scores:
        key = row.teacher_id if level == "teacher" else row.video_id
        buckets.setdefault(key, []).append(row.score)
    return {key: float(np.mean(vals)) for key, vals in buckets.items()}


def external_validation(
    scores: list[ScoreRow],
    measures: ExternalMeasures,
    level: str,
    variant: str = "full",
) -> CorrelationReport:
    """Correlate aggregated immediacy scores with external measures.

    Scores are mean-aggregated at the requested level and joined with the
    measure rows on that key; one Pearson correlation per hypothesis, with
    Benjamini-Hochberg adjustment across the four-hypothesis family of
    this variant.  Keys present on only one side are reported unmatched
    and excluded from n.
    """
    if variant not in VARIANT_SUFFIX:
        raise ValueError(f"unknown dataset variant {variant!r}")
    if measures.level != level:
        raise ValueError(
            f"measures are keyed at {measures.level!r} level, requested {level!r}"
        )
    aggregated = aggregate_scores(scores, level)
    joint = sorted(set(aggregated) & set(measures.rows))
    if not joint:
        raise EmptyDatasetError("no overlapping keys between scores and measures")
    if len(joint) < 3:
        raise EmptyDatasetError(
            f"need at least 3 overlapping keys, got {len(joint)}"
        )

    nvi = np.array([aggregated[k] for k in joint])
    suffix = VARIANT_SUFFIX[variant]
    results: list[tuple[str, str, CorrelationResult]] = []
    for hyp, measure in HYPOTHESES.items():
        col = np.array([measures.rows[k][measure] for k in joint])
        results.append((f"{hyp}{suffix}", measure, pearson(nvi, col)))

    adjusted = fdr_adjust([r.p_raw for _, _, r in results])
    entries = [
        HypothesisResult(
            hypothesis_id=hyp,
            measure=measure,
            r=res.r,
            p_raw=res.p_raw,
            p_adjusted=p_adj,
            n=res.n,
        )
        for (hyp, measure, res), p_adj in zip(results, adjusted)
    ]
    return CorrelationReport(
        level=level,
        variant=variant,
        entries=entries,
        unmatched_scores=sorted(set(aggregated) - set(measures.rows)),
        unmatched_measures=sorted(set(measures.rows) - set(aggregated)),
    )


# -- report bundles -------------------------------------------------------------


@dataclass
class ReportInputs:
    """File inputs feeding one report bundle."""

    manifest: Path
    evaluation: Path | None = None
    external: dict[str, Path] = field(default_factory=dict)
    metrics: dict[str, Path] = field(default_factory=dict)
    config: Path | None = None

    def all_paths(self) -> dict[str, Path]:
        paths = {"manifest": self.manifest}
        if self.evaluation is not None:
            paths["evaluation"] = self.evaluation
        for variant, p in self.external.items():
            paths[f"external[{variant}]"] = p
        for kind, p in self.metrics.items():
            paths[f"metrics[{kind}]"] = p
        if self.config is not None:
            paths["config"] = self.config
        return paths


@dataclass
class ReportBundle:
    summary_path: Path
    histogram_paths: dict[str, Path]


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _median_label_values(manifest: DatasetManifest, construct: str) -> list[float]:
    values: list[float] = []
    if construct == "nvi":
        for triple in manifest.segment_labels:
            if triple.construct == "nvi":
                values.append(float(sorted(triple.values)[1]))
    else:
        for fl in manifest.frame_labels:
            if construct in fl.ratings:
                values.append(float(sorted(fl.ratings[construct].values)[1]))
    return values


def _rating_histogram(values: list[float], construct: str, scale_max: float, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not values:
        raise EmptyDatasetError(f"no ratings found for construct {construct!r}")
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.hist(values, bins=20, range=(0, scale_max), color="#4878a8", edgecolor="white")
    ax.set_xlabel(f"{construct.replace('_', ' ')} rating (median of raters)")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def render_report(inputs: ReportInputs, out_dir: str | Path) -> ReportBundle:
    """Write the report bundle: a machine-readable summary plus the three
    rating-distribution histograms.

    The summary records every input file with its content hash, so each
    reported number is traceable to the files it was computed from.  No
    timestamps are embedded; identical inputs give identical bytes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    missing = [name for name, p in inputs.all_paths().items() if not p.exists()]
    if missing:
        raise ImmediacyError("missing report inputs: " + ", ".join(sorted(missing)))

    manifest = load_manifest(inputs.manifest)
    summary: dict = {
        "dataset": {
            "segments": {
                split: len(manifest.segments_in(split))
                for split in ("train", "validation", "external")
            },
            "teachers": len(manifest.teachers()),
            "frame_labels": len(manifest.frame_labels),
            "segment_labels": len(manifest.segment_labels),
            "scale_max": manifest.scale_max,
            "fps": manifest.fps,
        },
        "inputs": {
            name: {"path": str(p), "sha256": _sha256(p)}
            for name, p in inputs.all_paths().items()
        },
    }

    if inputs.evaluation is not None:
        evaluation = json.loads(inputs.evaluation.read_text())
        for key in ("gesture_r", "distance_r", "nvi_r", "icc_table", "median_fusion"):
            if key in evaluation:
                summary[key] = evaluation[key]
    if inputs.external:
        summary["external_validation"] = {
            variant: json.loads(p.read_text()) for variant, p in inputs.external.items()
        }
    if inputs.metrics:
        summary["training_metrics"] = {
            kind: json.loads(p.read_text()) for kind, p in inputs.metrics.items()
        }
    if inputs.config is not None:
        summary["config_hash"] = _sha256(inputs.config)

    histograms: dict[str, Path] = {}
    for construct in ("perceived_distance", "gesture_intensity", "nvi"):
        values = _median_label_values(manifest, construct)
        path = out_dir / f"ratings_{construct}.png"
        _rating_histogram(values, construct, manifest.scale_max, path)
        histograms[construct] = path

    summary["histograms"] = {c: str(p) for c, p in histograms.items()}
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return ReportBundle(summary_path=summary_path, histogram_paths=histograms)
