"""Dataset schema: segment manifests, rating labels, and leakage-free splits.

A dataset lives in a single UTF-8 manifest file with one JSON record per
line.  The first record is a header carrying the rating-scale ceiling,
the frame rate, and the expected segment duration.  Segment records,
frame-level label records, and segment-level label records follow in any
order.  Label records may also live in separate files referenced from
the header (``label_files``, paths relative to the manifest).  The exact
field names are documented in ``docs/dataset-format.md`` and frozen by
golden-file tests.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ManifestError

FORMAT_VERSION = 1

CONSTRUCTS = ("gesture_intensity", "perceived_distance", "nvi")
FRAME_CONSTRUCTS = ("gesture_intensity", "perceived_distance")
SPLITS = ("train", "validation", "external")

#: Raw rating ceiling used when a dataset does not declare one.  Large
#: enough that a disagreement threshold of 1600 raw units is meaningful.
DEFAULT_SCALE_MAX = 10000.0
DEFAULT_SEGMENT_DURATION = 30.0


@dataclass(frozen=True)
class SegmentRecord:
    """One scored video clip and its split assignment."""

    segment_id: str
    teacher_id: str
    video_id: str
    start: float
    duration: float
    source_path: str
    split: str

    def __post_init__(self):
        if self.start < 0:
            raise ValueError(f"segment {self.segment_id}: start must be >= 0")
        if self.duration <= 0:
            raise ValueError(f"segment {self.segment_id}: duration must be > 0")
        if self.split not in SPLITS:
            raise ValueError(
                f"segment {self.segment_id}: unknown split {self.split!r}"
            )


@dataclass(frozen=True)
class RatingTriple:
    """Three trained-rater values for one item on one construct."""

    item_id: str
    construct: str
    values: tuple[float, float, float]
    rater_ids: tuple[str, str, str]

    def __post_init__(self):
        if self.construct not in CONSTRUCTS:
            raise ValueError(f"unknown construct {self.construct!r}")
        if len(self.values) != 3:
            raise ValueError(f"item {self.item_id}: need exactly 3 values")
        if len(self.rater_ids) != 3 or len(set(self.rater_ids)) != 3:
            raise ValueError(f"item {self.item_id}: rater_ids must be 3 distinct ids")


@dataclass(frozen=True)
class FrameLabelRecord:
    """Rating triples for one labeled frame of a segment."""

    frame_id: str
    segment_id: str
    frame_index: int
    ratings: dict[str, RatingTriple]

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame {self.frame_id}: frame_index must be >= 0")
        if not self.ratings:
            raise ValueError(f"frame {self.frame_id}: no ratings")
        for construct in self.ratings:
            if construct not in FRAME_CONSTRUCTS:
                raise ValueError(
                    f"frame {self.frame_id}: construct {construct!r} is not "
                    f"frame-level"
                )


@dataclass
class DatasetManifest:
    """A validated dataset: header values, segments, and labels."""

    scale_max: float = DEFAULT_SCALE_MAX
    fps: float = 10.0
    segment_duration: float | None = DEFAULT_SEGMENT_DURATION
    segments: list[SegmentRecord] = field(default_factory=list)
    frame_labels: list[FrameLabelRecord] = field(default_factory=list)
    segment_labels: list[RatingTriple] = field(default_factory=list)

    # -- views -----------------------------------------------------------

    def segment_by_id(self) -> dict[str, SegmentRecord]:
        return {s.segment_id: s for s in self.segments}

    def teachers(self, split: str | None = None) -> set[str]:
        return {
            s.teacher_id
            for s in self.segments
            if split is None or s.split == split
        }

    def segments_in(self, split: str) -> list[SegmentRecord]:
        return [s for s in self.segments if s.split == split]

    def frames_per_segment(self) -> int | None:
        """Nominal frame count implied by duration and fps, if fixed."""
        if self.segment_duration is None:
            return None
        return int(round(self.segment_duration * self.fps))

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        """Check all cross-record invariants; raise ManifestError on failure."""
        seen: set[str] = set()
        for seg in self.segments:
            if seg.segment_id in seen:
                raise ManifestError(f"duplicate segment_id {seg.segment_id!r}")
            seen.add(seg.segment_id)
            if (
                self.segment_duration is not None
                and seg.duration != self.segment_duration
            ):
                raise ManifestError(
                    f"segment {seg.segment_id!r}: duration {seg.duration} does "
                    f"not match declared segment_duration {self.segment_duration}"
                )

        leaked = self.teachers("train") & self.teachers("validation")
        if leaked:
            raise ManifestError(
                "teacher(s) appear in both train and validation splits: "
                + ", ".join(sorted(leaked))
            )

        n_frames = self.frames_per_segment()
        for fl in self.frame_labels:
            if fl.segment_id not in seen:
                raise ManifestError(
                    f"frame label {fl.frame_id!r} references unknown segment "
                    f"{fl.segment_id!r}"
                )
            if n_frames is not None and fl.frame_index >= n_frames:
                raise ManifestError(
                    f"frame label {fl.frame_id!r}: frame_index {fl.frame_index} "
                    f"outside segment frame count {n_frames}"
                )
            for triple in fl.ratings.values():
                self._check_values(triple)

        for triple in self.segment_labels:
            if triple.item_id not in seen:
                raise ManifestError(
                    f"segment label for construct {triple.construct!r} references "
                    f"unknown segment {triple.item_id!r}"
                )
            self._check_values(triple)

    def _check_values(self, triple: RatingTriple) -> None:
        for v in triple.values:
            if not (0.0 <= v <= self.scale_max):
                raise ManifestError(
                    f"item {triple.item_id!r}: rating {v} outside "
                    f"[0, {self.scale_max}]"
                )


# -- serialization ---------------------------------------------------------


def _triple_to_obj(t: RatingTriple) -> dict:
    return {"values": list(t.values), "rater_ids": list(t.rater_ids)}


def _triple_from_obj(item_id: str, construct: str, obj: dict, line: int) -> RatingTriple:
    try:
        return RatingTriple(
            item_id=item_id,
            construct=construct,
            values=tuple(float(v) for v in obj["values"]),
            rater_ids=tuple(str(r) for r in obj["rater_ids"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad rating triple for {item_id!r}: {exc}", line) from exc


def _parse_record(obj: dict, manifest: DatasetManifest, line: int) -> None:
    kind = obj.get("record")
    try:
        if kind == "segment":
            manifest.segments.append(
                SegmentRecord(
                    segment_id=str(obj["segment_id"]),
                    teacher_id=str(obj["teacher_id"]),
                    video_id=str(obj["video_id"]),
                    start=float(obj["start"]),
                    duration=float(obj["duration"]),
                    source_path=str(obj["source_path"]),
                    split=str(obj["split"]),
                )
            )
        elif kind == "frame_label":
            frame_id = str(obj["frame_id"])
            ratings = {
                construct: _triple_from_obj(frame_id, construct, body, line)
                for construct, body in obj["ratings"].items()
            }
            manifest.frame_labels.append(
                FrameLabelRecord(
                    frame_id=frame_id,
                    segment_id=str(obj["segment_id"]),
                    frame_index=int(obj["frame_index"]),
                    ratings=ratings,
                )
            )
        elif kind == "segment_label":
            manifest.segment_labels.append(
                _triple_from_obj(str(obj["item_id"]), str(obj["construct"]), obj, line)
            )
        else:
            raise ManifestError(f"unknown record type {kind!r}", line)
    except ManifestError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"bad {kind} record: {exc}", line) from exc


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a line-delimited manifest file.

    Raises:
        ManifestError: on parse failure (with the 1-based line number) or
            any schema invariant violation (naming the offending teacher,
            segment, or label).
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    records: list[tuple[int, dict]] = []
    for i, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"invalid JSON: {exc.msg}", i) from exc
        if not isinstance(obj, dict):
            raise ManifestError("record must be a JSON object", i)
        records.append((i, obj))

    if not records:
        raise ManifestError("empty manifest")
    first_line, header = records[0]
    if header.get("record") != "header":
        raise ManifestError("first record must be the header", first_line)

    manifest = DatasetManifest(
        scale_max=float(header.get("scale_max", DEFAULT_SCALE_MAX)),
        fps=float(header.get("fps", 10.0)),
        segment_duration=(
            None
            if header.get("segment_duration", DEFAULT_SEGMENT_DURATION) is None
            else float(header.get("segment_duration", DEFAULT_SEGMENT_DURATION))
        ),
    )
    if manifest.scale_max <= 0:
        raise ManifestError("scale_max must be positive", first_line)
    if manifest.fps <= 0:
        raise ManifestError("fps must be positive", first_line)

    for line, obj in records[1:]:
        _parse_record(obj, manifest, line)

    for rel in header.get("label_files", []):
        label_path = path.parent / rel
        if not label_path.exists():
            raise ManifestError(f"referenced label file not found: {rel}")
        for i, raw in enumerate(
            label_path.read_text(encoding="utf-8").splitlines(), start=1
        ):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{rel}: invalid JSON: {exc.msg}", i) from exc
            if obj.get("record") not in ("frame_label", "segment_label"):
                raise ManifestError(
                    f"{rel}: only label records allowed in label files", i
                )
            _parse_record(obj, manifest, i)

    manifest.validate()
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Serialize a manifest to its line-delimited form (labels embedded)."""
    manifest.validate()
    out: list[str] = []
    header = {
        "record": "header",
        "format_version": FORMAT_VERSION,
        "scale_max": manifest.scale_max,
        "fps": manifest.fps,
        "segment_duration": manifest.segment_duration,
    }
    out.append(json.dumps(header, sort_keys=True))
    for seg in manifest.segments:
        out.append(
            json.dumps(
                {
                    "record": "segment",
                    "segment_id": seg.segment_id,
                    "teacher_id": seg.teacher_id,
                    "video_id": seg.video_id,
                    "start": seg.start,
                    "duration": seg.duration,
                    "source_path": seg.source_path,
                    "split": seg.split,
                },
                sort_keys=True,
            )
        )
    for fl in manifest.frame_labels:
        out.append(
            json.dumps(
                {
                    "record": "frame_label",
                    "frame_id": fl.frame_id,
                    "segment_id": fl.segment_id,
                    "frame_index": fl.frame_index,
                    "ratings": {
                        c: _triple_to_obj(t) for c, t in sorted(fl.ratings.items())
                    },
                },
                sort_keys=True,
            )
        )
    for t in manifest.segment_labels:
        out.append(
            json.dumps(
                {
                    "record": "segment_label",
                    "item_id": t.item_id,
                    "construct": t.construct,
                    "values": list(t.values),
                    "rater_ids": list(t.rater_ids),
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def split_by_teacher(
    segments: Sequence[SegmentRecord],
    validation_teachers: Iterable[str],
) -> tuple[list[SegmentRecord], list[SegmentRecord]]:
    """Partition segments into train/validation by teacher identity.

    Every segment of a validation teacher lands in the validation list and
    all remaining segments in the train list, so no teacher can appear on
    both sides.  Returned records carry the updated ``split`` field.

    Raises:
        ValueError: a requested validation teacher has no segments.
    """
    validation_teachers = set(validation_teachers)
    present = {s.teacher_id for s in segments}
    unknown = validation_teachers - present
    if unknown:
        raise ValueError(
            "validation teacher(s) not present in segments: "
            + ", ".join(sorted(unknown))
        )
    train: list[SegmentRecord] = []
    validation: list[SegmentRecord] = []
    for seg in segments:
        if seg.teacher_id in validation_teachers:
            validation.append(replace(seg, split="validation"))
        else:
            train.append(replace(seg, split="train"))
    return train, validation
