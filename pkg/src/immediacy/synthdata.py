"""Deterministic synthetic generators used as ground-truth oracles.

Two families:

* Renderable classroom scenes.  A scene is a short blob-world clip (one
  teacher, optional students and desks) whose gesture, perceived
  distance, and emotion labels follow fixed monotone laws of the scene
  parameters, so learned models can be checked against known truth.
  Scenes render with the reserved colors from ``perception``, which makes
  the synthetic perception backends an exact inverse of the renderer.

* Simulated rater panels with declared variance components
  (rating = truth + rater bias + noise), the oracle for the reliability
  statistics.

Everything is pure given a seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    DatasetManifest,
    FrameLabelRecord,
    RatingTriple,
    SegmentRecord,
    split_by_teacher,
)
from .evaluation import ExternalMeasures, MEASURE_NAMES, RaterMatrix
from .features import EMOTIONS
from .perception import (
    BACKGROUND_COLOR,
    DESK_COLOR,
    FACE_BLUE,
    FACE_GREENS,
    FACE_RED,
    SCENE_FILE_VERSION,
    STUDENT_COLOR,
    TEACHER_BLUE_RANGE,
    TEACHER_GREEN,
    TEACHER_RED,
)

# Label laws.  Gesture grows affinely with arm spread; perceived distance
# grows with the teacher-student gap and jumps when desks sit between
# them.  All labels live in [0, 1] and scale by the dataset's scale_max.
GESTURE_LAW = (0.15, 0.70)  # intercept, slope on arm_spread
DISTANCE_LAW = (0.12, 0.68, 0.12)  # intercept, slope on gap01, desk bump
GAP_RANGE = (0.15, 0.70)  # euclidean teacher-student gap mapped to [0, 1]

# Weights of the synthetic immediacy truth over segment-mean quantities:
# more gesturing, less distance, more happiness, more face time.
NVI_WEIGHTS = {"gesture": 0.45, "inv_distance": 0.25, "happiness": 0.20, "visibility": 0.10}


@dataclass(frozen=True)
class SceneParams:
    """Full description of one synthetic classroom scene."""

    seed: int
    n_frames: int
    teacher_path: tuple[tuple[float, float], ...]  # per-frame (x, y), fractions
    arm_spread: tuple[float, ...]  # per-frame, [0, 1]
    students: tuple[tuple[float, float], ...] = ()
    emotion_tags: tuple[str | None, ...] = ()  # per-frame; None = face hidden
    desks: tuple[tuple[float, float], ...] = ()
    frame_size: tuple[int, int] = (96, 96)  # H, W
    fps: float = 5.0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be >= 1")
        for name, seq in (
            ("teacher_path", self.teacher_path),
            ("arm_spread", self.arm_spread),
            ("emotion_tags", self.emotion_tags),
        ):
            if len(seq) != self.n_frames:
                raise ValueError(f"{name} must have one entry per frame")
        if any(not (0.0 <= s <= 1.0) for s in self.arm_spread):
            raise ValueError("arm_spread values must lie in [0, 1]")
        for tag in self.emotion_tags:
            if tag is not None and tag not in EMOTIONS:
                raise ValueError(f"unknown emotion tag {tag!r}")
        for x, y in self.teacher_path + self.students + self.desks:
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError("positions must be fractional coordinates in [0, 1]")


@dataclass
class Scene:
    """Rendered frames plus every ground-truth quantity of the generator."""

    params: SceneParams
    rgb: np.ndarray  # N x H x W x 3 float32
    teacher_mask: np.ndarray  # N x H x W uint8
    student_mask: np.ndarray  # N x H x W uint8
    depth_raw: np.ndarray  # N x H x W float64 (pointwise law output)
    gesture01: np.ndarray  # N
    distance01: np.ndarray  # N
    emotion_index: np.ndarray  # N, -1 where no face
    face_visible: np.ndarray  # N bool
    init_box: tuple[int, int, int, int] = (0, 0, 1, 1)

    @property
    def fps(self) -> float:
        return self.params.fps

    def mean_emotion_share(self, emotion: str) -> float:
        """Sum of per-frame shares for one emotion divided by total frames."""
        idx = EMOTIONS.index(emotion)
        hits = np.sum(self.emotion_index == idx)
        return float(hits) / self.params.n_frames

    def nvi01(self) -> float:
        """Synthetic immediacy truth for this scene, in [0, 1]."""
        w = NVI_WEIGHTS
        visibility = float(self.face_visible.mean())
        value = (
            w["gesture"] * float(self.gesture01.mean())
            + w["inv_distance"] * (1.0 - float(self.distance01.mean()))
            + w["happiness"] * self.mean_emotion_share("happiness")
            + w["visibility"] * visibility
        )
        return float(np.clip(value, 0.0, 1.0))


def _fill_ellipse(label: np.ndarray, cx: float, cy: float, rx: float, ry: float, value: int) -> None:
    h, w = label.shape
    ys, xs = np.ogrid[:h, :w]
    inside = ((xs - cx) / max(rx, 1e-9)) ** 2 + ((ys - cy) / max(ry, 1e-9)) ** 2 <= 1.0
    label[inside] = value


def _fill_rect(label: np.ndarray, cx: float, cy: float, hx: float, hy: float, value: int) -> None:
    h, w = label.shape
    x0 = max(0, int(round(cx - hx)))
    x1 = min(w, int(round(cx + hx)) + 1)
    y0 = max(0, int(round(cy - hy)))
    y1 = min(h, int(round(cy + hy)) + 1)
    if x1 > x0 and y1 > y0:
        label[y0:y1, x0:x1] = value


_BG, _DESK, _STUDENT, _TEACHER, _FACE = 0, 1, 2, 3, 4


def _teacher_gap01(pos: tuple[float, float], students: tuple[tuple[float, float], ...]) -> float:
    if not students:
        return 1.0
    gap = min(math.dist(pos, s) for s in students)
    lo, span = GAP_RANGE
    return float(np.clip((gap - lo) / span, 0.0, 1.0))


def generate_scene(params: SceneParams) -> Scene:
    """Render a scene and compute its ground-truth labels.

    Bit-deterministic: the same params always produce identical output
    (rendering uses no randomness at all; ``params.seed`` only names the
    scene for provenance).
    """
    h, w = params.frame_size
    n = params.n_frames
    rgb = np.zeros((n, h, w, 3), dtype=np.float32)
    teacher_masks = np.zeros((n, h, w), dtype=np.uint8)
    student_masks = np.zeros((n, h, w), dtype=np.uint8)
    gesture01 = np.zeros(n)
    distance01 = np.zeros(n)
    emotion_index = np.full(n, -1, dtype=np.int64)
    face_visible = np.zeros(n, dtype=bool)

    body_rx, body_ry = 0.055 * w, 0.14 * h
    arm_hy = 0.025 * h
    student_r = 0.06 * min(h, w)
    desk_hx, desk_hy = 0.09 * w, 0.035 * h
    face_half = max(1.0, 0.025 * min(h, w))

    has_desk = 1.0 if params.desks else 0.0

    for i in range(n):
        label = np.zeros((h, w), dtype=np.int8)
        for dx, dy in params.desks:
            _fill_rect(label, dx * w, dy * h, desk_hx, desk_hy, _DESK)
        for sx, sy in params.students:
            _fill_ellipse(label, sx * w, sy * h, student_r, student_r, _STUDENT)

        tx, ty = params.teacher_path[i]
        cx, cy = tx * w, ty * h
        spread = params.arm_spread[i]
        arm_len = (0.04 + 0.16 * spread) * w
        _fill_rect(label, cx - body_rx - arm_len / 2, cy - 0.05 * h, arm_len / 2, arm_hy, _TEACHER)
        _fill_rect(label, cx + body_rx + arm_len / 2, cy - 0.05 * h, arm_len / 2, arm_hy, _TEACHER)
        _fill_ellipse(label, cx, cy, body_rx, body_ry, _TEACHER)

        tag = params.emotion_tags[i]
        if tag is not None:
            _fill_rect(label, cx, cy - 0.09 * h, face_half, face_half, _FACE)
            emotion_index[i] = EMOTIONS.index(tag)
            face_visible[i] = True

        gap01 = _teacher_gap01((tx, ty), params.students)
        teacher_blue = TEACHER_BLUE_RANGE[0] + (
            TEACHER_BLUE_RANGE[1] - TEACHER_BLUE_RANGE[0]
        ) * gap01

        frame = np.empty((h, w, 3), dtype=np.float32)
        frame[:] = BACKGROUND_COLOR
        frame[label == _DESK] = DESK_COLOR
        frame[label == _STUDENT] = STUDENT_COLOR
        frame[label == _TEACHER] = (TEACHER_RED, TEACHER_GREEN, teacher_blue)
        if tag is not None:
            frame[label == _FACE] = (FACE_RED, FACE_GREENS[emotion_index[i]], FACE_BLUE)

        rgb[i] = frame
        teacher_masks[i] = (label >= _TEACHER).astype(np.uint8)
        student_masks[i] = (label == _STUDENT).astype(np.uint8)
        gesture01[i] = GESTURE_LAW[0] + GESTURE_LAW[1] * spread
        distance01[i] = np.clip(
            DISTANCE_LAW[0] + DISTANCE_LAW[1] * gap01 + DISTANCE_LAW[2] * has_desk,
            0.0,
            1.0,
        )

    depth_raw = rgb[:, :, :, 2].astype(np.float64)

    ys, xs = np.nonzero(teacher_masks[0])
    init_box = (
        max(0, int(xs.min()) - 1),
        max(0, int(ys.min()) - 1),
        min(w, int(xs.max()) + 2),
        min(h, int(ys.max()) + 2),
    )
    return Scene(
        params=params,
        rgb=rgb,
        teacher_mask=teacher_masks,
        student_mask=student_masks,
        depth_raw=depth_raw,
        gesture01=gesture01,
        distance01=distance01,
        emotion_index=emotion_index,
        face_visible=face_visible,
        init_box=init_box,
    )


def save_scene(scene: Scene, path: str | Path) -> None:
    """Write a scene as an npz segment source readable by ``open_video``."""
    np.savez_compressed(
        Path(path),
        format_version=np.int64(SCENE_FILE_VERSION),
        fps=np.float64(scene.fps),
        rgb=scene.rgb,
        init_box=np.array(scene.init_box, dtype=np.int64),
        gt_teacher_mask=scene.teacher_mask,
        gt_student_mask=scene.student_mask,
        gt_depth_raw=scene.depth_raw,
        gt_gesture01=scene.gesture01,
        gt_distance01=scene.distance01,
        gt_emotion_index=scene.emotion_index,
        gt_face_visible=scene.face_visible,
    )


def random_scene_params(
    seed: int,
    n_frames: int = 12,
    frame_size: tuple[int, int] = (96, 96),
    fps: float = 5.0,
    face_visible_prob: float = 0.8,
    desk_prob: float = 0.5,
) -> SceneParams:
    """Draw a plausible classroom layout with per-frame variation."""
    rng = np.random.default_rng(seed)
    base_x = rng.uniform(0.25, 0.75)
    base_y = rng.uniform(0.16, 0.60)
    path = tuple(
        (
            float(np.clip(base_x + rng.normal(0, 0.02), 0.12, 0.88)),
            float(np.clip(base_y + rng.normal(0, 0.015), 0.16, 0.62)),
        )
        for _ in range(n_frames)
    )
    spread = tuple(float(v) for v in rng.uniform(0.0, 1.0, size=n_frames))
    n_students = int(rng.integers(2, 5))
    students = tuple(
        (float(rng.uniform(0.15, 0.85)), float(rng.uniform(0.80, 0.90)))
        for _ in range(n_students)
    )
    desks: tuple[tuple[float, float], ...] = ()
    if rng.random() < desk_prob:
        desks = tuple(
            (float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.68, 0.74)))
            for _ in range(int(rng.integers(1, 3)))
        )
    dominant = EMOTIONS[int(rng.integers(0, len(EMOTIONS)))]
    tags = tuple(
        (dominant if rng.random() < 0.75 else EMOTIONS[int(rng.integers(0, len(EMOTIONS)))])
        if rng.random() < face_visible_prob
        else None
        for _ in range(n_frames)
    )
    return SceneParams(
        seed=seed,
        n_frames=n_frames,
        teacher_path=path,
        arm_spread=spread,
        students=students,
        emotion_tags=tags,
        desks=desks,
        frame_size=frame_size,
        fps=fps,
    )


# -- simulated rater panels ---------------------------------------------------


@dataclass(frozen=True)
class RaterPanelParams:
    """Variance components of a simulated rater panel."""

    n_items: int
    true_score_variance: float
    rater_bias_variance: float
    noise_variance: float
    k_raters: int = 3
    seed: int = 0
    scale_max: float = 10000.0

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError("n_items must be >= 1")
        if self.k_raters < 2:
            raise ValueError("k_raters must be >= 2")
        for name in ("true_score_variance", "rater_bias_variance", "noise_variance"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def expected_icc2k(self) -> float:
        """Population ICC(2,k) implied by the variance components."""
        s2 = self.true_score_variance
        denom = s2 + (self.rater_bias_variance + self.noise_variance) / self.k_raters
        return s2 / denom if denom > 0 else float("nan")


def draw_true_scores(params: RaterPanelParams) -> np.ndarray:
    """True item scores centered mid-scale with the declared variance."""
    rng = np.random.default_rng([params.seed, 0])
    return rng.normal(
        params.scale_max / 2.0,
        math.sqrt(params.true_score_variance),
        size=params.n_items,
    )


def simulate_raters(truth: np.ndarray | list[float], params: RaterPanelParams) -> RaterMatrix:
    """Simulate k raters scoring the given true values.

    rating(i, j) = truth_i + bias_j + noise_ij, clipped to [0, scale_max];
    biases and noise come from seeded zero-mean normals with the declared
    variances.  Clipping slightly biases extreme ratings; Monte Carlo
    tolerances in tests account for it.
    """
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (params.n_items,):
        raise ValueError(f"expected {params.n_items} true scores, got {truth.shape}")
    rng = np.random.default_rng([params.seed, 1])
    biases = rng.normal(0.0, math.sqrt(params.rater_bias_variance), size=params.k_raters)
    noise = rng.normal(
        0.0, math.sqrt(params.noise_variance), size=(params.n_items, params.k_raters)
    )
    grid = np.clip(truth[:, None] + biases[None, :] + noise, 0.0, params.scale_max)
    return RaterMatrix(
        item_ids=[f"item{i:04d}" for i in range(params.n_items)],
        columns={f"Rater{j}": grid[:, j].copy() for j in range(params.k_raters)},
    )


def rating_triples(
    truth01: np.ndarray | list[float],
    item_ids: list[str],
    construct: str,
    scale_max: float,
    seed: int,
    noise_sd: float = 450.0,
    bias_sd: float = 150.0,
    rater_ids: tuple[str, str, str] = ("r0", "r1", "r2"),
) -> list[RatingTriple]:
    """Three-rater labels around scaled truth, for synthetic manifests."""
    truth01 = np.asarray(truth01, dtype=np.float64)
    params = RaterPanelParams(
        n_items=len(item_ids),
        true_score_variance=0.0,
        rater_bias_variance=bias_sd**2,
        noise_variance=noise_sd**2,
        k_raters=3,
        seed=seed,
        scale_max=scale_max,
    )
    matrix = simulate_raters(truth01 * scale_max, params)
    grid = matrix.grid()
    return [
        RatingTriple(
            item_id=item_ids[i],
            construct=construct,
            values=tuple(float(v) for v in grid[i]),
            rater_ids=rater_ids,
        )
        for i in range(len(item_ids))
    ]


def simulate_external_measures(
    keys: list[str],
    base_scores: np.ndarray | list[float],
    rho: float,
    seed: int,
    level: str = "teacher",
) -> ExternalMeasures:
    """Questionnaire-style measures with a known population correlation.

    Each measure column is rho * z(score) + sqrt(1 - rho^2) * noise,
    rescaled to a 1-5 style range, so the expected Pearson correlation
    against the base scores is rho for every measure.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [-1, 1]")
    scores = np.asarray(base_scores, dtype=np.float64)
    if scores.shape != (len(keys),):
        raise ValueError("one base score per key required")
    sd = scores.std()
    z = (scores - scores.mean()) / sd if sd > 0 else np.zeros_like(scores)
    rng = np.random.default_rng(seed)
    rows: dict[str, dict[str, float]] = {}
    columns: dict[str, np.ndarray] = {}
    for m, name in enumerate(MEASURE_NAMES):
        noise = rng.normal(0.0, 1.0, size=len(keys))
        latent = rho * z + math.sqrt(max(0.0, 1.0 - rho * rho)) * noise
        columns[name] = 3.0 + 0.8 * latent
    for i, key in enumerate(keys):
        rows[key] = {name: float(columns[name][i]) for name in MEASURE_NAMES}
    return ExternalMeasures(level=level, rows=rows)


# -- full synthetic datasets --------------------------------------------------


@dataclass
class SyntheticDataset:
    """Everything a generated dataset run leaves on disk."""

    manifest: DatasetManifest
    manifest_path: Path
    scene_paths: dict[str, Path]
    scenes: dict[str, Scene] = field(default_factory=dict)


def build_synthetic_dataset(
    out_dir: str | Path,
    n_teachers: int = 6,
    segments_per_teacher: int = 2,
    n_validation_teachers: int = 2,
    frames_per_segment: int = 10,
    frame_size: tuple[int, int] = (64, 64),
    fps: float = 5.0,
    scale_max: float = 10000.0,
    seed: int = 0,
    label_every_frame: bool = True,
    keep_scenes: bool = False,
) -> SyntheticDataset:
    """Generate scenes, labels, and a manifest under ``out_dir``.

    Layout: ``out_dir/manifest.jsonl`` plus one scene file per segment in
    ``out_dir/scenes/``.  Emits the same manifest format real-data runs
    use, so the whole pipeline downstream is format-identical.
    """
    out_dir = Path(out_dir)
    scene_dir = out_dir / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    duration = frames_per_segment / fps
    manifest = DatasetManifest(
        scale_max=scale_max, fps=fps, segment_duration=duration
    )
    dataset = SyntheticDataset(
        manifest=manifest, manifest_path=out_dir / "manifest.jsonl", scene_paths={}
    )

    segments: list[SegmentRecord] = []
    for t in range(n_teachers):
        teacher_id = f"T{t:02d}"
        for s in range(segments_per_teacher):
            segment_id = f"{teacher_id}_seg{s}"
            scene_seed = int(rng.integers(0, 2**31))
            params = random_scene_params(
                seed=scene_seed,
                n_frames=frames_per_segment,
                frame_size=frame_size,
                fps=fps,
            )
            scene = generate_scene(params)
            scene_path = scene_dir / f"{segment_id}.npz"
            save_scene(scene, scene_path)
            dataset.scene_paths[segment_id] = scene_path
            if keep_scenes:
                dataset.scenes[segment_id] = scene

            segments.append(
                SegmentRecord(
                    segment_id=segment_id,
                    teacher_id=teacher_id,
                    video_id=f"{teacher_id}_video",
                    start=s * duration,
                    duration=duration,
                    source_path=str(Path("scenes") / scene_path.name),
                    split="train",
                )
            )

            if label_every_frame:
                item_ids = [
                    f"{segment_id}_f{i:03d}" for i in range(frames_per_segment)
                ]
                gesture_triples = rating_triples(
                    scene.gesture01,
                    item_ids,
                    "gesture_intensity",
                    scale_max,
                    seed=scene_seed + 11,
                )
                distance_triples = rating_triples(
                    scene.distance01,
                    item_ids,
                    "perceived_distance",
                    scale_max,
                    seed=scene_seed + 13,
                )
                for i in range(frames_per_segment):
                    manifest.frame_labels.append(
                        FrameLabelRecord(
                            frame_id=item_ids[i],
                            segment_id=segment_id,
                            frame_index=i,
                            ratings={
                                "gesture_intensity": gesture_triples[i],
                                "perceived_distance": distance_triples[i],
                            },
                        )
                    )

            manifest.segment_labels.extend(
                rating_triples(
                    [scene.nvi01()],
                    [segment_id],
                    "nvi",
                    scale_max,
                    seed=scene_seed + 17,
                    noise_sd=350.0,
                )
            )

    teacher_ids = sorted({s.teacher_id for s in segments})
    validation_teachers = set(teacher_ids[:n_validation_teachers])
    train, validation = split_by_teacher(segments, validation_teachers)
    manifest.segments = train + validation
    manifest.validate()

    from .data import save_manifest

    save_manifest(manifest, dataset.manifest_path)
    return dataset
