"""Per-frame feature records and the on-disk formats that carry them.

Frame features are the hand-off point between the perception/regression
stages and segment-level fusion: each frame contributes a gesture
intensity, a perceived distance, eight emotion confidences, and a
face-visibility flag.  Files produced here are versioned so extraction,
training, and evaluation can run as separate invocations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImmediacyError

#: Fixed emotion order used everywhere a confidence vector appears.
EMOTIONS = (
    "anger",
    "contempt",
    "disgust",
    "fear",
    "happiness",
    "neutral",
    "sadness",
    "surprise",
)

#: Flattened segment-vector order consumed by the immediacy perceptron.
FEATURE_ORDER = ("gesture", "distance") + EMOTIONS

FEATURE_FILE_VERSION = 1


@dataclass(frozen=True)
class FrameFeatures:
    """One frame's contribution to a segment feature vector."""

    frame_index: int
    gesture: float
    distance: float
    emotions: tuple[float, ...] | None  # None when no face was found
    face_visible: bool

    def __post_init__(self):
        if self.face_visible:
            if self.emotions is None or len(self.emotions) != len(EMOTIONS):
                raise ValueError("visible face requires 8 emotion confidences")
        elif self.emotions is not None:
            raise ValueError("emotions must be None when no face is visible")


def save_frame_features(features: list[FrameFeatures], path: str | Path) -> None:
    """Write a per-segment frame-feature file (npz, versioned layout)."""
    if not features:
        raise ValueError("no frame features to save")
    n = len(features)
    emotions = np.zeros((n, len(EMOTIONS)), dtype=np.float64)
    visible = np.zeros(n, dtype=bool)
    for i, f in enumerate(features):
        visible[i] = f.face_visible
        if f.face_visible:
            emotions[i] = f.emotions
    np.savez_compressed(
        Path(path),
        format_version=np.int64(FEATURE_FILE_VERSION),
        feature_order=np.array(FEATURE_ORDER),
        frame_index=np.array([f.frame_index for f in features], dtype=np.int64),
        gesture=np.array([f.gesture for f in features], dtype=np.float64),
        distance=np.array([f.distance for f in features], dtype=np.float64),
        emotions=emotions,
        face_visible=visible,
    )


def load_frame_features(path: str | Path) -> list[FrameFeatures]:
    """Read a frame-feature file back into FrameFeatures records."""
    with np.load(Path(path), allow_pickle=False) as npz:
        version = int(npz["format_version"])
        if version != FEATURE_FILE_VERSION:
            raise ImmediacyError(
                f"{path}: unsupported frame-feature file version {version}"
            )
        order = tuple(str(s) for s in npz["feature_order"])
        if order != FEATURE_ORDER:
            raise ImmediacyError(
                f"{path}: feature order {order} does not match {FEATURE_ORDER}"
            )
        out = []
        for i in range(npz["gesture"].shape[0]):
            visible = bool(npz["face_visible"][i])
            out.append(
                FrameFeatures(
                    frame_index=int(npz["frame_index"][i]),
                    gesture=float(npz["gesture"][i]),
                    distance=float(npz["distance"][i]),
                    emotions=tuple(float(v) for v in npz["emotions"][i])
                    if visible
                    else None,
                    face_visible=visible,
                )
            )
        return out


# -- immediacy score tables --------------------------------------------------

SCORE_TABLE_FIELDS = ("segment_id", "teacher_id", "video_id", "score")


@dataclass(frozen=True)
class ScoreRow:
    segment_id: str
    teacher_id: str
    video_id: str
    score: float


def write_score_table(rows: list[ScoreRow], path: str | Path) -> None:
    """Write per-segment immediacy scores as delimited text."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_TABLE_FIELDS)
        for row in rows:
            writer.writerow(
                [row.segment_id, row.teacher_id, row.video_id, repr(row.score)]
            )


def read_score_table(path: str | Path) -> list[ScoreRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != SCORE_TABLE_FIELDS:
            raise ImmediacyError(
                f"{path}: expected header {','.join(SCORE_TABLE_FIELDS)}"
            )
        return [
            ScoreRow(
                segment_id=seg, teacher_id=teacher, video_id=video, score=float(score)
            )
            for seg, teacher, video, score in reader
        ]
