"""Perception stages: teacher tracking/segmentation, depth, facial emotion.

Each stage is defined by a small backend protocol so the concrete models
are swappable.  The package ships one deterministic synthetic backend per
stage; real trackers, depth estimators, and emotion recognizers plug in
through ``register_backend`` with the same contracts.

The synthetic world is color-coded: every rendered object carries a
reserved color, so the synthetic backends can invert a rendered frame
exactly (segmentation by color identity, depth from the blue channel,
emotion from the face-patch color).  The scene generator in
``synthdata`` renders with these same constants, which is what makes the
synthetic backends the generator's inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Protocol

import numpy as np

from .errors import ConfigError, ImmediacyError, StageError
from .features import EMOTIONS

OBSERVATION_FILE_VERSION = 1
SCENE_FILE_VERSION = 1

# -- synthetic world color code (float RGB in [0, 1]) -----------------------
#
# Depth law: raw depth = blue channel.  Background is the far wall,
# students sit nearest the camera, and the teacher's blue value encodes
# how far along the room axis they stand.  Face patches share the
# students' blue so the per-frame depth extremes stay anchored.

BACKGROUND_COLOR = (0.06, 0.06, 0.95)
STUDENT_COLOR = (0.15, 0.80, 0.05)
DESK_COLOR = (0.55, 0.55, 0.45)
TEACHER_RED = 0.85
TEACHER_GREEN = 0.30
TEACHER_BLUE_RANGE = (0.15, 0.85)
FACE_RED = 1.0
FACE_BLUE = 0.05
#: Green value of the face patch for emotion index k.
FACE_GREENS = tuple(0.10 + 0.10 * k for k in range(len(EMOTIONS)))

_TEACHER_RED_MIN = 0.82  # covers teacher body (0.85) and face patch (1.0)
_FACE_RED_MIN = 0.99


@dataclass(frozen=True)
class Frame:
    """A decoded video frame: index plus H x W x 3 RGB in [0, 1]."""

    index: int
    rgb: np.ndarray


@dataclass(frozen=True)
class TrackInit:
    """Manually identified teacher region in the first frame."""

    region: tuple[int, int, int, int]  # x0, y0, x1, y1 in pixels
    frame_index: int = 0

    def __post_init__(self):
        if self.frame_index != 0:
            raise ValueError("tracking must be initialized on the first frame")
        x0, y0, x1, y1 = self.region
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"init region {self.region} has no area")

    def validate_bounds(self, height: int, width: int) -> None:
        x0, y0, x1, y1 = self.region
        if x0 < 0 or y0 < 0 or x1 > width or y1 > height:
            raise ValueError(
                f"init region {self.region} outside {width}x{height} frame"
            )


@dataclass(frozen=True)
class FrameObservation:
    """Raw per-frame observations produced by the perception stages."""

    frame_index: int
    rgb: np.ndarray  # H x W x 3, [0, 1]
    teacher_mask: np.ndarray  # H x W, {0, 1}
    student_mask: np.ndarray  # H x W, {0, 1}
    depth: np.ndarray  # H x W, [0, 1]
    emotions: np.ndarray | None  # 8 confidences in EMOTIONS order, or None

    def __post_init__(self):
        h, w = self.teacher_mask.shape
        if self.rgb.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ValueError("observation arrays disagree on frame size")
        for name, mask in (("teacher", self.teacher_mask), ("student", self.student_mask)):
            if not np.isin(mask, (0, 1)).all():
                raise ValueError(f"{name}_mask must be {{0,1}}-valued")
        if np.any((self.teacher_mask > 0) & (self.student_mask > 0)):
            raise ValueError("teacher and student masks overlap")
        if self.depth.min() < 0.0 or self.depth.max() > 1.0:
            raise ValueError("depth must lie in [0, 1]")
        if self.emotions is not None:
            e = np.asarray(self.emotions, dtype=np.float64)
            if e.shape != (len(EMOTIONS),):
                raise ValueError(f"expected {len(EMOTIONS)} emotion confidences")
            if e.min() < 0.0 or abs(float(e.sum()) - 1.0) > 1e-6:
                raise ValueError("emotion confidences must be >= 0 and sum to 1")

    @property
    def face_visible(self) -> bool:
        return self.emotions is not None


# -- video sources -----------------------------------------------------------


class VideoSource(Protocol):
    """Frame iterator with fps metadata."""

    @property
    def fps(self) -> float: ...

    def __len__(self) -> int: ...

    def frames(self) -> Iterator[Frame]: ...


class ArrayVideoSource:
    """In-memory frames, mostly for tests and synthetic scenes."""

    def __init__(self, rgb: np.ndarray, fps: float):
        if rgb.ndim != 4 or rgb.shape[-1] != 3:
            raise ValueError("expected an N x H x W x 3 frame stack")
        self._rgb = rgb.astype(np.float32, copy=False)
        self._fps = float(fps)

    @property
    def fps(self) -> float:
        return self._fps

    def __len__(self) -> int:
        return self._rgb.shape[0]

    def frames(self) -> Iterator[Frame]:
        for i in range(len(self)):
            yield Frame(index=i, rgb=self._rgb[i])


class SceneVideoSource(ArrayVideoSource):
    """Synthetic scene file: frames plus the embedded teacher init box.

    Ground-truth arrays stay available under ``ground_truth`` for
    oracle-style tests; the perception stages never read them.
    """

    def __init__(self, path: str | Path):
        path = Path(path)
        with np.load(path, allow_pickle=False) as npz:
            if int(npz["format_version"]) != SCENE_FILE_VERSION:
                raise ImmediacyError(f"{path}: unsupported scene file version")
            super().__init__(npz["rgb"], float(npz["fps"]))
            self.init_box = tuple(int(v) for v in npz["init_box"])
            self.ground_truth = {
                key[3:]: npz[key] for key in npz.files if key.startswith("gt_")
            }
        self.path = path

    @property
    def init(self) -> TrackInit:
        return TrackInit(region=self.init_box)


class VideoFileSource:
    """Real video files decoded through OpenCV; frames converted to RGB."""

    def __init__(self, path: str | Path):
        try:
            import cv2
        except ImportError as exc:  # pragma: no cover - cv2 ships in the env
            raise ImmediacyError("opencv-python is required for video files") from exc
        self._cv2 = cv2
        self.path = Path(path)
        cap = cv2.VideoCapture(str(self.path))
        if not cap.isOpened():
            raise ImmediacyError(f"cannot open video file {self.path}")
        self._fps = float(cap.get(cv2.CAP_PROP_FPS)) or 25.0
        self._n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        cap.release()

    @property
    def fps(self) -> float:
        return self._fps

    def __len__(self) -> int:
        return self._n

    def frames(self) -> Iterator[Frame]:
        cap = self._cv2.VideoCapture(str(self.path))
        try:
            index = 0
            while True:
                ok, bgr = cap.read()
                if not ok:
                    break
                rgb = bgr[:, :, ::-1].astype(np.float32) / 255.0
                yield Frame(index=index, rgb=rgb)
                index += 1
        finally:
            cap.release()


def open_video(path: str | Path) -> VideoSource:
    """Open a segment source: scene files by extension, else a video file."""
    path = Path(path)
    if path.suffix == ".npz":
        return SceneVideoSource(path)
    return VideoFileSource(path)


# -- backend protocols and registry ------------------------------------------


class SegmentationBackend(Protocol):
    def track(
        self, frames: Iterator[Frame], init: TrackInit
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]: ...


class DepthBackend(Protocol):
    def estimate(self, rgb: np.ndarray) -> np.ndarray: ...


class EmotionBackend(Protocol):
    def detect(self, rgb: np.ndarray, teacher_mask: np.ndarray) -> np.ndarray | None: ...


class SyntheticSegmentationBackend:
    """Color-identity tracker for the synthetic world.

    The init box determines which reserved color is treated as the
    tracked subject (always the teacher code in generated scenes); every
    later frame is classified pointwise, so identity persists by color.
    """

    def track(self, frames, init):
        first = True
        for frame in frames:
            rgb = frame.rgb
            if first:
                init.validate_bounds(*rgb.shape[:2])
                x0, y0, x1, y1 = init.region
                box = rgb[y0:y1, x0:x1]
                if not np.any(box[:, :, 0] >= _TEACHER_RED_MIN):
                    raise StageError(
                        "tracking",
                        "init region contains no trackable subject",
                        frame_index=frame.index,
                    )
                first = False
            teacher = (rgb[:, :, 0] >= _TEACHER_RED_MIN).astype(np.uint8)
            student = (
                (rgb[:, :, 1] >= 0.75) & (rgb[:, :, 0] < 0.5)
            ).astype(np.uint8)
            yield teacher, student


class SyntheticDepthBackend:
    """Pointwise depth law of the synthetic world: raw depth = blue."""

    def estimate(self, rgb: np.ndarray) -> np.ndarray:
        return rgb[:, :, 2].astype(np.float64)


class SyntheticEmotionBackend:
    """Decodes the rendered face patch inside the teacher region."""

    def __init__(self, peak_confidence: float = 0.72):
        if not (1.0 / len(EMOTIONS)) < peak_confidence <= 1.0:
            raise ValueError("peak confidence must identify a single emotion")
        self.peak = peak_confidence

    def detect(self, rgb: np.ndarray, teacher_mask: np.ndarray) -> np.ndarray | None:
        face = (rgb[:, :, 0] >= _FACE_RED_MIN) & (teacher_mask > 0)
        if not face.any():
            return None
        green = float(np.median(rgb[:, :, 1][face]))
        index = int(np.argmin([abs(green - g) for g in FACE_GREENS]))
        rest = (1.0 - self.peak) / (len(EMOTIONS) - 1)
        confidences = np.full(len(EMOTIONS), rest, dtype=np.float64)
        confidences[index] = self.peak
        return confidences


@dataclass
class BackendSet:
    segmentation: SegmentationBackend
    depth: DepthBackend
    emotion: EmotionBackend


_REGISTRY: dict[str, dict[str, Callable[[], object]]] = {
    "segmentation": {"synthetic": SyntheticSegmentationBackend},
    "depth": {"synthetic": SyntheticDepthBackend},
    "emotion": {"synthetic": SyntheticEmotionBackend},
}


def register_backend(stage: str, name: str, factory: Callable[[], object]) -> None:
    """Register an adapter for a real model under the given stage."""
    if stage not in _REGISTRY:
        raise ConfigError(f"unknown perception stage {stage!r}")
    _REGISTRY[stage][name] = factory


def create_backends(names: dict[str, str]) -> BackendSet:
    """Instantiate one backend per stage from configured names."""
    chosen = {}
    for stage in ("segmentation", "depth", "emotion"):
        name = names.get(stage, "synthetic")
        try:
            chosen[stage] = _REGISTRY[stage][name]()
        except KeyError:
            available = ", ".join(sorted(_REGISTRY[stage]))
            raise ConfigError(
                f"unknown {stage} backend {name!r} (available: {available})"
            ) from None
    return BackendSet(**chosen)


# -- stage operations ---------------------------------------------------------


def segment_and_track(
    video: VideoSource,
    init: TrackInit,
    backend: SegmentationBackend,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Track the teacher through a video, returning per-frame mask pairs.

    Student pixels that overlap the teacher are removed, so the returned
    masks are always disjoint regardless of backend behavior.
    """
    masks: list[tuple[np.ndarray, np.ndarray]] = []
    index = -1
    try:
        for teacher, student in backend.track(video.frames(), init):
            index += 1
            student = np.where(teacher > 0, 0, student).astype(np.uint8)
            masks.append((teacher.astype(np.uint8), student))
    except StageError:
        raise
    except Exception as exc:
        raise StageError("tracking", str(exc), frame_index=index + 1) from exc
    return masks


def normalize_depth(raw: np.ndarray) -> np.ndarray:
    """Min-max normalize a depth map to [0, 1]; constant maps become zeros."""
    lo = float(raw.min())
    hi = float(raw.max())
    if hi == lo:
        return np.zeros_like(raw, dtype=np.float64)
    return (raw.astype(np.float64) - lo) / (hi - lo)


def estimate_depth(frame: Frame, backend: DepthBackend) -> np.ndarray:
    """Relative depth for one frame, min-max normalized to [0, 1]."""
    try:
        raw = backend.estimate(frame.rgb)
    except Exception as exc:
        raise StageError("depth", str(exc), frame_index=frame.index) from exc
    if raw.shape != frame.rgb.shape[:2]:
        raise StageError(
            "depth",
            f"backend returned shape {raw.shape}, expected {frame.rgb.shape[:2]}",
            frame_index=frame.index,
        )
    return normalize_depth(raw)


def detect_emotions(
    frame: Frame,
    teacher_mask: np.ndarray,
    backend: EmotionBackend,
) -> np.ndarray | None:
    """Emotion confidences for the teacher's face, or None when absent.

    Present results are renormalized to sum to exactly 1.
    """
    try:
        confidences = backend.detect(frame.rgb, teacher_mask)
    except Exception as exc:
        raise StageError("emotion", str(exc), frame_index=frame.index) from exc
    if confidences is None:
        return None
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.shape != (len(EMOTIONS),) or confidences.min() < 0.0:
        raise StageError(
            "emotion",
            "backend must return 8 nonnegative confidences or None",
            frame_index=frame.index,
        )
    total = float(confidences.sum())
    if total <= 0.0:
        raise StageError("emotion", "all-zero confidences", frame_index=frame.index)
    return confidences / total


# -- per-segment extraction and persistence ----------------------------------


@dataclass
class SegmentObservations:
    """All frame observations of one segment, in frame order."""

    fps: float
    observations: list[FrameObservation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.observations)

    def __iter__(self) -> Iterator[FrameObservation]:
        return iter(self.observations)

    @property
    def frame_size(self) -> tuple[int, int]:
        first = self.observations[0]
        return first.teacher_mask.shape  # (H, W)


def extract_observations(
    video: VideoSource,
    init: TrackInit,
    backends: BackendSet,
) -> SegmentObservations:
    """Run all three perception stages over one segment."""
    frames = list(video.frames())
    if not frames:
        raise StageError("tracking", "video contains no frames")
    masks = segment_and_track(ArrayListSource(frames, video.fps), init, backends.segmentation)
    if len(masks) != len(frames):
        raise StageError(
            "tracking", f"backend produced {len(masks)} masks for {len(frames)} frames"
        )
    out = SegmentObservations(fps=video.fps)
    for frame, (teacher, student) in zip(frames, masks):
        depth = estimate_depth(frame, backends.depth)
        emotions = detect_emotions(frame, teacher, backends.emotion)
        out.observations.append(
            FrameObservation(
                frame_index=frame.index,
                rgb=frame.rgb,
                teacher_mask=teacher,
                student_mask=student,
                depth=depth,
                emotions=emotions,
            )
        )
    return out


class ArrayListSource:
    """VideoSource over an already-decoded frame list."""

    def __init__(self, frames: list[Frame], fps: float):
        self._frames = frames
        self._fps = fps

    @property
    def fps(self) -> float:
        return self._fps

    def __len__(self) -> int:
        return len(self._frames)

    def frames(self) -> Iterator[Frame]:
        return iter(self._frames)


def save_observations(obs: SegmentObservations, path: str | Path) -> None:
    """Persist a segment's observations (npz, versioned layout)."""
    if not obs.observations:
        raise ValueError("no observations to save")
    n = len(obs)
    h, w = obs.frame_size
    rgb = np.stack([o.rgb for o in obs]).astype(np.float32)
    emotions = np.zeros((n, len(EMOTIONS)), dtype=np.float64)
    visible = np.zeros(n, dtype=bool)
    for i, o in enumerate(obs):
        if o.emotions is not None:
            emotions[i] = o.emotions
            visible[i] = True
    np.savez_compressed(
        Path(path),
        format_version=np.int64(OBSERVATION_FILE_VERSION),
        fps=np.float64(obs.fps),
        frame_index=np.array([o.frame_index for o in obs], dtype=np.int64),
        rgb=rgb,
        teacher_mask=np.stack([o.teacher_mask for o in obs]).astype(np.uint8),
        student_mask=np.stack([o.student_mask for o in obs]).astype(np.uint8),
        depth=np.stack([o.depth for o in obs]).astype(np.float64),
        emotions=emotions,
        face_visible=visible,
    )


def load_observations(path: str | Path) -> SegmentObservations:
    with np.load(Path(path), allow_pickle=False) as npz:
        if int(npz["format_version"]) != OBSERVATION_FILE_VERSION:
            raise ImmediacyError(f"{path}: unsupported observation file version")
        out = SegmentObservations(fps=float(npz["fps"]))
        for i in range(npz["rgb"].shape[0]):
            visible = bool(npz["face_visible"][i])
            out.observations.append(
                FrameObservation(
                    frame_index=int(npz["frame_index"][i]),
                    rgb=npz["rgb"][i],
                    teacher_mask=npz["teacher_mask"][i],
                    student_mask=npz["student_mask"][i],
                    depth=npz["depth"][i],
                    emotions=npz["emotions"][i] if visible else None,
                )
            )
    return out
