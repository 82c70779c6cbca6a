"""The four unsupervised committee members and the raw-image baseline.

Each expert maps a short sequence of cropped RGB frames to a non-negative
3D-confidence score: the maximum feature distance observed between any two
consecutive frames.  A flat depiction barely changes between frames, so all
four scores stay near zero; a real object under camera auto-focus and scene
motion produces large distances in at least one feature space.

Feature / distance pairs:
    blurring   per-block high-frequency map, compared via 1 - SSIM
    sharpness  Laplacian-variance scalar, compared via absolute difference
    color      dominant 2-means cluster fraction, absolute difference
    edge       Sobel magnitude map, compared via 1 - SSIM
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import imaging

MAX_FRAMES = 5
FEATURE_NAMES = ("b", "s", "c", "e")
N_FEATURES = 4


@dataclass
class ObjectSequence:
    """Time series of cropped RGB frames of one detected object.

    Frames are (H, W, 3) float arrays in [0, 1], all the same size, ordered
    by capture time, sampled every ``interval_ms`` milliseconds.  Between 2
    and 5 frames are allowed.
    """

    frames: list[np.ndarray]
    interval_ms: float = 200.0
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a sequence needs at least 2 frames")
        if len(self.frames) > MAX_FRAMES:
            raise ValueError(f"a sequence holds at most {MAX_FRAMES} frames")
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.frames = [imaging.check_image(f) for f in self.frames]
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.ndim != 3:
                raise ValueError("sequence frames must be RGB")
            if f.shape != shape:
                raise ValueError(
                    f"frame {i} shape {f.shape} differs from frame 0 shape {shape}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    def resized(self, height: int, width: int) -> "ObjectSequence":
        """Copy of the sequence with every frame bilinearly resized."""
        return ObjectSequence(
            frames=[imaging.resize(f, height, width) for f in self.frames],
            interval_ms=self.interval_ms,
            source_meta=dict(self.source_meta),
        )


class ExpertScores(NamedTuple):
    b: float
    s: float
    c: float
    e: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


class FrameFeatures(NamedTuple):
    """Cached per-frame features; one extraction per frame feeds every pair."""

    blur: np.ndarray
    sharp: float
    cluster: float
    edge: np.ndarray


def extract_frame_features(frame: np.ndarray) -> FrameFeatures:
    gray = imaging.to_grayscale(frame)
    return FrameFeatures(
        blur=imaging.blur_map(gray),
        sharp=imaging.sharpness(gray),
        cluster=imaging.dominant_cluster_fraction(frame, 2),
        edge=imaging.edge_map(gray),
    )


def _ssim_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.clip(1.0 - imaging.ssim(a, b), 0.0, 1.0))


def pair_distance(prev: FrameFeatures, cur: FrameFeatures) -> np.ndarray:
    """Distance vector (b, s, c, e) between two consecutive frames' features."""
    return np.array(
        [
            _ssim_distance(prev.blur, cur.blur),
            abs(cur.sharp - prev.sharp),
            abs(cur.cluster - prev.cluster),
            _ssim_distance(prev.edge, cur.edge),
        ]
    )


def pair_distances(seq: ObjectSequence) -> np.ndarray:
    """(t-1, 4) matrix of consecutive-pair distances for all four experts."""
    feats = [extract_frame_features(f) for f in seq.frames]
    return np.array(
        [pair_distance(feats[i], feats[i + 1]) for i in range(len(feats) - 1)]
    )


def score_blurring(seq: ObjectSequence) -> float:
    """Max 1 - SSIM between consecutive blur maps."""
    maps = [imaging.blur_map(imaging.to_grayscale(f)) for f in seq.frames]
    return max(_ssim_distance(a, b) for a, b in zip(maps, maps[1:]))


def score_sharpness(seq: ObjectSequence) -> float:
    """Max absolute difference between consecutive sharpness levels."""
    vals = [imaging.sharpness(imaging.to_grayscale(f)) for f in seq.frames]
    return max(abs(b - a) for a, b in zip(vals, vals[1:]))


def score_color(seq: ObjectSequence) -> float:
    """Max absolute difference between consecutive dominant cluster sizes."""
    vals = [imaging.dominant_cluster_fraction(f, 2) for f in seq.frames]
    return max(abs(b - a) for a, b in zip(vals, vals[1:]))


def score_edge(seq: ObjectSequence) -> float:
    """Max 1 - SSIM between consecutive edge maps."""
    maps = [imaging.edge_map(imaging.to_grayscale(f)) for f in seq.frames]
    return max(_ssim_distance(a, b) for a, b in zip(maps, maps[1:]))


def score_all(seq: ObjectSequence) -> ExpertScores:
    """All four expert scores from a single feature-extraction pass."""
    dists = pair_distances(seq)
    b, s, c, e = dists.max(axis=0)
    return ExpertScores(b=float(b), s=float(s), c=float(c), e=float(e))


def score_raw_baseline(seq: ObjectSequence) -> float:
    """Max 1 - SSIM between consecutive raw grayscale frames (no features)."""
    grays = [imaging.to_grayscale(f) for f in seq.frames]
    return max(_ssim_distance(a, b) for a, b in zip(grays, grays[1:]))
