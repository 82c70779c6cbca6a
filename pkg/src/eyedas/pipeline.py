"""End-to-end classifier: training orchestration, threshold calibration, and
incremental per-frame decisions.

Training: augment the 2d class to parity, score every sequence with the four
experts, grid-search the meta-classifier by stratified CV, fit, then
calibrate the decision threshold.  A trained pipeline is immutable; classify
calls are reentrant.  Incremental sessions cache per-frame features so each
new frame costs one feature extraction plus one pairwise distance.

Scoring a dataset can fan out over threads; the EYEDAS_THREADS environment
variable caps the pool (default 1, results are order-stable either way).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gbm
from .data import LabeledDataset, augment_to_parity
from .experts import (
    FrameFeatures,
    ObjectSequence,
    extract_frame_features,
    pair_distance,
    pair_distances,
    score_raw_baseline,
)
from .gbm import GbmModel, TrainConfig

LABEL_3D = "3d"
LABEL_2D = "2d"
_TPR1_EPSILON = 1e-9


@dataclass(frozen=True)
class PipelineConfig:
    t_max: int = 5
    interval_ms: float = 200.0
    threshold_policy: str = "tpr1"  # "tpr1" | "fixed"
    fixed_threshold: float = 0.5
    resize_to: tuple[int, int] | None = (128, 128)

    def __post_init__(self):
        if not 2 <= self.t_max <= 5:
            raise ValueError("t_max must lie in [2, 5]")
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        if self.threshold_policy not in ("tpr1", "fixed"):
            raise ValueError(f"unknown threshold policy {self.threshold_policy!r}")


@dataclass
class Verdict:
    label: str
    probability_3d: float
    frames_used: int
    elapsed_ms: float


@dataclass
class TrainedPipeline:
    model: GbmModel
    config: PipelineConfig
    n_estimators: int
    max_depth: int
    cv_table: dict[tuple[int, int], float]
    train_features: np.ndarray
    train_labels: np.ndarray
    calibration_fpr: float = field(default=float("nan"))

    @property
    def threshold(self) -> float:
        return self.model.threshold


def _worker_count() -> int:
    raw = os.environ.get("EYEDAS_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn, items):
    workers = _worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _prepared(seq: ObjectSequence, config: PipelineConfig) -> ObjectSequence:
    if config.resize_to is None:
        return seq
    h, w = config.resize_to
    if seq.frames[0].shape[:2] == (h, w):
        return seq
    return seq.resized(h, w)


def sequence_features(seq: ObjectSequence, config: PipelineConfig) -> np.ndarray:
    """Committee feature vector (b, s, c, e) over at most t_max frames."""
    seq = _prepared(seq, config)
    frames = seq.frames[: config.t_max]
    dists = pair_distances(
        ObjectSequence(frames=frames, interval_ms=seq.interval_ms)
    )
    return dists.max(axis=0)


def score_dataset(
    dataset: LabeledDataset, config: PipelineConfig, feature_set: str = "committee"
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and binary labels (1 = 3d) for a whole dataset.

    ``feature_set`` selects the 4-column committee features or the 1-column
    raw-image SSIM baseline.
    """
    if feature_set == "committee":
        rows = _map_ordered(
            lambda inst: sequence_features(inst.sequence, config),
            dataset.instances,
        )
    elif feature_set == "raw":
        rows = _map_ordered(
            lambda inst: np.array(
                [
                    score_raw_baseline(
                        _truncated(_prepared(inst.sequence, config), config.t_max)
                    )
                ]
            ),
            dataset.instances,
        )
    else:
        raise ValueError(f"unknown feature set {feature_set!r}")
    return np.array(rows), dataset.labels()


def _truncated(seq: ObjectSequence, t_max: int) -> ObjectSequence:
    if len(seq) <= t_max:
        return seq
    return ObjectSequence(frames=seq.frames[:t_max], interval_ms=seq.interval_ms)


def calibrate_threshold_tpr1(
    model: GbmModel, features: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """Largest threshold classifying every 3d calibration instance as 3d.

    Returns (threshold, fpr_at_threshold); the threshold sits epsilon below
    the smallest 3d probability so the >= comparison keeps TPR at exactly 1.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if not np.any(labels == 1.0):
        raise ValueError("calibration set holds no 3d instances")
    proba = gbm.predict_proba(model, np.asarray(features, dtype=np.float64))
    threshold = float(proba[labels == 1.0].min()) - _TPR1_EPSILON
    neg = proba[labels == 0.0]
    fpr = float(np.mean(neg >= threshold)) if neg.size else 0.0
    return threshold, fpr


def train(
    dataset: LabeledDataset,
    train_cfg: TrainConfig | None = None,
    pipeline_cfg: PipelineConfig | None = None,
    feature_set: str = "committee",
) -> TrainedPipeline:
    """Full training protocol on a labeled dataset of frame sequences."""
    train_cfg = train_cfg or TrainConfig()
    pipeline_cfg = pipeline_cfg or PipelineConfig()

    n_3d = dataset.count(LABEL_3D)
    n_2d = dataset.count(LABEL_2D)
    if n_3d < 20 or n_2d < 10:
        raise ValueError(
            f"training needs at least 20 3d and 10 2d instances, got "
            f"{n_3d} / {n_2d}"
        )

    balanced = augment_to_parity(dataset, train_cfg.rng_seed)
    features, labels = score_dataset(balanced, pipeline_cfg, feature_set)
    best_n, best_depth, table = gbm.grid_search_cv(features, labels, train_cfg)
    model = gbm.fit(
        features,
        labels,
        n_estimators=best_n,
        max_depth=best_depth,
        learning_rate=train_cfg.learning_rate,
        seed=train_cfg.rng_seed,
    )

    calibration_fpr = float("nan")
    if pipeline_cfg.threshold_policy == "tpr1":
        model.threshold, calibration_fpr = calibrate_threshold_tpr1(
            model, features, labels
        )
    else:
        model.threshold = pipeline_cfg.fixed_threshold

    return TrainedPipeline(
        model=model,
        config=pipeline_cfg,
        n_estimators=best_n,
        max_depth=best_depth,
        cv_table=table,
        train_features=features,
        train_labels=labels,
        calibration_fpr=calibration_fpr,
    )


def _verdict(pipeline: TrainedPipeline, features: np.ndarray, frames_used: int,
             elapsed_ms: float) -> Verdict:
    proba = gbm.predict_proba(pipeline.model, features)
    label = LABEL_3D if proba >= pipeline.model.threshold else LABEL_2D
    return Verdict(
        label=label,
        probability_3d=float(proba),
        frames_used=frames_used,
        elapsed_ms=elapsed_ms,
    )


def classify(pipeline: TrainedPipeline, seq: ObjectSequence) -> Verdict:
    """One-shot decision over a whole sequence (at most t_max frames)."""
    started = time.perf_counter()
    if len(seq) > pipeline.config.t_max:
        raise ValueError(
            f"sequence has {len(seq)} frames, pipeline accepts "
            f"{pipeline.config.t_max}"
        )
    features = sequence_features(seq, pipeline.config)
    elapsed = (time.perf_counter() - started) * 1000.0
    return _verdict(pipeline, features, len(seq), elapsed)


class IncrementalSession:
    """Per-track state for frame-by-frame decisions.

    Feed frames in order; from the second frame on every ``add_frame``
    returns the verdict over all frames so far.  Only the newest pair is
    scored per call; expert scores are running maxima, so the verdict after
    k frames equals ``classify`` on the k-prefix.  One session serves one
    caller at a time.
    """

    def __init__(self, pipeline: TrainedPipeline):
        self._pipeline = pipeline
        self._prev: FrameFeatures | None = None
        self._running: np.ndarray | None = None
        self._frames_seen = 0
        self._last_timestamp: float | None = None

    def add_frame(self, frame: np.ndarray, timestamp_ms: float | None = None):
        started = time.perf_counter()
        if self._frames_seen >= self._pipeline.config.t_max:
            raise ValueError("session already holds t_max frames")
        if timestamp_ms is not None:
            if self._last_timestamp is not None and timestamp_ms <= self._last_timestamp:
                raise ValueError(
                    f"out-of-order frame timestamp {timestamp_ms} after "
                    f"{self._last_timestamp}"
                )
            self._last_timestamp = timestamp_ms

        resize = self._pipeline.config.resize_to
        if resize is not None and frame.shape[:2] != tuple(resize):
            from .imaging import resize as _resize

            frame = _resize(frame, resize[0], resize[1])
        features = extract_frame_features(frame)
        self._frames_seen += 1
        if self._prev is None:
            self._prev = features
            return None
        dist = pair_distance(self._prev, features)
        self._prev = features
        self._running = (
            dist if self._running is None else np.maximum(self._running, dist)
        )
        elapsed = (time.perf_counter() - started) * 1000.0
        return _verdict(self._pipeline, self._running, self._frames_seen, elapsed)


def classify_incremental(pipeline: TrainedPipeline, frames):
    """Yield one verdict per arriving frame, starting from the second."""
    session = IncrementalSession(pipeline)
    for frame in frames:
        verdict = session.add_frame(frame)
        if verdict is not None:
            yield verdict


@dataclass
class GateResult:
    passed: list
    suppressed: list
    verdicts: list[Verdict]
    counts: dict

    def pass_rate(self) -> float:
        total = len(self.passed) + len(self.suppressed)
        return len(self.passed) / total if total else 0.0


def gate_detector(pipeline: TrainedPipeline, detections) -> GateResult:
    """Suppress detections judged 2d; pass the rest through.

    ``detections`` is an iterable of LabeledInstance (the label feeds the
    per-class counts; pass empty-string labels for unlabeled streams).
    """
    passed, suppressed, verdicts = [], [], []
    counts = {"passed": {}, "suppressed": {}}
    for det in detections:
        verdict = classify(pipeline, det.sequence)
        verdicts.append(verdict)
        bucket = "passed" if verdict.label == LABEL_3D else "suppressed"
        (passed if verdict.label == LABEL_3D else suppressed).append(det)
        counts[bucket][det.label] = counts[bucket].get(det.label, 0) + 1
    return GateResult(
        passed=passed, suppressed=suppressed, verdicts=verdicts, counts=counts
    )
