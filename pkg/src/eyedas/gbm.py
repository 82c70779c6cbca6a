"""Gradient-boosted regression trees for binary classification.

Stagewise boosting on logistic loss: the model starts from the log-odds of
the positive prevalence and each stage fits a depth-bounded regression tree
to the negative gradients, with leaf values set by a Newton step
(-sum(g) / sum(h), g = p - y, h = p * (1 - p)).  Split finding is exact
greedy over sorted unique feature values with a second-order gain, no
subsampling, minimum two samples per leaf.  Fitting is fully deterministic.

Models serialize to a compact little-endian binary format (magic ``EYDS``)
with a trailing CRC-32; a round trip reproduces predictions bit for bit.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

MIN_LEAF = 2
_GAIN_EPS = 1e-12
_HESS_FLOOR = 1e-16
_MARGIN_CLIP = 30.0  # keeps probabilities strictly inside (0, 1)

MAGIC = b"EYDS"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised when model bytes fail validation on load."""


@dataclass
class Tree:
    """Flat binary tree; ``feature`` is -1 on leaves."""

    feature: np.ndarray  # int8
    threshold: np.ndarray  # float64, 0 on leaves
    value: np.ndarray  # float64, 0 on internal nodes
    left: np.ndarray  # uint16
    right: np.ndarray  # uint16

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[idx]
            live = feat >= 0
            if not live.any():
                return self.value[idx]
            go_left = np.zeros(X.shape[0], dtype=bool)
            lr_ = rows[live]
            go_left[lr_] = X[lr_, feat[live]] <= self.threshold[idx[live]]
            nxt = np.where(go_left, self.left[idx], self.right[idx])
            idx = np.where(live, nxt, idx)


@dataclass
class GbmModel:
    trees: list[Tree]
    learning_rate: float
    base_score: float
    n_estimators: int
    max_depth: int
    n_features: int
    threshold: float = 0.5


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameter grid and CV policy for model selection."""

    n_estimators_grid: tuple[int, ...] = (25, 30, 35, 40)
    max_depth_grid: tuple[int, ...] = (2, 3, 4, 5)
    cv_folds: int = 10
    learning_rate: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.n_estimators_grid or not self.max_depth_grid:
            raise ValueError("hyperparameter grids must be non-empty")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")


def _check_training_inputs(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2:
        raise ValueError("features must be a 2-D matrix")
    if X.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree in length")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("both classes must be present")
    return X, y


def _best_split(xv, g, h, g_total, h_total):
    """Best (gain, threshold) for one feature column, or None."""
    order = np.argsort(xv, kind="stable")
    xs = xv[order]
    gl = np.cumsum(g[order])[:-1]
    hl = np.cumsum(h[order])[:-1]
    n = xs.shape[0]
    pos = np.arange(1, n)
    can_split = (
        (xs[:-1] != xs[1:]) & (pos >= MIN_LEAF) & (n - pos >= MIN_LEAF)
    )
    if not can_split.any():
        return None
    gr = g_total - gl
    hr = h_total - hl
    gain = 0.5 * (
        gl**2 / np.maximum(hl, _HESS_FLOOR)
        + gr**2 / np.maximum(hr, _HESS_FLOOR)
        - g_total**2 / max(h_total, _HESS_FLOOR)
    )
    gain[~can_split] = -np.inf
    best = int(np.argmax(gain))
    return float(gain[best]), 0.5 * (xs[best] + xs[best + 1])


def _build_tree(X, g, h, max_depth):
    feature: list[int] = []
    threshold: list[float] = []
    value: list[float] = []
    left: list[int] = []
    right: list[int] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        value.append(0.0)
        left.append(0)
        right.append(0)
        return len(feature) - 1

    def grow(idx, depth):
        node = new_node()
        g_total = float(g[idx].sum())
        h_total = float(h[idx].sum())
        if depth < max_depth and idx.shape[0] >= 2 * MIN_LEAF:
            best = None
            for f in range(X.shape[1]):
                cand = _best_split(X[idx, f], g[idx], h[idx], g_total, h_total)
                if cand is not None and (best is None or cand[0] > best[1]):
                    best = (f, cand[0], cand[1])
            if best is not None and best[1] > _GAIN_EPS:
                f, _, thr = best
                mask = X[idx, f] <= thr
                feature[node] = f
                threshold[node] = thr
                left[node] = grow(idx[mask], depth + 1)
                right[node] = grow(idx[~mask], depth + 1)
                return node
        value[node] = -g_total / max(h_total, _HESS_FLOOR)
        return node

    grow(np.arange(X.shape[0], dtype=np.intp), 0)
    return Tree(
        feature=np.array(feature, dtype=np.int8),
        threshold=np.array(threshold, dtype=np.float64),
        value=np.array(value, dtype=np.float64),
        left=np.array(left, dtype=np.uint16),
        right=np.array(right, dtype=np.uint16),
    )


def _boost(X, y, n_estimators, max_depth, learning_rate):
    """Base score and the full tree sequence; margins update stagewise."""
    p_bar = float(y.mean())
    base = float(np.log(p_bar / (1.0 - p_bar)))
    margin = np.full(y.shape[0], base)
    trees = []
    for _ in range(n_estimators):
        p = expit(margin)
        grad = p - y
        hess = p * (1.0 - p)
        tree = _build_tree(X, grad, hess, max_depth)
        trees.append(tree)
        margin = margin + learning_rate * tree.predict(X)
    return base, trees


def fit(
    features: np.ndarray,
    labels: np.ndarray,
    n_estimators: int,
    max_depth: int,
    learning_rate: float = 0.1,
    seed: int | None = None,
) -> GbmModel:
    """Train a boosted model.

    ``seed`` is accepted for interface stability; exact greedy fitting has
    no stochastic step, so equal data and config always yield an identical
    model.
    """
    X, y = _check_training_inputs(features, labels)
    if X.shape[0] < 10:
        raise ValueError("need at least 10 training samples")
    if n_estimators < 1 or max_depth < 1:
        raise ValueError("n_estimators and max_depth must be positive")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    base, trees = _boost(X, y, n_estimators, max_depth, learning_rate)
    return GbmModel(
        trees=trees,
        learning_rate=learning_rate,
        base_score=base,
        n_estimators=n_estimators,
        max_depth=max_depth,
        n_features=X.shape[1],
    )


def _as_matrix(model: GbmModel, features: np.ndarray) -> tuple[np.ndarray, bool]:
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X.reshape(1, -1)
    if X.shape[1] != model.n_features:
        raise ValueError(
            f"model expects {model.n_features} features, got {X.shape[1]}"
        )
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    return X, single


def predict_margin(model: GbmModel, features: np.ndarray):
    """Raw additive score (log-odds space) before the sigmoid."""
    X, single = _as_matrix(model, features)
    margin = np.full(X.shape[0], model.base_score)
    for tree in model.trees:
        margin += model.learning_rate * tree.predict(X)
    return float(margin[0]) if single else margin


def predict_proba(model: GbmModel, features: np.ndarray):
    """Probability of the positive (3D) class, strictly inside (0, 1)."""
    margin = predict_margin(model, features)
    clipped = np.clip(margin, -_MARGIN_CLIP, _MARGIN_CLIP)
    p = expit(clipped)
    return float(p) if np.isscalar(margin) else p


def _stratified_folds(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    fold = np.empty(y.shape[0], dtype=np.intp)
    for cls in (0.0, 1.0):
        idx = np.flatnonzero(y == cls)
        if idx.shape[0] < k:
            raise ValueError(
                f"class {int(cls)} has {idx.shape[0]} samples, fewer than "
                f"{k} folds"
            )
        rng.shuffle(idx)
        fold[idx] = np.arange(idx.shape[0]) % k
    return fold


def grid_search_cv(
    features: np.ndarray, labels: np.ndarray, config: TrainConfig
) -> tuple[int, int, dict[tuple[int, int], float]]:
    """Seeded stratified k-fold CV over the hyperparameter grid.

    Returns the accuracy-maximizing (n_estimators, max_depth) with ties
    broken toward the smaller n_estimators, then the smaller depth, plus the
    full mean-accuracy table.  Because boosting is stagewise, each (depth,
    fold) pair is fit once at the largest grid size and the smaller sizes
    are read off as prefixes of the same tree sequence.
    """
    X, y = _check_training_inputs(features, labels)
    if X.shape[0] < config.cv_folds:
        raise ValueError("need at least cv_folds samples")
    rng = np.random.default_rng(config.rng_seed)
    fold = _stratified_folds(y, config.cv_folds, rng)

    n_grid = sorted(config.n_estimators_grid)
    d_grid = sorted(config.max_depth_grid)
    n_max = n_grid[-1]
    hits = {(n, d): 0 for n in n_grid for d in d_grid}
    total = {(n, d): 0 for n in n_grid for d in d_grid}

    for f in range(config.cv_folds):
        val = fold == f
        Xtr, ytr = X[~val], y[~val]
        Xva, yva = X[val], y[val]
        if ytr.min() == ytr.max() or yva.shape[0] == 0:
            raise ValueError("fold lost a class; reduce cv_folds")
        for d in d_grid:
            base, trees = _boost(Xtr, ytr, n_max, d, config.learning_rate)
            margin = np.full(Xva.shape[0], base)
            n_done = 0
            for n in n_grid:
                for tree in trees[n_done:n]:
                    margin += config.learning_rate * tree.predict(Xva)
                n_done = n
                correct = int(np.sum((expit(margin) >= 0.5) == (yva == 1.0)))
                hits[(n, d)] += correct
                total[(n, d)] += yva.shape[0]

    table = {key: hits[key] / total[key] for key in hits}
    best_key = None
    best_acc = -1.0
    for n in n_grid:
        for d in d_grid:
            if table[(n, d)] > best_acc:
                best_acc = table[(n, d)]
                best_key = (n, d)
    return best_key[0], best_key[1], table


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<4sHdddIII")  # magic, version, lr, base, thresh, n_est, depth, n_feat
_NODE_DTYPE = np.dtype(
    [
        ("feature", "<i1"),
        ("threshold", "<f8"),
        ("value", "<f8"),
        ("left", "<u2"),
        ("right", "<u2"),
    ]
)


def save(model: GbmModel) -> bytes:
    """Serialize to the versioned EYDS binary format with a CRC-32 trailer."""
    parts = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            model.learning_rate,
            model.base_score,
            model.threshold,
            model.n_estimators,
            model.max_depth,
            model.n_features,
        )
    ]
    for tree in model.trees:
        n = tree.feature.shape[0]
        if n > 0xFFFF:
            raise ValueError("tree too large to serialize")
        nodes = np.empty(n, dtype=_NODE_DTYPE)
        nodes["feature"] = tree.feature
        nodes["threshold"] = tree.threshold
        nodes["value"] = tree.value
        nodes["left"] = tree.left
        nodes["right"] = tree.right
        parts.append(struct.pack("<I", n))
        parts.append(nodes.tobytes())
    payload = b"".join(parts)
    return payload + struct.pack("<I", zlib.crc32(payload))


def load(blob: bytes) -> GbmModel:
    """Parse EYDS bytes; rejects bad magic, version, truncation, checksum."""
    if len(blob) < _HEADER.size + 4:
        raise ModelFormatError("truncated model payload")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc:
        raise ModelFormatError("checksum mismatch")
    magic, version, lr, base, thresh, n_est, depth, n_feat = _HEADER.unpack_from(
        payload, 0
    )
    if magic != MAGIC:
        raise ModelFormatError("bad magic")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {version}")
    offset = _HEADER.size
    trees = []
    for _ in range(n_est):
        if offset + 4 > len(payload):
            raise ModelFormatError("truncated tree block")
        (n,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        nbytes = n * _NODE_DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise ModelFormatError("truncated tree block")
        nodes = np.frombuffer(payload, dtype=_NODE_DTYPE, count=n, offset=offset)
        offset += nbytes
        trees.append(
            Tree(
                feature=nodes["feature"].astype(np.int8),
                threshold=nodes["threshold"].astype(np.float64),
                value=nodes["value"].astype(np.float64),
                left=nodes["left"].astype(np.uint16),
                right=nodes["right"].astype(np.uint16),
            )
        )
    if offset != len(payload):
        raise ModelFormatError("trailing bytes after tree blocks")
    return GbmModel(
        trees=trees,
        learning_rate=lr,
        base_score=base,
        n_estimators=n_est,
        max_depth=depth,
        n_features=n_feat,
        threshold=thresh,
    )


def save_to_file(model: GbmModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(save(model))


def load_from_file(path) -> GbmModel:
    with open(path, "rb") as fh:
        return load(fh.read())


def logistic_loss(model_margin: np.ndarray, y: np.ndarray) -> float:
    """Mean logistic loss of raw margins against binary labels."""
    m = np.asarray(model_margin, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))
