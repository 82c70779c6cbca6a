"""Exact Shapley attribution of meta-classifier outputs to the four experts.

With only four features, all 16 coalitions are enumerated directly: the
value of a coalition S is the mean model margin (log-odds, pre-sigmoid) over
the background set with the features in S taken from the explained instance
and the rest from each background row.  Margin space makes the efficiency
identity (base value plus the sum of attributions equals the instance
margin) exact; the sigmoid is monotone, so attribution signs carry over to
probability space, which is all the disagreement metric reads.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .experts import FEATURE_NAMES, N_FEATURES
from .gbm import GbmModel, predict_margin


@dataclass
class ShapleyAttribution:
    phi: np.ndarray  # one value per expert, order (b, s, c, e)
    base_value: float  # expected margin over the background set
    prediction: float  # margin of the explained instance

    def efficiency_residual(self) -> float:
        return float(self.prediction - (self.base_value + self.phi.sum()))


def _coalition_values(
    model: GbmModel, x: np.ndarray, background: np.ndarray
) -> np.ndarray:
    """v[mask] = mean margin with mask-selected features taken from x."""
    m = background.shape[0]
    values = np.empty(16)
    for mask in range(16):
        hybrid = background.copy()
        for j in range(N_FEATURES):
            if mask >> j & 1:
                hybrid[:, j] = x[j]
        values[mask] = float(np.mean(predict_margin(model, hybrid)))
    return values


_WEIGHTS = [
    math.factorial(s) * math.factorial(N_FEATURES - s - 1) / math.factorial(N_FEATURES)
    for s in range(N_FEATURES)
]


def shapley(
    model: GbmModel, x: np.ndarray, background: np.ndarray
) -> ShapleyAttribution:
    """Exact interventional Shapley values of the margin at ``x``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 2 or background.shape[0] < 1:
        raise ValueError("background must be a non-empty (m, 4) matrix")
    if x.shape[0] != N_FEATURES or background.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES}-feature inputs")
    if model.n_features != N_FEATURES:
        raise ValueError("attribution requires the 4-expert committee model")
    if not (np.isfinite(x).all() and np.isfinite(background).all()):
        raise ValueError("inputs must be finite")

    v = _coalition_values(model, x, background)
    phi = np.zeros(N_FEATURES)
    for j in range(N_FEATURES):
        others = [i for i in range(N_FEATURES) if i != j]
        for r in range(N_FEATURES):
            for combo in itertools.combinations(others, r):
                mask = sum(1 << i for i in combo)
                phi[j] += _WEIGHTS[r] * (v[mask | (1 << j)] - v[mask])
    return ShapleyAttribution(
        phi=phi, base_value=float(v[0]), prediction=float(v[15])
    )


def _committee_indices(committee) -> list[int]:
    indices = []
    for member in committee:
        if isinstance(member, str):
            name = member.lower()
            if name not in FEATURE_NAMES:
                raise ValueError(f"unknown expert {member!r}")
            indices.append(FEATURE_NAMES.index(name))
        else:
            if not 0 <= int(member) < N_FEATURES:
                raise ValueError(f"expert index {member} out of range")
            indices.append(int(member))
    if not indices:
        raise ValueError("committee must be non-empty")
    return indices


def disagreement(attribution: ShapleyAttribution, committee) -> bool:
    """True iff the committee holds strictly positive and strictly negative
    attributions simultaneously (zeros count as neither)."""
    values = attribution.phi[_committee_indices(committee)]
    return bool(values.min() < 0.0 and values.max() > 0.0)


def disagreement_rate(
    model: GbmModel,
    features: np.ndarray,
    background: np.ndarray,
    committee,
) -> float:
    """Fraction of instances on which the committee disagrees."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("features must be a non-empty (n, 4) matrix")
    indices = _committee_indices(committee)
    count = 0
    for row in features:
        attr = shapley(model, row, background)
        values = attr.phi[indices]
        if values.min() < 0.0 and values.max() > 0.0:
            count += 1
    return count / features.shape[0]


def multi_expert_committees() -> list[tuple[str, ...]]:
    """The 11 sub-committees of two or more experts, in size order."""
    out = []
    for r in range(2, N_FEATURES + 1):
        out.extend(itertools.combinations(FEATURE_NAMES, r))
    return out
