"""Expert scorer tests: exact zero cases, composition oracles, invariants."""

import numpy as np
import pytest
import scipy.ndimage

from eyedas import imaging
from eyedas.experts import (
    ExpertScores,
    ObjectSequence,
    extract_frame_features,
    pair_distance,
    pair_distances,
    score_all,
    score_blurring,
    score_color,
    score_edge,
    score_raw_baseline,
    score_sharpness,
)


def _random_frame(rng, size=24):
    # smooth-ish texture with some high-frequency content
    base = imaging.resize(rng.uniform(0.1, 0.9, (6, 6, 3)), size, size)
    base += 0.05 * rng.standard_normal((size, size, 3))
    return np.clip(base, 0.0, 1.0)


def _blurred(frame, sigma):
    out = np.stack(
        [scipy.ndimage.gaussian_filter(frame[..., c], sigma) for c in range(3)],
        axis=-1,
    )
    return np.clip(out, 0.0, 1.0)


def _seq(frames):
    return ObjectSequence(frames=list(frames))


# ---------------------------------------------------------------------------
# sequence type


def test_sequence_validation():
    rng = np.random.default_rng(0)
    f = _random_frame(rng)
    with pytest.raises(ValueError):
        ObjectSequence(frames=[f])
    with pytest.raises(ValueError):
        ObjectSequence(frames=[f] * 6)
    with pytest.raises(ValueError):
        ObjectSequence(frames=[f, f], interval_ms=0)
    with pytest.raises(ValueError):
        ObjectSequence(frames=[f, _random_frame(rng, size=32)])


def test_sequence_resized():
    rng = np.random.default_rng(1)
    seq = _seq([_random_frame(rng), _random_frame(rng)])
    out = seq.resized(32, 32)
    assert all(f.shape == (32, 32, 3) for f in out.frames)
    assert out.interval_ms == seq.interval_ms


# ---------------------------------------------------------------------------
# zero on identical frames (exact)


def test_all_scores_zero_on_identical_frames():
    rng = np.random.default_rng(2)
    f = _random_frame(rng)
    seq = _seq([f.copy() for _ in range(4)])
    assert score_blurring(seq) == 0.0
    assert score_sharpness(seq) == 0.0
    assert score_color(seq) == 0.0
    assert score_edge(seq) == 0.0
    assert score_raw_baseline(seq) == 0.0
    assert score_all(seq) == ExpertScores(0.0, 0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# blurring


def test_blurring_max_is_the_changed_pair():
    rng = np.random.default_rng(3)
    f1 = _random_frame(rng, size=32)
    f3 = _blurred(f1, sigma=2.5)
    seq = _seq([f1, f1.copy(), f3])
    pair23 = 1.0 - imaging.ssim(
        imaging.blur_map(imaging.to_grayscale(f1)),
        imaging.blur_map(imaging.to_grayscale(f3)),
    )
    assert score_blurring(seq) == pytest.approx(max(0.0, min(1.0, pair23)), abs=1e-12)


def test_blurring_matches_ssim_composition():
    rng = np.random.default_rng(4)
    f1 = _random_frame(rng, size=32)
    f2 = _random_frame(rng, size=32)
    expect = 1.0 - imaging.ssim(
        imaging.blur_map(imaging.to_grayscale(f1)),
        imaging.blur_map(imaging.to_grayscale(f2)),
    )
    assert score_blurring(_seq([f1, f2])) == pytest.approx(
        np.clip(expect, 0, 1), abs=1e-12
    )


# ---------------------------------------------------------------------------
# sharpness


def test_sharpness_blur_strictly_reduces():
    rng = np.random.default_rng(5)
    f1 = _random_frame(rng, size=32)
    f2 = _blurred(f1, sigma=2.0)
    s1 = imaging.sharpness(imaging.to_grayscale(f1))
    s2 = imaging.sharpness(imaging.to_grayscale(f2))
    assert s1 > s2
    assert score_sharpness(_seq([f1, f2])) == pytest.approx(s1 - s2, abs=1e-12)


def test_sharpness_max_over_enumerated_differences():
    rng = np.random.default_rng(6)
    frames = [
        _random_frame(rng, size=32),
        None,
        None,
        None,
    ]
    frames[1] = _blurred(frames[0], 0.8)
    frames[2] = _blurred(frames[0], 2.0)
    frames[3] = _random_frame(rng, size=32)
    vals = [imaging.sharpness(imaging.to_grayscale(f)) for f in frames]
    expect = max(abs(b - a) for a, b in zip(vals, vals[1:]))
    assert score_sharpness(_seq(frames)) == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# color


def _two_color_frame(frac_white, size=20):
    img = np.zeros((size, size, 3))
    n = size * size
    k = int(round(frac_white * n))
    img.reshape(-1, 3)[:k] = 1.0
    return img


def test_color_exact_fraction_shift():
    f1 = _two_color_frame(0.60)
    f2 = _two_color_frame(0.90)
    assert score_color(_seq([f1, f2])) == pytest.approx(0.30, abs=1e-9)


def test_color_matches_cluster_composition():
    rng = np.random.default_rng(7)
    f1 = _random_frame(rng)
    f2 = _random_frame(rng)
    expect = abs(
        imaging.dominant_cluster_fraction(f2, 2)
        - imaging.dominant_cluster_fraction(f1, 2)
    )
    assert score_color(_seq([f1, f2])) == pytest.approx(expect, abs=1e-12)


# ---------------------------------------------------------------------------
# edge


def test_edge_translation_increases_score():
    rng = np.random.default_rng(8)
    f1 = _random_frame(rng, size=32)
    f1[:, 12:14] = 0.0  # a dark bar with crisp edges
    f2 = f1.copy()
    f2[:, 12:14] = f1[:, 10:12]
    f2[:, 16:18] = 0.0  # the bar moved 4 px right
    f2[:, 12:14] = f1[:, 8:10]
    moved = score_edge(_seq([f1, f2]))
    static = score_edge(_seq([f1, f1.copy()]))
    assert moved > static


def test_edge_matches_ssim_composition():
    rng = np.random.default_rng(9)
    f1 = _random_frame(rng, size=32)
    f2 = _random_frame(rng, size=32)
    expect = 1.0 - imaging.ssim(
        imaging.edge_map(imaging.to_grayscale(f1)),
        imaging.edge_map(imaging.to_grayscale(f2)),
    )
    assert score_edge(_seq([f1, f2])) == pytest.approx(
        np.clip(expect, 0, 1), abs=1e-12
    )


# ---------------------------------------------------------------------------
# score_all and baseline


def test_score_all_equals_individual_experts():
    rng = np.random.default_rng(10)
    frames = [_random_frame(rng, size=32) for _ in range(4)]
    frames[2] = _blurred(frames[1], 1.5)
    seq = _seq(frames)
    scores = score_all(seq)
    assert scores.b == pytest.approx(score_blurring(seq), abs=1e-12)
    assert scores.s == pytest.approx(score_sharpness(seq), abs=1e-12)
    assert scores.c == pytest.approx(score_color(seq), abs=1e-12)
    assert scores.e == pytest.approx(score_edge(seq), abs=1e-12)


def test_raw_baseline_sensitive_to_brightness_shift():
    rng = np.random.default_rng(11)
    f1 = np.clip(_random_frame(rng, size=32), 0.0, 0.79)
    f2 = np.clip(f1 + 0.2, 0.0, 1.0)
    assert score_raw_baseline(_seq([f1, f2])) > 0.0


def test_raw_baseline_matches_ssim_oracle():
    rng = np.random.default_rng(12)
    f1 = _random_frame(rng, size=32)
    f2 = _random_frame(rng, size=32)
    expect = 1.0 - imaging.ssim(imaging.to_grayscale(f1), imaging.to_grayscale(f2))
    assert score_raw_baseline(_seq([f1, f2])) == pytest.approx(
        np.clip(expect, 0, 1), abs=1e-12
    )


# ---------------------------------------------------------------------------
# invariants


def test_prefix_monotonicity():
    rng = np.random.default_rng(13)
    for _ in range(5):
        frames = [_random_frame(rng, size=24) for _ in range(5)]
        prev = np.zeros(4)
        for k in range(2, 6):
            scores = score_all(_seq(frames[:k])).as_array()
            assert np.all(scores >= prev - 1e-15)
            prev = scores


def test_reversal_invariance():
    rng = np.random.default_rng(14)
    frames = [_random_frame(rng, size=24) for _ in range(4)]
    fwd = score_all(_seq(frames)).as_array()
    rev = score_all(_seq(frames[::-1])).as_array()
    assert np.allclose(fwd, rev, atol=1e-12)
    assert score_raw_baseline(_seq(frames)) == pytest.approx(
        score_raw_baseline(_seq(frames[::-1])), abs=1e-12
    )


def test_color_score_bounded_by_half():
    rng = np.random.default_rng(15)
    for _ in range(5):
        frames = [_random_frame(rng) for _ in range(3)]
        assert score_color(_seq(frames)) <= 0.5


def test_pair_distances_shape_and_incremental_consistency():
    rng = np.random.default_rng(16)
    frames = [_random_frame(rng, size=24) for _ in range(4)]
    seq = _seq(frames)
    dists = pair_distances(seq)
    assert dists.shape == (3, 4)
    feats = [extract_frame_features(f) for f in frames]
    for i in range(3):
        assert np.allclose(
            dists[i], pair_distance(feats[i], feats[i + 1]), atol=1e-15
        )
    assert np.allclose(dists.max(axis=0), score_all(seq).as_array(), atol=1e-15)
