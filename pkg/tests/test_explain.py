"""Shapley tests: axioms, permutation-enumeration oracle, disagreement."""

import itertools

import numpy as np
import pytest

from eyedas import explain, gbm


def _fit_small_model(rng, n=30, trees=3, depth=2):
    X = rng.uniform(size=(n, 4))
    y = (X[:, 0] + 0.5 * X[:, 1] > 0.75).astype(float)
    if y.min() == y.max():
        y[0] = 1.0 - y[0]
    return gbm.fit(X, y, n_estimators=trees, max_depth=depth), X


def _walk(tree, row):
    node = 0
    while tree.feature[node] >= 0:
        node = (
            tree.left[node]
            if row[tree.feature[node]] <= tree.threshold[node]
            else tree.right[node]
        )
    return tree.value[node]


def _margin_oracle(model, row):
    return model.base_score + model.learning_rate * sum(
        _walk(t, row) for t in model.trees
    )


def _shapley_permutation_oracle(model, x, background):
    """Average marginal contribution over all 4! feature orderings,
    with its own hybrid construction and tree walker."""
    n = 4
    phi = np.zeros(n)
    for perm in itertools.permutations(range(n)):
        have = []
        prev = np.mean(
            [_margin_oracle(model, b.copy()) for b in background]
        )
        for j in perm:
            have.append(j)
            total = 0.0
            for b in background:
                hybrid = b.copy()
                hybrid[have] = x[have]
                total += _margin_oracle(model, hybrid)
            cur = total / len(background)
            phi[j] += cur - prev
            prev = cur
    return phi / 24.0


def test_phi_matches_permutation_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        model, X = _fit_small_model(rng)
        x = rng.uniform(size=4)
        background = X[:8]
        got = explain.shapley(model, x, background)
        expect = _shapley_permutation_oracle(model, x, background)
        assert np.allclose(got.phi, expect, atol=1e-12)


def test_efficiency_holds_exactly():
    rng = np.random.default_rng(1)
    model, X = _fit_small_model(rng, trees=10, depth=3)
    for row in rng.uniform(size=(20, 4)):
        attr = explain.shapley(model, row, X)
        assert abs(attr.efficiency_residual()) < 1e-9
        assert attr.prediction == pytest.approx(
            gbm.predict_margin(model, row), abs=1e-12
        )


def test_dummy_feature_gets_zero_phi():
    # Train on data where feature 2 is constant: no tree can split on it.
    rng = np.random.default_rng(2)
    X = rng.uniform(size=(30, 4))
    X[:, 2] = 0.5
    y = (X[:, 0] > 0.5).astype(float)
    model = gbm.fit(X, y, n_estimators=5, max_depth=3)
    assert all(np.all(t.feature != 2) for t in model.trees)
    attr = explain.shapley(model, rng.uniform(size=4), X)
    assert attr.phi[2] == 0.0


def test_instance_equal_to_single_background_row_is_all_zero():
    rng = np.random.default_rng(3)
    model, X = _fit_small_model(rng)
    row = X[4]
    attr = explain.shapley(model, row, row.reshape(1, 4))
    assert np.all(attr.phi == 0.0)
    assert attr.base_value == attr.prediction


def test_shapley_input_validation():
    rng = np.random.default_rng(4)
    model, X = _fit_small_model(rng)
    with pytest.raises(ValueError):
        explain.shapley(model, np.zeros(4), np.empty((0, 4)))
    with pytest.raises(ValueError):
        explain.shapley(model, np.zeros(3), X)
    with pytest.raises(ValueError):
        explain.shapley(model, np.array([np.inf, 0, 0, 0]), X)


# ---------------------------------------------------------------------------
# disagreement


def _attr(phi):
    return explain.ShapleyAttribution(
        phi=np.asarray(phi, dtype=float), base_value=0.0, prediction=float(np.sum(phi))
    )


def test_disagreement_definition():
    assert not explain.disagreement(_attr([0.2, 0.1, 0.3, 0.05]), "bsce")
    assert explain.disagreement(_attr([0.2, -0.1, 0.0, 0.0]), ("b", "s"))
    assert not explain.disagreement(_attr([0.2, -0.1, 0.0, 0.0]), ("b", "c"))
    assert not explain.disagreement(_attr([0.0, 0.0, 0.0, 0.0]), "bsce")
    for single in "bsce":
        assert not explain.disagreement(_attr([0.2, -0.1, 0.3, -0.4]), single)
    with pytest.raises(ValueError):
        explain.disagreement(_attr([0.1, 0.1, 0.1, 0.1]), [])
    with pytest.raises(ValueError):
        explain.disagreement(_attr([0.1, 0.1, 0.1, 0.1]), ["x"])


def test_disagreement_rate_matches_per_instance_oracle():
    rng = np.random.default_rng(5)
    model, X = _fit_small_model(rng, trees=5, depth=3)
    rows = rng.uniform(size=(12, 4))
    background = X[:6]
    committee = ("b", "s", "e")
    rate = explain.disagreement_rate(model, rows, background, committee)
    expect = np.mean(
        [
            explain.disagreement(
                explain.shapley(model, row, background), committee
            )
            for row in rows
        ]
    )
    assert rate == pytest.approx(expect, abs=1e-12)


def test_single_expert_committee_never_disagrees():
    rng = np.random.default_rng(6)
    model, X = _fit_small_model(rng)
    rows = rng.uniform(size=(10, 4))
    for single in "bsce":
        assert explain.disagreement_rate(model, rows, X[:5], single) == 0.0


def test_multi_expert_committees_enumeration():
    committees = explain.multi_expert_committees()
    assert len(committees) == 11
    assert committees[0] == ("b", "s")
    assert committees[-1] == ("b", "s", "c", "e")
    assert all(len(c) >= 2 for c in committees)
