import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_net
from mmprog.cohort import FEATURES
from mmprog.evaluation import (
    MAX_EXACT_FEATURES,
    BaselineTable,
    accuracy,
    auc,
    evaluate_baselines,
    rank_features,
    shap_rank_table,
    shap_report,
    shapley_exact,
    shapley_sampled,
)


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def brute_shapley(f, x, baseline):
    """Shapley values from the permutation definition, enumerating all n!
    orderings."""
    n = len(x)
    phi = np.zeros(n)
    perms = list(itertools.permutations(range(n)))
    for perm in perms:
        z = baseline.copy()
        prev = f(z[None])[0]
        for j in perm:
            z[j] = x[j]
            cur = f(z[None])[0]
            phi[j] += cur - prev
            prev = cur
    return phi / len(perms)


# ---------------------------------------------------------------- metrics


def test_accuracy_examples():
    assert accuracy([0.9, 0.1], [1, 0]) == 1.0
    assert accuracy([0.5, 0.5], [1, 1]) == 1.0
    assert accuracy([0.9, 0.2, 0.6, 0.4], [1, 0, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        accuracy([0.1], [1, 0])
    with pytest.raises(ValueError):
        accuracy([], [])


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert math.isnan(auc([0.1, 0.2], [1, 1]))


def test_auc_brute_force_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(2, 40))
        scores = rng.integers(0, 6, n) / 5.0  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert abs(auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12


def test_baselines_structure(tmp_path):
    rng = np.random.default_rng(1)
    y = {"kf": rng.integers(0, 2, 30), "test": rng.integers(0, 2, 10)}
    preds = {m: {d: rng.random(len(v)) for d, v in y.items()} for m in ("auxiliary", "stage_based", "alpha0")}
    table = evaluate_baselines(preds, y)
    assert len(table.rows) == 6
    assert table.get("kf", "alpha0") == (accuracy(preds["alpha0"]["kf"], y["kf"]), auc(preds["alpha0"]["kf"], y["kf"]))
    table.write_csv(tmp_path / "b.csv")
    rows = list(csv.reader(open(tmp_path / "b.csv")))
    assert rows[0] == ["dataset", "model", "acc", "auc"]
    assert {(r[0], r[1]) for r in rows[1:]} == {(d, m) for d in y for m in preds}
    with pytest.raises(KeyError):
        table.get("kf", "nope")


# ---------------------------------------------------------------- Shapley


def test_additive_model():
    w = np.array([1.0, -2.0, 0.5, 3.0])
    f = lambda X: X @ w
    x, b = np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.5, 0.0, -1.0, 1.0])
    np.testing.assert_allclose(shapley_exact(f, x, b), w * (x - b), atol=1e-12)
    np.testing.assert_allclose(shapley_sampled(f, x, b, 50, seed=0), w * (x - b), atol=1e-12)


def test_single_feature_and_symmetry():
    f = lambda X: np.tanh(X[:, 0])
    assert shapley_exact(f, np.array([2.0]), np.array([0.0]))[0] == pytest.approx(np.tanh(2.0))
    g = lambda X: X[:, 0] * X[:, 1] + X[:, 2]
    phi = shapley_exact(g, np.array([1.5, 1.5, 0.3]), np.zeros(3))
    assert phi[0] == pytest.approx(phi[1], abs=1e-15)


def test_exact_matches_permutation_definition():
    rng = np.random.default_rng(2)
    p = random_net(rng, (5, 6, 1), scale=1.0)
    x, b = rng.normal(size=5), rng.normal(size=5)
    np.testing.assert_allclose(shapley_exact(p.predict, x, b), brute_shapley(p.predict, x, b), atol=1e-12)


def test_dummy_feature_zero():
    rng = np.random.default_rng(3)
    p = random_net(rng, (6, 5, 1), scale=1.0)
    p.weights[0][3, :] = 0.0
    phi = shapley_exact(p.predict, rng.normal(size=6), np.zeros(6))
    assert phi[3] == 0.0


def test_subset_pins_other_features():
    rng = np.random.default_rng(4)
    p = random_net(rng, (5, 4, 1), scale=1.0)
    x, b = rng.normal(size=5), np.zeros(5)
    phi = shapley_exact(p.predict, x, b, features=[0, 2])
    assert phi[1] == phi[3] == phi[4] == 0
    pinned = b.copy()
    pinned[[1, 3, 4]] = x[[1, 3, 4]]
    assert phi.sum() == pytest.approx(p.predict(x)[0] - p.predict(pinned)[0], abs=1e-12)


def test_exact_refuses_large():
    f = lambda X: X.sum(axis=1)
    with pytest.raises(ValueError, match="sampled"):
        shapley_exact(f, np.zeros(MAX_EXACT_FEATURES + 1), np.zeros(MAX_EXACT_FEATURES + 1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_exact_efficiency_property(seed):
    rng = np.random.default_rng(seed)
    p = random_net(rng, (7, 8, 4, 1), scale=1.0)
    x = rng.normal(size=7)
    phi = shapley_exact(p.predict, x, np.zeros(7))
    assert abs(phi.sum() - (p.predict(x)[0] - p.predict(np.zeros(7))[0])) <= 1e-9


def test_sampled_deterministic_and_telescoping():
    rng = np.random.default_rng(5)
    p = random_net(rng, (7, 5, 1), scale=1.0)
    x = rng.normal(size=7)
    a = shapley_sampled(p.predict, x, np.zeros(7), 100, seed=3)
    b = shapley_sampled(p.predict, x, np.zeros(7), 100, seed=3)
    np.testing.assert_array_equal(a, b)
    # every sampled ordering telescopes, so efficiency holds per run too
    assert a.sum() == pytest.approx(p.predict(x)[0] - p.predict(np.zeros(7))[0], abs=1e-12)
    with pytest.raises(ValueError):
        shapley_sampled(p.predict, x, np.zeros(7), 0)


def test_rank_ties_follow_feature_order():
    names = ("a", "b", "c", "d")
    assert rank_features(np.array([1.0, 2.0, 1.0, 2.0]), names) == ("b", "d", "a", "c")


def test_shap_report_and_table(tmp_path):
    n = len(FEATURES)
    w = np.zeros(n)
    w[FEATURES.index("ldh")], w[FEATURES.index("age")], w[FEATURES.index("b2m")] = 3.0, 2.0, 1.0
    f = lambda X: X @ w
    X = np.random.default_rng(6).normal(size=(10, n))
    rep = shap_report(f, X, method="sampled", n_permutations=20, seed=1)
    assert rep.ranking[:3] == ("ldh", "age", "b2m")
    assert sorted(rep.ranking) == sorted(FEATURES)
    np.testing.assert_allclose(rep.mean_abs, np.abs(X * w).mean(axis=0), atol=1e-12)
    assert rep.method == "sampled" and rep.n_permutations == 20 and rep.seed == 1

    table = shap_rank_table({1.0: f, 0.0: f}, X, n_permutations=10)
    assert table.alphas == (0.0, 1.0)
    table.write_top_csv(tmp_path / "top.csv")
    table.write_stage_csv(tmp_path / "stage.csv")
    assert (tmp_path / "top.csv").read_text().splitlines() == [
        "alpha,rank1,rank2,rank3",
        "0,ldh,age,b2m",
        "1,ldh,age,b2m",
    ]
    assert (tmp_path / "stage.csv").read_text().splitlines()[1] == "0,1,4,3,2"
