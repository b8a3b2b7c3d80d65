import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import max_rel_error, numeric_grad, random_net, smooth_batch
from mmprog.models import AuxiliaryModel, forward, logistic_loss, mean_loss_gradient, sigmoid
from mmprog.regularization import (
    Batch,
    Mode,
    RegKind,
    RegularizerError,
    RegularizerSpec,
    aa_gradient_logit,
    aa_regularizer,
    kl_bernoulli,
    objective,
    objective_gradient,
    sc_regularizer,
    stage_means,
)

AUX = AuxiliaryModel(("age", "ldh"), np.array([1.0, 0.5]), 0.0)


# ---------------------------------------------------------------- KL


def test_kl_values():
    assert kl_bernoulli(0.5, 0.5) == 0
    assert kl_bernoulli(0.5, 0.25) == pytest.approx(0.143841, abs=1e-6)
    assert kl_bernoulli(0.9, 0.1) == pytest.approx(0.8 * np.log(9), abs=1e-12)
    assert kl_bernoulli(0.9, 0.1) == pytest.approx(1.757780, abs=1e-6)


def test_kl_random_nonnegative_and_pinsker():
    rng = np.random.default_rng(0)
    g, h = rng.random(100_000), rng.random(100_000)
    kl = kl_bernoulli(g, h)
    assert (kl >= 0).all()
    # Pinsker: KL >= 2 (g - h)^2, a floor independent of the implementation
    assert (kl >= 2 * (g - h) ** 2 - 1e-15).all()


def test_kl_near_equal_is_not_negative():
    g = np.linspace(0.01, 0.99, 999)
    kl = kl_bernoulli(g, g + 1e-12)
    assert (kl >= 0).all() and kl.max() < 1e-12


def test_aa_regularizer_examples():
    g = np.array([0.5, 0.3])
    assert aa_regularizer(np.array([0.25, 0.3]), g) == pytest.approx(0.0719205, abs=1e-6)
    assert aa_regularizer(g, g) == 0
    with pytest.raises(RegularizerError):
        aa_regularizer(np.array([]), np.array([]))


@given(st.lists(st.tuples(st.floats(0.01, 0.99), st.floats(0.01, 0.99)), min_size=1, max_size=20), st.randoms())
def test_aa_order_invariant(pairs, rnd):
    g, h = map(np.array, zip(*pairs))
    idx = list(range(len(g)))
    rnd.shuffle(idx)
    assert aa_regularizer(h[idx], g[idx]) == pytest.approx(aa_regularizer(h, g), rel=1e-12, abs=1e-15)


def test_aa_gradient_logit():
    assert aa_gradient_logit(0.3, 0.8) == pytest.approx(0.5)
    assert aa_gradient_logit(0.4, 0.4) == 0
    assert aa_gradient_logit(0.2, 0.6) > 0
    # finite difference of KL(g || sigmoid(z)) in z
    g, z, eps = 0.3, np.log(0.8 / 0.2), 1e-6
    fd = (kl_bernoulli(g, sigmoid(z + eps)) - kl_bernoulli(g, sigmoid(z - eps))) / (2 * eps)
    assert fd == pytest.approx(0.5, abs=1e-8)


# ---------------------------------------------------------------- stage consistency


def test_stage_means_examples(caplog):
    assert stage_means([0, 1], [2, 2])[1] == 0.5
    assert stage_means([1, 1, 1], [3, 3, 3])[2] == 1.0
    with caplog.at_level(logging.WARNING):
        mu = stage_means([0, 1], [2, 2])
    assert np.isnan(mu[0]) and np.isnan(mu[2])
    assert "stage 1" in caplog.text


def test_stage_means_reference_counts():
    labels = np.concatenate([np.r_[np.ones(18), np.zeros(93)], np.r_[np.ones(325), np.zeros(270)], np.r_[np.ones(74), np.zeros(32)]])
    stages = np.repeat([1, 2, 3], [111, 595, 106])
    mu = stage_means(labels, stages)
    np.testing.assert_allclose(mu, [18 / 111, 325 / 595, 74 / 106])
    np.testing.assert_allclose(mu, [0.162, 0.546, 0.698], atol=5e-4)


def test_sc_values():
    mu = np.array([0.2, 0.5, 0.7])
    assert sc_regularizer([0.2, 0.5, 0.7], [1, 2, 3], mu) == 0
    assert sc_regularizer([0.0, 1.0], [2, 2], mu) == pytest.approx(0.25, abs=1e-12)
    # sum over stages, mean within a stage
    assert sc_regularizer([0.0, 1.0, 0.2, 1.2], [2, 2, 3, 3], mu) == pytest.approx(0.5, abs=1e-12)


def test_sc_empty_stage_and_undefined_mean():
    mu = np.array([np.nan, 0.5, 0.7])
    assert sc_regularizer([0.5], [2], mu) == 0
    with pytest.raises(RegularizerError):
        sc_regularizer([0.5], [1], mu)


@given(st.lists(st.tuples(st.floats(0, 1), st.sampled_from([1, 2, 3])), min_size=1, max_size=30), st.randoms())
def test_sc_nonnegative_and_order_invariant(rows, rnd):
    h, s = map(np.array, zip(*rows))
    mu = np.array([0.2, 0.5, 0.7])
    v = sc_regularizer(h, s, mu)
    assert v >= 0
    idx = list(range(len(h)))
    rnd.shuffle(idx)
    assert sc_regularizer(h[idx], s[idx], mu) == pytest.approx(v, rel=1e-12, abs=1e-15)


def test_spec_validation():
    with pytest.raises(RegularizerError):
        RegularizerSpec(RegKind.AA)
    with pytest.raises(RegularizerError):
        RegularizerSpec(RegKind.SC, alpha=-1)
    with pytest.raises(RegularizerError):
        RegularizerSpec(RegKind.SC, stage_means=[0.1, 1.5, 0.2])


# ---------------------------------------------------------------- objective


def _batch(rng, p, n=16, d=5):
    X = smooth_batch(rng, p, n, d)
    return Batch(X, rng.integers(0, 2, n).astype(float), rng.choice([1, 2, 3], n), rng.uniform(0.05, 0.95, n))


def _specs(alpha=1.7):
    return [
        RegularizerSpec(RegKind.NONE, alpha),
        RegularizerSpec(RegKind.AA, alpha, aux=AUX),
        RegularizerSpec(RegKind.SC, alpha, stage_means=np.array([0.2, 0.5, 0.7])),
    ]


def test_objective_total():
    rng = np.random.default_rng(1)
    p = random_net(rng)
    b = _batch(rng, p)
    for spec in _specs():
        v = objective(p, b, spec)
        assert v.total == pytest.approx(v.data_term + v.alpha * v.reg_term, rel=1e-15)
        assert v.data_term == pytest.approx(float(logistic_loss(p.predict(b.X), b.y).mean()))
    v = objective(p, b, _specs()[0])
    assert v.reg_term == 0 and v.total == v.data_term
    v0 = objective(p, b, _specs(0.0)[1])
    assert v0.total == v0.data_term


def test_objective_gradient_finite_differences():
    rng = np.random.default_rng(2)
    for spec in _specs():
        for _ in range(3):
            p = random_net(rng, (5, 6, 3, 1))
            b = _batch(rng, p)
            _, grads = objective_gradient(p, b, spec)
            num = numeric_grad(lambda: objective(p, b, spec).total, p.params())
            assert max_rel_error(grads, num) < 1e-4


def test_reg_only_gradient_finite_differences():
    rng = np.random.default_rng(3)
    for spec in _specs()[1:]:
        p = random_net(rng, (5, 4, 1))
        b = _batch(rng, p)
        value, grads = objective_gradient(p, b, spec, Mode.REG_ONLY)
        num = numeric_grad(lambda: objective(p, b, spec).reg_term, p.params())
        assert max_rel_error(grads, num) < 1e-4
        # the reported value still carries both terms
        assert value.total == pytest.approx(value.data_term + spec.alpha * value.reg_term)
    with pytest.raises(RegularizerError):
        objective_gradient(p, b, RegularizerSpec(), Mode.REG_ONLY)


def test_alpha_zero_and_doubling():
    rng = np.random.default_rng(4)
    p = random_net(rng)
    b = _batch(rng, p)
    _, pure = mean_loss_gradient(p, b.X, b.y)
    for spec in _specs(0.0):
        _, g0 = objective_gradient(p, b, spec)
        for a, c in zip(g0, pure):
            np.testing.assert_allclose(a, c, atol=1e-15)
    for spec in _specs(1.0)[1:]:
        _, g1 = objective_gradient(p, b, spec)
        _, g2 = objective_gradient(p, b, spec.with_alpha(2.0))
        for a, c, d in zip(g1, g2, pure):
            np.testing.assert_allclose(c - d, 2 * (a - d), atol=1e-13)
    _, lo = objective_gradient(p, b, _specs()[1], Mode.LOSS_ONLY)
    for a, c in zip(lo, pure):
        np.testing.assert_allclose(a, c, atol=1e-15)


def test_missing_batch_fields():
    rng = np.random.default_rng(5)
    p = random_net(rng)
    b = Batch(rng.normal(size=(4, 5)), np.array([0, 1, 0, 1.0]))
    with pytest.raises(RegularizerError):
        objective(p, b, _specs()[1])
    with pytest.raises(RegularizerError):
        objective(p, b, _specs()[2])
