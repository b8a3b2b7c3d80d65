"""Shared test oracles."""
import numpy as np

from mmprog.models import init_predictor


def numeric_grad(fn, params, step=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. each array in
    ``params`` (perturbed in place and restored)."""
    out = []
    for P in params:
        g = np.zeros_like(P)
        it = np.nditer(P, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = P[i]
            P[i] = old + step
            up = fn()
            P[i] = old - step
            down = fn()
            P[i] = old
            g[i] = (up - down) / (2 * step)
        out.append(g)
    return out


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def random_net(rng, sizes=(5, 6, 4, 1), scale=0.4):
    """Random Gaussian parameters.  Keep ``scale`` modest for finite-difference
    checks: near-saturated outputs make the oracle itself lose precision."""
    p = init_predictor(sizes, int(rng.integers(2**31)))
    for P in p.params():
        P[...] = rng.normal(0, scale, P.shape)
    return p


def near_kink(p, X, margin=1e-3):
    """True if some hidden pre-activation lies within ``margin`` of the ReLU
    kink, where the loss is not differentiable and finite differences
    straddle two linear pieces."""
    from mmprog.models import forward

    _, cache = forward(p, X)
    return any(np.abs(z).min() < margin for z in cache.pre[:-1])


def smooth_batch(rng, p, n, n_features):
    """Draw a standard-normal batch away from ReLU kinks."""
    while True:
        X = rng.normal(size=(n, n_features))
        if not near_kink(p, X):
            return X
