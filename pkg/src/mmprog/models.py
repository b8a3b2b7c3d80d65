"""Hypothesis classes: a two-feature logistic regression (the auxiliary
model) and a fully connected ReLU network with a sigmoid output (the main
predictor).  Both are plain numpy with hand-written gradients.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mmprog.cohort import FEATURES, Preprocessor

EPS = 1e-7
FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


class DegenerateFitError(ModelError):
    pass


class StaleCacheError(RuntimeError):
    pass


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def clip_prob(p):
    return np.clip(p, EPS, 1.0 - EPS)


def logistic_loss(h, y):
    """Per-sample logistic loss ``-[y ln h + (1-y) ln(1-h)]`` with h clipped."""
    h = clip_prob(np.asarray(h, dtype=float))
    y = np.asarray(y, dtype=float)
    return -(y * np.log(h) + (1.0 - y) * np.log1p(-h))


@dataclass(frozen=True)
class LossReport:
    mean_logistic_loss: float
    per_sample: np.ndarray

    @classmethod
    def of(cls, h, y) -> "LossReport":
        per = logistic_loss(h, y)
        return cls(float(per.mean()), per)


# --------------------------------------------------------------------------
# Auxiliary logistic regression


@dataclass(frozen=True)
class LogRegFit:
    weights: np.ndarray
    bias: float
    n_iter: int
    grad_norm: float


@dataclass(frozen=True)
class AuxiliaryModel:
    feature_pair: tuple[str, str]
    weights: np.ndarray
    bias: float
    preprocessor: Preprocessor | None = None

    def __post_init__(self):
        a, b = self.feature_pair
        if a == b:
            raise ModelError("auxiliary feature pair must be two distinct features")
        for name in self.feature_pair:
            if name not in FEATURES:
                raise KeyError(f"unknown feature {name!r}")
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float).reshape(2))

    @property
    def columns(self) -> tuple[int, int]:
        return FEATURES.index(self.feature_pair[0]), FEATURES.index(self.feature_pair[1])

    def predict_standardized(self, X: np.ndarray) -> np.ndarray:
        """Soft labels for full standardized feature rows (n, len(FEATURES))."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return sigmoid(X[:, list(self.columns)] @ self.weights + self.bias)

    def predict_raw(self, raw: np.ndarray) -> np.ndarray:
        """Soft labels for raw rows, using the model's own fit-set statistics."""
        if self.preprocessor is None:
            raise ModelError("auxiliary model has no preprocessing statistics attached")
        return self.predict_standardized(self.preprocessor.transform(np.atleast_2d(raw)))


def aux_predict(model: AuxiliaryModel, x: np.ndarray) -> np.ndarray | float:
    """ĝ(x) for standardized feature rows; a scalar for a single 1-D row."""
    out = model.predict_standardized(x)
    return float(out[0]) if np.ndim(x) == 1 else out


def _logreg_loss_grad(X1, y, theta):
    z = X1 @ theta
    h = sigmoid(z)
    loss = float(logistic_loss(h, y).mean())
    grad = X1.T @ (h - y) / len(y)
    return loss, grad


def fit_logreg(
    X: np.ndarray,
    y: np.ndarray,
    *,
    tol: float = 1e-6,
    max_iter: int = 5000,
    step0: float = 4.0,
) -> LogRegFit:
    """Unregularised logistic regression by full-batch gradient descent with
    Armijo backtracking.  Stops when the gradient norm drops below ``tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X[:, None]
    if len(y) < 2:
        raise DegenerateFitError("need at least two samples")
    if y.min() == y.max():
        raise DegenerateFitError("labels contain a single class")
    X1 = np.hstack([X, np.ones((len(y), 1))])
    theta = np.zeros(X1.shape[1])
    loss, grad = _logreg_loss_grad(X1, y, theta)
    step = step0
    it = 0
    gnorm = float(np.linalg.norm(grad))
    while gnorm >= tol and it < max_iter:
        g2 = gnorm * gnorm
        while True:
            cand = theta - step * grad
            c_loss, c_grad = _logreg_loss_grad(X1, y, cand)
            if c_loss <= loss - 0.5 * step * g2 or step < 1e-12:
                break
            step *= 0.5
        theta, loss, grad = cand, c_loss, c_grad
        gnorm = float(np.linalg.norm(grad))
        step = min(step * 2.0, 1e3)
        it += 1
    return LogRegFit(weights=theta[:-1], bias=float(theta[-1]), n_iter=it, grad_norm=gnorm)


def fit_auxiliary(
    X_std: np.ndarray,
    y: np.ndarray,
    pair: tuple[str, str],
    preprocessor: Preprocessor | None = None,
    **opt,
) -> AuxiliaryModel:
    cols = [FEATURES.index(pair[0]), FEATURES.index(pair[1])]
    fit = fit_logreg(np.asarray(X_std)[:, cols], y, **opt)
    return AuxiliaryModel(tuple(pair), fit.weights, fit.bias, preprocessor)


# --------------------------------------------------------------------------
# Feed-forward network


@dataclass
class Predictor:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[l] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    seed: int | None = None
    preprocessor: Preprocessor | None = None
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise ModelError("layer_sizes must have an input size and end with 1")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ModelError("parameter list does not match layer_sizes")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_sizes[l], self.layer_sizes[l + 1]) or b.shape != (self.layer_sizes[l + 1],):
                raise ModelError(f"layer {l} parameter shapes do not match layer_sizes")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        """Parameters in (W0, b0, W1, b1, ...) order; the arrays are live."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def apply_update(self, grads: Sequence[np.ndarray], lr: float) -> None:
        for p, g in zip(self.params(), grads):
            p -= lr * g
        self.version += 1

    def copy(self) -> "Predictor":
        return Predictor(
            self.layer_sizes,
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
            self.preprocessor,
            self.version,
        )

    def predict(self, X: np.ndarray) -> np.ndarray:
        return forward(self, X)[0]


def init_predictor(layer_sizes: Sequence[int], seed: int) -> Predictor:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = tuple(int(s) for s in layer_sizes)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Predictor(sizes, weights, biases, seed=seed)


@dataclass(frozen=True)
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activations of each layer
    h: np.ndarray
    version: int

    @property
    def logit(self) -> np.ndarray:
        return self.pre[-1][:, 0]


def forward(p: Predictor, X: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != p.layer_sizes[0]:
        raise ModelError(f"expected {p.layer_sizes[0]} input features, got {X.shape[1]}")
    inputs, pre = [], []
    a = X
    last = len(p.weights) - 1
    for l, (W, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(a)
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0) if l < last else z
    h = clip_prob(sigmoid(a[:, 0]))
    cache = ForwardCache(inputs, pre, h, p.version)
    return (h[0:1] if single else h), cache


def backward(p: Predictor, cache: ForwardCache, upstream: np.ndarray, wrt: str = "logit") -> list[np.ndarray]:
    """Parameter gradients of ``J = sum_i upstream_i * out_i``.

    ``upstream`` holds per-sample dJ/dz (``wrt="logit"``, z the output
    pre-activation) or dJ/dh (``wrt="prob"``).  The result is ordered like
    :meth:`Predictor.params`.
    """
    if cache.version != p.version:
        raise StaleCacheError("forward cache was computed with different parameters")
    d = np.asarray(upstream, dtype=float).reshape(-1)
    if wrt == "prob":
        s = sigmoid(cache.logit)
        d = d * s * (1.0 - s)
    elif wrt != "logit":
        raise ValueError("wrt must be 'logit' or 'prob'")
    delta = d[:, None]
    grads: list[np.ndarray] = []
    for l in range(len(p.weights) - 1, -1, -1):
        grads.append(delta.sum(axis=0))  # bias
        grads.append(cache.inputs[l].T @ delta)  # weight
        if l > 0:
            delta = (delta @ p.weights[l].T) * (cache.pre[l - 1] > 0)
    grads.reverse()
    return grads


def mean_loss_gradient(p: Predictor, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    h, cache = forward(p, X)
    y = np.asarray(y, dtype=float)
    loss = float(logistic_loss(h, y).mean())
    return loss, backward(p, cache, (sigmoid(cache.logit) - y) / len(y))


# --------------------------------------------------------------------------
# Serialization


def save_predictor(p: Predictor, path: str | Path) -> None:
    """Write an ``.npz`` holding layer sizes, row-major parameters, the
    initialization seed and the preprocessing statistics (if any)."""
    arrays = {f"param_{i}": a for i, a in enumerate(p.params())}
    meta = {"format_version": FORMAT_VERSION, "layer_sizes": list(p.layer_sizes), "seed": p.seed}
    if p.preprocessor is not None:
        pp = p.preprocessor
        arrays.update(
            prep_impute=pp.impute_means, prep_center=pp.center, prep_scale=pp.scale, prep_constant=pp.constant
        )
        meta["prep_fit_ids"] = list(pp.fit_ids)
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_predictor(path: str | Path) -> Predictor:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ModelError(f"unsupported model format version {meta.get('format_version')!r}")
        sizes = tuple(meta["layer_sizes"])
        n = 2 * (len(sizes) - 1)
        params = [z[f"param_{i}"].copy() for i in range(n)]
        prep = None
        if "prep_impute" in z.files:
            prep = Preprocessor(
                z["prep_impute"].copy(),
                z["prep_center"].copy(),
                z["prep_scale"].copy(),
                z["prep_constant"].copy(),
                tuple(meta.get("prep_fit_ids", ())),
            )
    return Predictor(sizes, params[0::2], params[1::2], seed=meta["seed"], preprocessor=prep)
