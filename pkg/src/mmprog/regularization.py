"""Interpretability regularizers and the regularized training objective.

Two penalties are provided:

* auxiliary alignment -- mean Bernoulli KL divergence from the frozen soft
  labels of an interpretable model to the predictor's outputs;
* stage consistency -- for every R-ISS stage, the mean squared deviation of
  the predictions from that stage's empirical death rate, summed over stages.

The objective is ``mean logistic loss + alpha * R``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from mmprog.models import AuxiliaryModel, Predictor, backward, clip_prob, forward, logistic_loss, sigmoid

log = logging.getLogger(__name__)

STAGES = (1, 2, 3)


class RegularizerError(ValueError):
    pass


class RegKind(str, Enum):
    NONE = "none"
    AA = "aa"
    SC = "stage"


class Mode(str, Enum):
    LOSS_PLUS_REG = "loss_plus_reg"
    LOSS_ONLY = "loss_only"
    REG_ONLY = "reg_only"


@dataclass(frozen=True)
class RegularizerSpec:
    kind: RegKind = RegKind.NONE
    alpha: float = 0.0
    aux: AuxiliaryModel | None = None
    # per-stage mean outcome (index 0 -> stage 1); None = take from the active training set
    stage_means: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise RegularizerError("alpha must be finite and >= 0")
        if self.kind is RegKind.AA and self.aux is None:
            raise RegularizerError("auxiliary alignment needs an auxiliary model")
        if self.stage_means is not None:
            mu = np.asarray(self.stage_means, dtype=float).reshape(len(STAGES))
            defined = mu[~np.isnan(mu)]
            if ((defined < 0) | (defined > 1)).any():
                raise RegularizerError("stage means must lie in [0, 1]")
            object.__setattr__(self, "stage_means", mu)

    def with_alpha(self, alpha: float) -> "RegularizerSpec":
        return RegularizerSpec(self.kind, alpha, self.aux, self.stage_means)

    def with_stage_means(self, mu) -> "RegularizerSpec":
        return RegularizerSpec(self.kind, self.alpha, self.aux, mu)


@dataclass(frozen=True)
class Batch:
    """Model-ready data: standardized features plus whatever the regularizer
    needs (frozen soft labels for alignment, stages for consistency)."""

    X: np.ndarray
    y: np.ndarray
    stages: np.ndarray | None = None
    soft: np.ndarray | None = None
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(
            self.X[idx],
            self.y[idx],
            None if self.stages is None else self.stages[idx],
            None if self.soft is None else self.soft[idx],
            tuple(self.ids[i] for i in idx) if self.ids else (),
        )


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    data_term: float
    reg_term: float
    alpha: float


# --------------------------------------------------------------------------
# Alignment


def kl_bernoulli(g, h):
    """KL(Bernoulli(g) || Bernoulli(h)) elementwise, both clipped to (0, 1)."""
    g = clip_prob(np.asarray(g, dtype=float))
    h = clip_prob(np.asarray(h, dtype=float))
    kl = g * (np.log(g) - np.log(h)) + (1 - g) * (np.log1p(-g) - np.log1p(-h))
    # rounding can leave about -1e-17 when g and h nearly coincide
    return np.maximum(kl, 0.0)


def aa_regularizer(h, g) -> float:
    """Mean KL divergence between soft labels ``g`` and predictions ``h``."""
    h = np.asarray(h, dtype=float)
    if h.size == 0:
        raise RegularizerError("alignment regularizer needs a nonempty dataset")
    return float(kl_bernoulli(g, h).mean())


def aa_regularizer_models(p: Predictor, aux: AuxiliaryModel, raw: np.ndarray) -> float:
    """Alignment penalty of predictor ``p`` against ``aux`` on raw rows."""
    if p.preprocessor is None:
        raise RegularizerError("predictor has no preprocessing statistics attached")
    h = p.predict(p.preprocessor.transform(raw))
    return aa_regularizer(h, aux.predict_raw(raw))


def aa_gradient_logit(g_val, h_val):
    """d KL(g || sigmoid(z)) / dz."""
    return np.asarray(h_val, dtype=float) - np.asarray(g_val, dtype=float)


# --------------------------------------------------------------------------
# Stage consistency


def stage_means(labels, stages) -> np.ndarray:
    """Empirical death rate per stage; NaN for a stage with no records."""
    labels = np.asarray(labels, dtype=float)
    stages = np.asarray(stages)
    mu = np.full(len(STAGES), np.nan)
    for k, s in enumerate(STAGES):
        sel = stages == s
        if sel.any():
            mu[k] = labels[sel].mean()
        else:
            log.warning("stage %d has no training records; its mean is undefined", s)
    return mu


def _sc_parts(h, stages, mu):
    h = np.asarray(h, dtype=float)
    stages = np.asarray(stages)
    mu = np.asarray(mu, dtype=float)
    value = 0.0
    grad_h = np.zeros_like(h)
    for k, s in enumerate(STAGES):
        sel = stages == s
        n_s = int(sel.sum())
        if n_s == 0:
            continue
        if np.isnan(mu[k]):
            raise RegularizerError(f"stage {s} has records but no defined mean")
        dev = h[sel] - mu[k]
        value += float((dev**2).sum() / n_s)
        grad_h[sel] = 2.0 * dev / n_s
    return value, grad_h


def sc_regularizer(h, stages, mu) -> float:
    return _sc_parts(h, stages, mu)[0]


# --------------------------------------------------------------------------
# Objective


def _reg_value_and_grad(h, logit, batch: Batch, spec: RegularizerSpec):
    """Regularizer value and its per-sample gradient w.r.t. the output logit."""
    if spec.kind is RegKind.NONE:
        return 0.0, np.zeros_like(h)
    if spec.kind is RegKind.AA:
        if batch.soft is None:
            raise RegularizerError("batch carries no soft labels for alignment")
        n = len(h)
        value = aa_regularizer(h, batch.soft)
        return value, aa_gradient_logit(batch.soft, sigmoid(logit)) / n
    if batch.stages is None:
        raise RegularizerError("batch carries no stage assignments")
    if spec.stage_means is None:
        raise RegularizerError("stage means are not set")
    value, grad_h = _sc_parts(h, batch.stages, spec.stage_means)
    s = sigmoid(logit)
    return value, grad_h * s * (1 - s)


def objective(p: Predictor, batch: Batch, spec: RegularizerSpec) -> ObjectiveValue:
    h, cache = forward(p, batch.X)
    data = float(logistic_loss(h, batch.y).mean())
    reg, _ = _reg_value_and_grad(h, cache.logit, batch, spec)
    return ObjectiveValue(data + spec.alpha * reg, data, reg, spec.alpha)


def objective_gradient(
    p: Predictor,
    batch: Batch,
    spec: RegularizerSpec,
    mode: Mode | str = Mode.LOSS_PLUS_REG,
) -> tuple[ObjectiveValue, list[np.ndarray]]:
    """Objective value and parameter gradients for the selected mode.

    ``loss_plus_reg`` differentiates ``L + alpha*R``, ``loss_only`` only
    ``L`` and ``reg_only`` only ``R`` (unscaled).  The returned
    :class:`ObjectiveValue` always reports ``L + alpha*R``.
    """
    mode = Mode(mode)
    h, cache = forward(p, batch.X)
    y = np.asarray(batch.y, dtype=float)
    n = len(y)
    data = float(logistic_loss(h, y).mean())
    reg, reg_grad = _reg_value_and_grad(h, cache.logit, batch, spec)
    data_grad = (sigmoid(cache.logit) - y) / n
    if mode is Mode.LOSS_PLUS_REG:
        upstream = data_grad + spec.alpha * reg_grad
    elif mode is Mode.LOSS_ONLY:
        upstream = data_grad
    else:
        if spec.kind is RegKind.NONE:
            raise RegularizerError("reg_only mode needs a regularizer")
        upstream = reg_grad
    value = ObjectiveValue(data + spec.alpha * reg, data, reg, spec.alpha)
    return value, backward(p, cache, upstream)
