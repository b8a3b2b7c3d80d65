"""Metrics, baseline tables and Shapley-value feature attribution."""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from mmprog.cohort import FEATURES

THRESHOLD = 0.5
MAX_EXACT_FEATURES = 12
DEFAULT_PERMUTATIONS = 2000
STAGING_FEATURES = ("ldh", "albumin", "b2m", "age")


def accuracy(scores, labels, threshold: float = THRESHOLD) -> float:
    """Fraction of samples where ``score >= threshold`` matches the label."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"length mismatch: {scores.shape} scores vs {labels.shape} labels")
    if scores.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(((scores >= threshold).astype(int) == labels).mean())


def auc(scores, labels) -> float:
    """ROC AUC as the Mann-Whitney statistic (ties count one half).

    Returns NaN when only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("length mismatch between scores and labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)  # average ranks handle ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricsRow:
    dataset: str
    accuracy: float
    auc: float
    loss1: float = math.nan
    reg_loss: float = math.nan


# --------------------------------------------------------------------------
# Baselines


@dataclass(frozen=True)
class BaselineTable:
    rows: list[tuple[str, str, float, float]]  # (dataset, model, acc, auc)

    def get(self, dataset: str, model: str) -> tuple[float, float]:
        for d, m, a, u in self.rows:
            if d == dataset and m == model:
                return a, u
        raise KeyError((dataset, model))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "model", "acc", "auc"])
            for d, m, a, u in self.rows:
                w.writerow([d, m, _num(a), _num(u)])


BASELINE_MODELS = ("auxiliary", "stage_based", "alpha0")


def evaluate_baselines(
    predictions: Mapping[str, Mapping[str, np.ndarray]],
    labels: Mapping[str, np.ndarray],
) -> BaselineTable:
    """Accuracy/AUC grid of baseline models over datasets.

    ``predictions[model][dataset]`` holds scores; ``labels[dataset]`` the
    targets.  Rows come out dataset-major in the order of ``labels``, and
    models in :data:`BASELINE_MODELS` order.
    """
    rows = []
    for ds, y in labels.items():
        for model in BASELINE_MODELS:
            s = predictions[model][ds]
            rows.append((ds, model, accuracy(s, y), auc(s, y)))
    return BaselineTable(rows)


def _num(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


# --------------------------------------------------------------------------
# Shapley values
#
# The value function of a coalition T is f evaluated at the point that takes
# x's values on T (and on every feature outside the explained set) and the
# baseline's values elsewhere.


def _resolve(features, n):
    if features is None:
        return np.arange(n)
    return np.asarray(features, dtype=np.int64)


def shapley_exact(
    f: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    baseline: np.ndarray,
    features: Sequence[int] | None = None,
) -> np.ndarray:
    """Exact Shapley values by enumerating all coalitions of ``features``.

    Returns an array of the same length as ``x``; entries for features
    outside the explained set are zero.
    """
    x = np.asarray(x, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    S = _resolve(features, x.size)
    k = S.size
    if k > MAX_EXACT_FEATURES:
        raise ValueError(
            f"exact enumeration over {k} features is too expensive (limit {MAX_EXACT_FEATURES}); "
            "use shapley_sampled instead"
        )
    masks = np.array(list(itertools.product((0, 1), repeat=k)), dtype=bool).reshape(-1, k)
    pts = np.tile(x, (len(masks), 1))
    pts[:, S] = np.where(masks, x[S], baseline[S])
    v = np.asarray(f(pts), dtype=float).reshape(-1)
    # masks are in binary order: index = sum_j bit_j << (k-1-j)
    sizes = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)])
    phi = np.zeros(x.size)
    idx = np.arange(len(masks))
    for j in range(k):
        bit = 1 << (k - 1 - j)
        without = idx[~masks[:, j]]
        phi[S[j]] = float((weight[sizes[without]] * (v[without | bit] - v[without])).sum())
    return phi


def shapley_sampled(
    f: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    baseline: np.ndarray,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    features: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Permutation-sampling Shapley estimate (mean marginal contribution
    along random feature orderings)."""
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    x = np.asarray(x, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    S = _resolve(features, x.size)
    k = S.size
    rng = rng if rng is not None else np.random.default_rng(seed)
    perms = np.argsort(rng.random((n_permutations, k)), axis=1)
    # path point t of permutation r has the first t features of perm r switched on
    rank = np.empty_like(perms)
    rank[np.arange(n_permutations)[:, None], perms] = np.arange(k)
    on = rank[:, None, :] < np.arange(k + 1)[None, :, None]  # (r, t, j)
    pts = np.broadcast_to(x, (n_permutations, k + 1, x.size)).copy()
    pts[:, :, S] = np.where(on, x[S], baseline[S])
    v = np.asarray(f(pts.reshape(-1, x.size)), dtype=float).reshape(n_permutations, k + 1)
    marg = np.diff(v, axis=1)  # marg[r, t] belongs to feature perms[r, t]
    phi_S = np.zeros(k)
    np.add.at(phi_S, perms.ravel(), marg.ravel())
    phi = np.zeros(x.size)
    phi[S] = phi_S / n_permutations
    return phi


@dataclass(frozen=True)
class ShapReport:
    mean_abs: np.ndarray
    ranking: tuple[str, ...]
    method: str
    n_permutations: int | None
    seed: int | None
    baseline: np.ndarray = field(repr=False)

    def rank_of(self, name: str) -> int:
        return self.ranking.index(name) + 1


def rank_features(mean_abs: np.ndarray, names: Sequence[str] = FEATURES) -> tuple[str, ...]:
    # stable sort keeps feature order among ties
    order = np.argsort(-np.asarray(mean_abs), kind="stable")
    return tuple(names[i] for i in order)


def shap_report(
    f: Callable[[np.ndarray], np.ndarray],
    X: np.ndarray,
    baseline: np.ndarray | None = None,
    method: str = "sampled",
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    names: Sequence[str] = FEATURES,
) -> ShapReport:
    """Mean |phi| per feature over the rows of ``X`` and the induced ranking.

    The baseline defaults to the zero vector, i.e. the training mean in
    standardized coordinates.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    baseline = np.zeros(X.shape[1]) if baseline is None else np.asarray(baseline, dtype=float)
    total = np.zeros(X.shape[1])
    if method == "exact":
        for x in X:
            total += np.abs(shapley_exact(f, x, baseline))
        n_perm, used_seed = None, None
    elif method == "sampled":
        rng = np.random.default_rng(seed)
        for x in X:
            total += np.abs(shapley_sampled(f, x, baseline, n_permutations, rng=rng))
        n_perm, used_seed = n_permutations, seed
    else:
        raise ValueError(f"unknown Shapley method {method!r}")
    mean_abs = total / len(X)
    return ShapReport(mean_abs, rank_features(mean_abs, names), method, n_perm, used_seed, baseline)


@dataclass(frozen=True)
class ShapRankTable:
    alphas: tuple[float, ...]
    reports: tuple[ShapReport, ...]

    def top(self, k: int = 3) -> list[tuple[str, ...]]:
        return [r.ranking[:k] for r in self.reports]

    def ranks_of(self, names: Sequence[str] = STAGING_FEATURES) -> list[tuple[int, ...]]:
        return [tuple(r.rank_of(n) for n in names) for r in self.reports]

    def write_top_csv(self, path: str | Path, k: int = 3) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", *(f"rank{i + 1}" for i in range(k))])
            for a, top in zip(self.alphas, self.top(k)):
                w.writerow([_alpha(a), *top])

    def write_stage_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["alpha", "ldh_rank", "albumin_rank", "b2m_rank", "age_rank"])
            for a, ranks in zip(self.alphas, self.ranks_of()):
                w.writerow([_alpha(a), *ranks])


def _alpha(a: float) -> str:
    return str(int(a)) if float(a).is_integer() else repr(float(a))


def shap_rank_table(
    models: Mapping[float, Callable[[np.ndarray], np.ndarray]],
    X_test: np.ndarray,
    method: str = "sampled",
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    baseline: np.ndarray | None = None,
) -> ShapRankTable:
    """One :class:`ShapReport` per alpha, models evaluated on ``X_test``.

    Every alpha uses the same permutation stream (same ``seed``).
    """
    alphas = tuple(sorted(models))
    reports = tuple(
        shap_report(models[a], X_test, baseline, method, n_permutations, seed) for a in alphas
    )
    return ShapRankTable(alphas, reports)
