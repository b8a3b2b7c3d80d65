"""Regularized ERM training, k-fold cross-validation, hyperparameter
selection, the auxiliary feature-pair search and alpha sweeps."""
from __future__ import annotations

import csv
import itertools
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from mmprog.cohort import FEATURES, Cohort, Preprocessor, fit_preprocessor
from mmprog.evaluation import accuracy, auc
from mmprog.models import (
    AuxiliaryModel,
    DegenerateFitError,
    Predictor,
    fit_logreg,
    init_predictor,
    logistic_loss,
)
from mmprog.regularization import (
    Batch,
    Mode,
    ObjectiveValue,
    RegKind,
    RegularizerSpec,
    aa_regularizer,
    objective,
    objective_gradient,
    sc_regularizer,
    stage_means,
)
from mmprog.staging import DEFAULT_THRESHOLDS, StagingThresholds, stage_cohort

log = logging.getLogger(__name__)

DEFAULT_LAYERS = (len(FEATURES), 32, 16, 1)
DEFAULT_ARCHITECTURES = (DEFAULT_LAYERS, (len(FEATURES), 16, 1))
DEFAULT_ALPHAS = tuple(float(a) for a in range(9))


class DivergenceError(RuntimeError):
    def __init__(self, message: str, last_finite: Predictor, epoch: int):
        super().__init__(message)
        self.last_finite = last_finite
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple[int, ...] = DEFAULT_LAYERS
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    alpha: float = 0.0
    mode: Mode = Mode.LOSS_PLUS_REG

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if self.learning_rate <= 0 or self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    def as_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "alpha": self.alpha,
            "mode": self.mode.value,
        }


class AuditLog:
    """Records which record ids entered each training / selection step."""

    def __init__(self):
        self.entries: dict[str, set[str]] = defaultdict(set)

    def record(self, step: str, ids: Iterable[str]) -> None:
        self.entries[step].update(ids)

    def touched(self) -> set[str]:
        return set().union(*self.entries.values()) if self.entries else set()

    def assert_disjoint(self, held_out: Iterable[str]) -> None:
        leaked = {step: ids & set(held_out) for step, ids in self.entries.items()}
        leaked = {k: v for k, v in leaked.items() if v}
        if leaked:
            raise AssertionError(f"held-out ids used in: {sorted(leaked)}")

    def as_dict(self) -> dict[str, list[str]]:
        return {k: sorted(v) for k, v in sorted(self.entries.items())}


def make_batch(
    cohort: Cohort,
    prep: Preprocessor,
    aux: AuxiliaryModel | None = None,
    thresholds: StagingThresholds = DEFAULT_THRESHOLDS,
) -> Batch:
    """Standardize ``cohort`` with ``prep`` and attach stages and, when an
    auxiliary model is given, its frozen soft labels."""
    X = prep.transform(cohort.raw)
    stages = stage_cohort(cohort, thresholds).stages
    soft = aux.predict_raw(cohort.raw) if aux is not None else None
    return Batch(X, cohort.labels.astype(float), stages, soft, tuple(cohort.ids))


def _resolve_reg(reg: RegularizerSpec, data: Batch, alpha: float) -> RegularizerSpec:
    reg = reg.with_alpha(alpha)
    if reg.kind is RegKind.SC and reg.stage_means is None:
        reg = reg.with_stage_means(stage_means(data.y, data.stages))
    return reg


@dataclass
class TrainResult:
    predictor: Predictor
    trace: list[ObjectiveValue]
    val_trace: list[ObjectiveValue] = field(default_factory=list)
    reg: RegularizerSpec | None = None
    snapshots: dict[int, Predictor] = field(default_factory=dict)


def train(
    config: TrainConfig,
    data: Batch,
    reg: RegularizerSpec = RegularizerSpec(),
    val: Batch | None = None,
    *,
    snapshot_epochs: Sequence[int] = (),
    audit: AuditLog | None = None,
    audit_step: str = "train",
) -> TrainResult:
    """Mini-batch gradient descent on the mode-selected objective.

    The epoch shuffles come from a generator seeded with ``config.seed``, so
    the first ``e`` epochs of a longer run equal an ``e``-epoch run; the
    ``snapshot_epochs`` option exploits that to return intermediate copies.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if config.mode is Mode.REG_ONLY and reg.kind is RegKind.NONE:
        raise ValueError("reg_only mode needs a regularizer")
    if audit is not None:
        audit.record(audit_step, data.ids)
    reg = _resolve_reg(reg, data, config.alpha)
    p = init_predictor(config.layer_sizes, config.seed)
    rng = np.random.default_rng(config.seed)
    n = len(data)
    trace, val_trace, snaps = [], [], {}
    last_good = p.copy()
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        # overflow is caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                mb = data.take(order[start : start + config.batch_size])
                _, grads = objective_gradient(p, mb, reg, config.mode)
                p.apply_update(grads, config.learning_rate)
            value = objective(p, data, reg)
        finite = math.isfinite(value.total) and all(np.isfinite(a).all() for a in p.params())
        if not finite:
            raise DivergenceError(f"objective became non-finite at epoch {epoch}", last_good, epoch)
        last_good = p.copy()
        trace.append(value)
        if val is not None:
            val_trace.append(objective(p, val, reg))
        if epoch in snapshot_epochs:
            snaps[epoch] = p.copy()
    return TrainResult(p, trace, val_trace, reg, snaps)


# --------------------------------------------------------------------------
# Cross-validation


@dataclass(frozen=True)
class CvPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")

    def fold(self, f: int, cohort: Cohort) -> tuple[list[str], list[str]]:
        """(train ids, validation ids) of fold ``f`` in cohort order."""
        tr = [i for i in cohort.ids if self.assignment[i] != f]
        va = [i for i in cohort.ids if self.assignment[i] == f]
        return tr, va

    def sizes(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def make_cv_plan(ids: Iterable[str], k: int = 5, seed: int = 0) -> CvPlan:
    """Seeded fold assignment keyed to the sorted ids (row order independent);
    fold sizes differ by at most one."""
    ordered = sorted(ids)
    if len(ordered) < k:
        raise ValueError(f"cannot make {k} folds from {len(ordered)} records")
    perm = np.random.default_rng(seed).permutation(len(ordered))
    return CvPlan(k, seed, {ordered[j]: pos % k for pos, j in enumerate(perm)})


@dataclass(frozen=True)
class CvResult:
    mean_loss: float
    fold_loss: tuple[float, ...]
    fold_accuracy: tuple[float, ...]
    fold_auc: tuple[float, ...]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def mean_auc(self) -> float:
        vals = [a for a in self.fold_auc if not math.isnan(a)]
        return float(np.mean(vals)) if vals else math.nan


def _cv_runs(plan, cohort, configs, reg, thresholds, audit):
    """Validation metrics for configs sharing everything but ``epochs``.

    Returns ``{epochs: [(loss, acc, auc) per fold]}``.
    """
    longest = max(configs, key=lambda c: c.epochs)
    epochs = sorted({c.epochs for c in configs})
    out: dict[int, list[tuple[float, float, float]]] = {e: [] for e in epochs}
    for f in range(plan.k):
        tr_ids, va_ids = plan.fold(f, cohort)
        tr, va = cohort.subset(tr_ids), cohort.subset(va_ids)
        prep = fit_preprocessor(tr)
        aux = reg.aux if reg.kind is RegKind.AA else None
        tb = make_batch(tr, prep, aux, thresholds)
        vb = make_batch(va, prep, aux, thresholds)
        try:
            res = train(longest, tb, reg, snapshot_epochs=epochs, audit=audit, audit_step="cv")
        except DivergenceError as exc:
            log.warning("fold %d diverged at epoch %d (lr=%g)", f, exc.epoch, longest.learning_rate)
            for e in epochs:
                out[e].append((math.inf, math.nan, math.nan))
            continue
        for e in epochs:
            h = res.snapshots[e].predict(vb.X)
            a = auc(h, vb.y)
            if math.isnan(a):
                log.warning("fold %d validation set has a single class; AUC undefined", f)
            out[e].append((float(logistic_loss(h, vb.y).mean()), accuracy(h, vb.y), a))
    return out


def _cv_result(folds) -> CvResult:
    losses = tuple(l for l, _, _ in folds)
    return CvResult(float(np.mean(losses)), losses, tuple(a for _, a, _ in folds), tuple(u for _, _, u in folds))


def kfold_cv(
    plan: CvPlan,
    cohort: Cohort,
    config: TrainConfig,
    reg: RegularizerSpec = RegularizerSpec(),
    thresholds: StagingThresholds = DEFAULT_THRESHOLDS,
    audit: AuditLog | None = None,
) -> CvResult:
    """Train on k-1 folds, score the held-out fold, for every fold.

    Preprocessing (and stage means, for stage consistency) are refit on each
    fold's training part.  A diverged fold scores ``inf``.
    """
    runs = _cv_runs(plan, cohort, [config], reg, thresholds, audit)
    return _cv_result(runs[config.epochs])


def default_grid(
    architectures: Sequence[Sequence[int]] = DEFAULT_ARCHITECTURES,
    seed: int = 0,
    learning_rates: Sequence[float] = (0.3, 0.1, 0.03, 0.01),
    epochs: Sequence[int] = (100, 300),
    batch_size: int = 32,
) -> list[TrainConfig]:
    """Selection grid at alpha = 0, ordered architecture-major.

    Grid order matters because ties in validation loss go to the earlier
    config.
    """
    return [
        TrainConfig(tuple(layers), lr, e, batch_size, seed, 0.0)
        for layers, lr, e in itertools.product(architectures, learning_rates, epochs)
    ]


@dataclass(frozen=True)
class SelectionResult:
    best: TrainConfig
    scores: tuple[tuple[TrainConfig, CvResult], ...]


def select_hyperparams(
    grid: Sequence[TrainConfig],
    plan: CvPlan,
    cohort: Cohort,
    thresholds: StagingThresholds = DEFAULT_THRESHOLDS,
    audit: AuditLog | None = None,
) -> SelectionResult:
    """Argmin of mean validation loss at alpha = 0; ties go to the earlier
    grid entry."""
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    if any(c.alpha != 0 for c in grid):
        raise ValueError("hyperparameters are selected with alpha = 0")
    # configs differing only in epochs share one run per fold
    groups: dict[TrainConfig, list[TrainConfig]] = defaultdict(list)
    for c in grid:
        groups[replace(c, epochs=1)].append(c)
    scored: dict[TrainConfig, CvResult] = {}
    for members in groups.values():
        runs = _cv_runs(plan, cohort, members, RegularizerSpec(), thresholds, audit)
        for c in members:
            scored[c] = _cv_result(runs[c.epochs])
    table = tuple((c, scored[c]) for c in grid)
    best = min(range(len(grid)), key=lambda i: (table[i][1].mean_loss, i))
    return SelectionResult(grid[best], table)


# --------------------------------------------------------------------------
# Auxiliary feature-pair search


@dataclass(frozen=True)
class PairSearchResult:
    pair: tuple[str, str]
    model: AuxiliaryModel
    scores: dict[tuple[str, str], float]
    skipped: tuple[tuple[str, str], ...]

    @property
    def n_evaluated(self) -> int:
        return len(self.scores) + len(self.skipped)


def search_aux_pair(
    kf: Cohort,
    aux: Cohort,
    plan: CvPlan,
    candidates: Sequence[str] = FEATURES,
    audit: AuditLog | None = None,
    **opt,
) -> PairSearchResult:
    """Exhaustive search over feature pairs for the auxiliary model.

    Each pair is scored by the mean validation logistic loss of a
    two-feature logistic regression over the CV folds of ``kf``; the winner
    is refit on ``aux`` with preprocessing fitted on ``aux``.
    """
    if len(candidates) < 2:
        raise ValueError("need at least two candidate features")
    if set(kf.ids) & set(aux.ids):
        raise ValueError("auxiliary and cross-validation sets overlap")
    pairs = list(itertools.combinations(candidates, 2))
    cols = {n: FEATURES.index(n) for n in candidates}
    losses: dict[tuple[str, str], list[float]] = {p: [] for p in pairs}
    degenerate: set[tuple[str, str]] = set()
    for f in range(plan.k):
        tr_ids, va_ids = plan.fold(f, kf)
        if audit is not None:
            audit.record("pair_search", tr_ids)
        tr, va = kf.subset(tr_ids), kf.subset(va_ids)
        prep = fit_preprocessor(tr)
        Xtr, Xva = prep.transform(tr.raw), prep.transform(va.raw)
        for a, b in pairs:
            c = [cols[a], cols[b]]
            try:
                fit = fit_logreg(Xtr[:, c], tr.labels, **opt)
            except DegenerateFitError as exc:
                log.warning("pair (%s, %s) fold %d: %s", a, b, f, exc)
                degenerate.add((a, b))
                continue
            z = Xva[:, c] @ fit.weights + fit.bias
            h = 1.0 / (1.0 + np.exp(-z))
            losses[(a, b)].append(float(logistic_loss(h, va.labels).mean()))
    scores = {p: float(np.mean(v)) for p, v in losses.items() if p not in degenerate}
    if not scores:
        raise DegenerateFitError("every feature pair produced a degenerate fit")
    best = min(scores, key=lambda p: (scores[p], pairs.index(p)))
    if audit is not None:
        audit.record("aux_fit", aux.ids)
    prep_aux = fit_preprocessor(aux)
    Xa = prep_aux.transform(aux.raw)
    fit = fit_logreg(Xa[:, [cols[best[0]], cols[best[1]]]], aux.labels, **opt)
    model = AuxiliaryModel(best, fit.weights, fit.bias, prep_aux)
    return PairSearchResult(best, model, scores, tuple(sorted(degenerate)))


# --------------------------------------------------------------------------
# Alpha sweep


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    accuracy: float
    auc: float
    loss1: float
    reg_loss: float


@dataclass
class SweepResult:
    reg: RegKind
    rows: dict[str, list[SweepRow]]
    models: dict[float, Predictor]
    failures: dict[float, str] = field(default_factory=dict)
    train_ratio: dict[float, float] = field(default_factory=dict)

    def column(self, dataset: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows[dataset]])

    def write_csvs(self, out_dir: str | Path, prefix: str | None = None) -> list[Path]:
        prefix = prefix or self.reg.value
        out_dir = Path(out_dir)
        written = []
        for ds, rows in self.rows.items():
            metr = out_dir / f"{prefix}_metr_{ds}.csv"
            loss = out_dir / f"{prefix}_loss_{ds}.csv"
            with open(metr, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["alpha", "accuracy", "auc"])
                for r in rows:
                    w.writerow([_fmt(r.alpha), _fmt(r.accuracy), _fmt(r.auc)])
            with open(loss, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["alpha", "loss1", "reg_loss"])
                for r in rows:
                    w.writerow([_fmt(r.alpha), _fmt(r.loss1), _fmt(r.reg_loss)])
            written += [metr, loss]
        return written


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def alpha_seed(seed: int, alpha: float) -> int:
    return (int(seed) ^ zlib.crc32(repr(float(alpha)).encode())) & 0x7FFFFFFF


def parse_grid(text: str) -> tuple[float, ...]:
    """``start:end:step`` (end inclusive) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} is not start:end:step")
        start, end, step = (float(p) for p in parts)
        if step <= 0 or end < start:
            raise ValueError(f"grid {text!r} is empty or has a non-positive step")
        n = int(math.floor((end - start) / step + 1e-9)) + 1
        return tuple(round(start + i * step, 12) for i in range(n))
    vals = tuple(float(v) for v in text.split(",") if v.strip())
    if not vals:
        raise ValueError("empty grid")
    return vals


def evaluate_predictor(
    p: Predictor, batch: Batch, reg: RegularizerSpec, alpha: float
) -> SweepRow:
    h = p.predict(batch.X)
    if reg.kind is RegKind.AA:
        r = aa_regularizer(h, batch.soft)
    elif reg.kind is RegKind.SC:
        r = sc_regularizer(h, batch.stages, reg.stage_means)
    else:
        r = 0.0
    return SweepRow(
        float(alpha), accuracy(h, batch.y), auc(h, batch.y), float(logistic_loss(h, batch.y).mean()), float(r)
    )


def run_sweep(
    alphas: Sequence[float],
    config: TrainConfig,
    reg: RegularizerSpec,
    train_cohort: Cohort,
    eval_cohorts: Mapping[str, Cohort],
    thresholds: StagingThresholds = DEFAULT_THRESHOLDS,
    audit: AuditLog | None = None,
) -> SweepResult:
    """Train one model per alpha from a fresh alpha-derived initialization
    and evaluate it on each named dataset.

    Stage means (stage consistency) come from the training labels and stay
    fixed for evaluation; soft labels come from the frozen auxiliary model.
    """
    alphas = tuple(float(a) for a in alphas)
    if not alphas:
        raise ValueError("alpha grid is empty")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alpha grid must be strictly increasing")
    prep = fit_preprocessor(train_cohort)
    aux = reg.aux if reg.kind is RegKind.AA else None
    tb = make_batch(train_cohort, prep, aux, thresholds)
    reg = _resolve_reg(reg, tb, 0.0)
    batches = {name: make_batch(c, prep, aux, thresholds) for name, c in eval_cohorts.items()}
    result = SweepResult(reg.kind, {name: [] for name in batches}, {})
    for a in alphas:
        cfg = replace(config, alpha=a, seed=alpha_seed(config.seed, a), mode=Mode.LOSS_PLUS_REG)
        try:
            res = train(cfg, tb, reg, audit=audit, audit_step="sweep")
        except DivergenceError as exc:
            log.error("alpha=%g diverged: %s", a, exc)
            result.failures[a] = str(exc)
            continue
        p = res.predictor
        p.preprocessor = prep
        result.models[a] = p
        last = res.trace[-1]
        result.train_ratio[a] = last.data_term / last.reg_term if last.reg_term > 0 else math.inf
        for name, b in batches.items():
            result.rows[name].append(evaluate_predictor(p, b, reg, a))
    return result
