"""Patient cohorts: CSV ingestion, imputation, standardization, splitting and
a calibrated synthetic generator.

Raw feature values are kept in clinical units inside a :class:`Cohort`
(``NaN`` marks a missing measurement).  Model inputs are produced by a
:class:`Preprocessor` fitted on a designated training subset, so held-out
records never influence the statistics.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from mmprog import staging

FEATURES: tuple[str, ...] = (
    "age",
    "albumin",
    "ldh",
    "b2m",
    "hemoglobin",
    "platelets",
    "creatinine",
    "crp",
    "alp",
    "flc_lambda",
    "flc_kappa",
    "leukocytes",
    "protein",
    "ionized_calcium",
    "iga",
    "igg",
    "igm",
    "plasma_cell_pct",
)
MANDATORY: tuple[str, ...] = ("age", "albumin", "ldh", "b2m")
CSV_HEADER: tuple[str, ...] = ("id", *FEATURES, "label")


class CohortError(ValueError):
    """Raised for malformed or invalid cohort data."""


class NotFittedError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message: str, achieved: dict[str, float]):
        super().__init__(message)
        self.achieved = achieved


def feature_index(name: str) -> int:
    try:
        return FEATURES.index(name)
    except ValueError:
        raise KeyError(f"unknown feature {name!r}") from None


@dataclass(frozen=True)
class PatientRecord:
    id: str
    age: int
    features: dict[str, float | None]
    label: int


@dataclass(frozen=True)
class Preprocessor:
    """Mean imputation followed by z-scoring, with statistics from a fit set."""

    impute_means: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    constant: np.ndarray
    fit_ids: tuple[str, ...] = ()

    def transform(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        filled = np.where(np.isnan(raw), self.impute_means, raw)
        out = (filled - self.center) / self.scale
        out[:, self.constant] = 0.0
        return out


@dataclass(frozen=True)
class Cohort:
    ids: tuple[str, ...]
    raw: np.ndarray  # (m, len(FEATURES)), NaN = missing
    labels: np.ndarray  # (m,) int in {0, 1}
    preprocessor: Preprocessor | None = None
    feature_order: tuple[str, ...] = FEATURES

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=float).reshape(-1, len(self.feature_order))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if not (len(self.ids) == raw.shape[0] == labels.shape[0]):
            raise CohortError("ids, raw and labels disagree in length")
        if len(set(self.ids)) != len(self.ids):
            raise CohortError("duplicate record id")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise CohortError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.ids)

    def column(self, name: str) -> np.ndarray:
        return self.raw[:, self.feature_order.index(name)]

    def subset(self, ids: Iterable[str]) -> "Cohort":
        pos = {rid: i for i, rid in enumerate(self.ids)}
        idx = np.array([pos[i] for i in ids], dtype=np.int64)
        return Cohort(
            ids=tuple(self.ids[i] for i in idx),
            raw=self.raw[idx],
            labels=self.labels[idx],
            preprocessor=self.preprocessor,
            feature_order=self.feature_order,
        )

    def take(self, idx: Sequence[int]) -> "Cohort":
        return self.subset([self.ids[i] for i in idx])

    def with_preprocessor(self, prep: Preprocessor) -> "Cohort":
        return replace(self, preprocessor=prep)

    @property
    def stages(self) -> np.ndarray:
        """Per-record R-ISS stage (1, 2 or 3) from raw clinical values."""
        return staging.stage_cohort(self).stages

    def records(self) -> Iterator[PatientRecord]:
        for rid, row, y in zip(self.ids, self.raw, self.labels):
            feats = {
                f: (None if math.isnan(v) else float(v))
                for f, v in zip(self.feature_order[1:], row[1:])
            }
            yield PatientRecord(id=rid, age=int(row[0]), features=feats, label=int(y))

    def fingerprint(self) -> str:
        return hashlib.sha256(to_csv_text(self).encode()).hexdigest()


# --------------------------------------------------------------------------
# CSV I/O


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


def to_csv_text(cohort: Cohort) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rid, row, y in zip(cohort.ids, cohort.raw, cohort.labels):
        w.writerow([rid, *(_fmt(v) for v in row), int(y)])
    return buf.getvalue()


def save_csv(cohort: Cohort, path: str | Path) -> None:
    Path(path).write_text(to_csv_text(cohort), encoding="utf-8")


def load_csv(path: str | Path, schema: Sequence[str] = FEATURES) -> Cohort:
    """Read a cohort CSV.

    The header must be ``id``, the feature columns in ``schema`` order and
    ``label``.  Empty cells are missing values.  No imputation is applied.
    """
    schema = tuple(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file (no header)") from None
        header = [h.strip() for h in header]
        expected = ["id", *schema, "label"]
        if header != expected:
            missing = [c for c in expected if c not in header]
            detail = f"missing columns {missing}" if missing else "columns out of order"
            raise CohortError(f"{path}: header mismatch, {detail}")

        ids, rows, labels = [], [], []
        seen: set[str] = set()
        for lineno, cells in enumerate(reader, start=2):
            if not cells:
                continue
            if len(cells) != len(expected):
                raise CohortError(f"row {lineno}: expected {len(expected)} cells, got {len(cells)}")
            rid = cells[0].strip()
            if not rid:
                raise CohortError(f"row {lineno}: empty id")
            if rid in seen:
                raise CohortError(f"row {lineno}: duplicate id {rid!r}")
            seen.add(rid)
            values = []
            for name, cell in zip(schema, cells[1:-1]):
                cell = cell.strip()
                if cell == "":
                    if name in MANDATORY:
                        raise CohortError(f"row {lineno} ({rid}): mandatory field {name!r} is missing")
                    values.append(math.nan)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise CohortError(
                        f"row {lineno}, column {name!r}: cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise CohortError(f"row {lineno}, column {name!r}: non-finite value {cell!r}")
                values.append(v)
            lab = cells[-1].strip()
            if lab not in ("0", "1"):
                raise CohortError(f"row {lineno} ({rid}): label must be 0 or 1, got {lab!r}")
            ids.append(rid)
            rows.append(values)
            labels.append(int(lab))

    raw = np.array(rows, dtype=float).reshape(-1, len(schema))
    return Cohort(ids=tuple(ids), raw=raw, labels=np.array(labels, dtype=np.int64), feature_order=schema)


# --------------------------------------------------------------------------
# Preprocessing


def _fit_rows(cohort: Cohort, fit_ids: Iterable[str] | None) -> np.ndarray:
    if fit_ids is None:
        return cohort.raw
    fit_ids = list(fit_ids)
    if not fit_ids:
        raise CohortError("fit set is empty")
    return cohort.subset(fit_ids).raw


def fit_imputer(cohort: Cohort, fit_ids: Iterable[str] | None = None) -> np.ndarray:
    """Per-feature mean of the observed values over ``fit_ids`` (default: all)."""
    rows = _fit_rows(cohort, fit_ids)
    if rows.shape[0] == 0:
        raise CohortError("fit set is empty")
    observed = ~np.isnan(rows)
    counts = observed.sum(axis=0)
    for name, c in zip(cohort.feature_order, counts):
        if c == 0:
            raise CohortError(f"feature {name!r} has no observed values in the fit set")
    return np.where(observed, rows, 0.0).sum(axis=0) / counts


def fit_preprocessor(cohort: Cohort, fit_ids: Iterable[str] | None = None) -> Preprocessor:
    fit_ids = None if fit_ids is None else tuple(fit_ids)
    means = fit_imputer(cohort, fit_ids)
    rows = _fit_rows(cohort, fit_ids)
    filled = np.where(np.isnan(rows), means, rows)
    center = filled.mean(axis=0)
    scale = filled.std(axis=0)
    # relative test so float round-off on a constant column still counts as constant
    constant = scale <= 1e-12 * np.maximum(1.0, np.abs(center))
    scale = np.where(constant, 1.0, scale)
    return Preprocessor(
        impute_means=means,
        center=center,
        scale=scale,
        constant=constant,
        fit_ids=fit_ids if fit_ids is not None else cohort.ids,
    )


def apply_impute_standardize(cohort: Cohort, prep: Preprocessor | None = None) -> np.ndarray:
    prep = prep if prep is not None else cohort.preprocessor
    if prep is None:
        raise NotFittedError("imputation/standardization statistics have not been fitted")
    return prep.transform(cohort.raw)


# --------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    fractions: tuple[float, float, float] = (122 / 812, 568 / 812, 122 / 812)
    fixed_counts: tuple[int, int, int] | None = None

    def __post_init__(self):
        if len(self.fractions) != 3 or not all(0 < f < 1 for f in self.fractions):
            raise ValueError("fractions must be three values in (0, 1)")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("fractions must sum to 1")

    def counts(self, n: int) -> tuple[int, int, int]:
        if self.fixed_counts is not None:
            if sum(self.fixed_counts) != n or min(self.fixed_counts) < 0:
                raise ValueError(f"fixed_counts {self.fixed_counts} infeasible for {n} records")
            return tuple(int(c) for c in self.fixed_counts)
        return largest_remainder(self.fractions, n)


def largest_remainder(fractions: Sequence[float], n: int) -> tuple[int, ...]:
    """Apportion ``n`` items by ``fractions``; ties go to the earlier slot."""
    quotas = [f * n for f in fractions]
    counts = [math.floor(q) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return tuple(counts)


def split(cohort: Cohort, spec: SplitSpec) -> tuple[Cohort, Cohort, Cohort]:
    """Seeded disjoint split into (aux, kf, test).

    The permutation is applied to the sorted ids so the result does not
    depend on the row order of the input file.
    """
    n_aux, n_kf, n_test = spec.counts(len(cohort))
    ordered = sorted(cohort.ids)
    perm = np.random.default_rng(spec.seed).permutation(len(ordered))
    shuffled = [ordered[i] for i in perm]
    aux = shuffled[:n_aux]
    kf = shuffled[n_aux : n_aux + n_kf]
    test = shuffled[n_aux + n_kf :]
    return cohort.subset(aux), cohort.subset(kf), cohort.subset(test)


# --------------------------------------------------------------------------
# Synthetic cohorts

# death rates per stage (1, 2, 3) the generator is calibrated to
TARGET_STAGE_RATES = (18 / 111, 325 / 595, 74 / 106)


@dataclass(frozen=True)
class Marginal:
    """``lognormal``: params are (median, sigma of log); ``normal``: (mean, sd)
    truncated below at ``low``."""

    family: str
    a: float
    b: float
    low: float = 0.0


DEFAULT_MARGINALS: dict[str, Marginal] = {
    "age": Marginal("normal", 67.0, 10.0, 30.0),
    "albumin": Marginal("normal", 32.67, 6.48, 15.0),
    "ldh": Marginal("lognormal", 249.9, 0.305),
    "b2m": Marginal("lognormal", 3.84, 0.41),
    "hemoglobin": Marginal("normal", 110.0, 18.0, 50.0),
    "platelets": Marginal("normal", 220.0, 80.0, 10.0),
    "creatinine": Marginal("lognormal", 85.0, 0.45),
    "crp": Marginal("lognormal", 5.0, 1.0),
    "alp": Marginal("lognormal", 75.0, 0.35),
    "flc_lambda": Marginal("lognormal", 40.0, 1.5),
    "flc_kappa": Marginal("lognormal", 40.0, 1.5),
    "leukocytes": Marginal("normal", 6.5, 2.2, 0.5),
    "protein": Marginal("normal", 80.0, 15.0, 40.0),
    "ionized_calcium": Marginal("normal", 1.25, 0.08, 0.8),
    "iga": Marginal("lognormal", 1.5, 1.2),
    "igg": Marginal("lognormal", 12.0, 0.8),
    "igm": Marginal("lognormal", 0.4, 0.8),
    "plasma_cell_pct": Marginal("normal", 35.0, 20.0, 1.0),
}

DEFAULT_MISSINGNESS: dict[str, float] = {
    "hemoglobin": 0.02,
    "platelets": 0.03,
    "creatinine": 0.03,
    "crp": 0.10,
    "alp": 0.12,
    "flc_lambda": 0.25,
    "flc_kappa": 0.25,
    "leukocytes": 0.03,
    "protein": 0.08,
    "ionized_calcium": 0.30,
    "iga": 0.15,
    "igg": 0.15,
    "igm": 0.15,
    "plasma_cell_pct": 0.35,
}

# Loadings on a shared latent disease-burden factor (correlation of the
# underlying normal draws).
DEFAULT_BURDEN_LOADINGS: dict[str, float] = {
    "age": 0.31,
    "ldh": 0.636,
    "b2m": 0.414,
    "albumin": -0.797,
}

# Weights act on centred/log-scaled terms, see ``risk_terms``.
DEFAULT_RISK_WEIGHTS: dict[str, float] = {
    "intercept": -0.8658,
    "age": 1.8,
    "ldh": 2.5,
    "b2m": 0.0,
    "albumin": 0.45,
}


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 7
    n_patients: int = 812
    marginals: dict[str, Marginal] = field(default_factory=lambda: dict(DEFAULT_MARGINALS))
    risk_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RISK_WEIGHTS))
    missingness: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MISSINGNESS))
    burden_loadings: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_BURDEN_LOADINGS))
    ldh_saturation: float = 0.758
    stage_targets: tuple[float, float, float] = TARGET_STAGE_RATES
    tolerance: float = 0.06
    check_min_n: int = 800

    def validate(self) -> None:
        if self.n_patients <= 0:
            raise CohortError("n_patients must be positive")
        for name in FEATURES:
            if name not in self.marginals:
                raise CohortError(f"no distribution for feature {name!r}")
        for name, rate in self.missingness.items():
            if name in MANDATORY and rate != 0:
                raise CohortError(f"mandatory feature {name!r} cannot be missing")
            if not 0 <= rate < 1:
                raise CohortError(f"missingness for {name!r} must be in [0, 1)")
        for name, rho in self.burden_loadings.items():
            if name not in FEATURES or not -1 < rho < 1:
                raise CohortError(f"burden loading for {name!r} must be a feature with |rho| < 1")


def risk_terms(raw: np.ndarray, ldh_saturation: float = math.inf) -> dict[str, np.ndarray]:
    """Centred predictors used by the ground-truth risk function.

    The LDH term is a log-ratio squashed by ``c * tanh(x / c)``, so risk
    levels off for strongly elevated LDH.
    """
    col = lambda n: raw[:, FEATURES.index(n)]  # noqa: E731
    ldh = np.log(col("ldh") / 210.0) / 0.40
    if math.isfinite(ldh_saturation):
        ldh = ldh_saturation * np.tanh(ldh / ldh_saturation)
    return {
        "age": (col("age") - 67.0) / 10.0,
        "ldh": ldh,
        "b2m": np.log(col("b2m") / 4.2) / 0.70,
        "albumin": (col("albumin") - 36.0) / 6.0,
    }


def risk_probability(raw: np.ndarray, weights: dict[str, float], ldh_saturation: float = math.inf) -> np.ndarray:
    t = risk_terms(raw, ldh_saturation)
    logit = (
        weights["intercept"]
        + weights["age"] * t["age"]
        + weights["ldh"] * t["ldh"]
        + weights["b2m"] * t["b2m"]
        - weights["albumin"] * t["albumin"]
    )
    return 1.0 / (1.0 + np.exp(-logit))


def _draw(m: Marginal, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Map standard-normal draws ``z`` through the marginal ``m``."""
    if m.family == "lognormal":
        return m.a * np.exp(m.b * z)
    if m.family == "normal":
        x = m.a + m.b * z
        bad = x < m.low
        # truncation by resampling the offending entries independently
        while bad.any():
            x[bad] = m.a + m.b * rng.standard_normal(int(bad.sum()))
            bad = x < m.low
        return x
    raise CohortError(f"unknown distribution family {m.family!r}")


def draw_features(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    burden = rng.standard_normal(n)
    raw = np.empty((n, len(FEATURES)))
    for j, name in enumerate(FEATURES):
        rho = spec.burden_loadings.get(name, 0.0)
        z = rho * burden + np.sqrt(1.0 - rho * rho) * rng.standard_normal(n)
        raw[:, j] = _draw(spec.marginals[name], z, rng)
    raw[:, 0] = np.rint(raw[:, 0])
    # keep CSV round-trip exact and values plausible
    raw[:, 1:] = np.round(raw[:, 1:], 3)
    for name, rate in spec.missingness.items():
        if rate > 0:
            j = FEATURES.index(name)
            raw[rng.random(n) < rate, j] = np.nan
    return raw


def stage_rates(stages: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    out = []
    for s in (1, 2, 3):
        sel = stages == s
        out.append(float(values[sel].mean()) if sel.any() else math.nan)
    return tuple(out)


CALIBRATION_MC = 40_000
CALIBRATION_SEED = 20240101


def population_stage_rates(spec: SyntheticSpec, n_mc: int = CALIBRATION_MC) -> tuple[float, float, float]:
    """Expected death rate per stage under ``spec`` (fixed Monte-Carlo draw,
    independent of ``spec.seed``)."""
    raw = draw_features(replace(spec, missingness={}), n_mc, np.random.default_rng(CALIBRATION_SEED))
    stages = staging.stage_array(raw[:, 3], raw[:, 2], raw[:, 1], raw[:, 0])
    return stage_rates(stages, risk_probability(raw, spec.risk_weights, spec.ldh_saturation))


def _on_target(spec: SyntheticSpec, rates) -> bool:
    return all(abs(a - t) <= spec.tolerance for a, t in zip(rates, spec.stage_targets))


def ensure_calibrated(spec: SyntheticSpec) -> SyntheticSpec:
    """Return ``spec`` if its population stage rates are on target, else a
    copy with weights from a bounded grid search around the current ones.

    Raises :class:`CalibrationError` with the best achieved rates when the
    search fails.
    """
    if _on_target(spec, population_stage_rates(spec)):
        return spec
    w = spec.risk_weights
    grid = {
        k: [max(0.0, w[k] * f) for f in (0.5, 0.75, 1.0, 1.25, 1.5)] if w[k] else [0.0, 0.25, 0.5]
        for k in ("age", "ldh", "b2m", "albumin")
    }
    weights, _ = calibrate_risk_weights(spec, grid, n_mc=CALIBRATION_MC // 2)
    out = replace(spec, risk_weights=weights)
    rates = population_stage_rates(out)
    if not _on_target(out, rates):
        achieved = {f"stage{s}": r for s, r in zip((1, 2, 3), rates)}
        raise CalibrationError(f"synthetic stage death rates off target: {achieved}", achieved)
    return out


def generate_synthetic(spec: SyntheticSpec | None = None) -> Cohort:
    """Draw a synthetic cohort with labels from the ground-truth logistic risk.

    When ``n_patients >= spec.check_min_n`` the spec's population-level
    stage death rates are checked against ``spec.stage_targets`` first (see
    :func:`ensure_calibrated`).
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    n = spec.n_patients
    if n >= spec.check_min_n:
        spec = ensure_calibrated(spec)
    rng = np.random.default_rng(spec.seed)
    raw = draw_features(spec, n, rng)
    p = risk_probability(raw, spec.risk_weights, spec.ldh_saturation)
    labels = (rng.random(n) < p).astype(np.int64)
    width = len(str(n))
    ids = tuple(f"P{i:0{width}d}" for i in range(n))
    return Cohort(ids=ids, raw=raw, labels=labels)


def calibrate_risk_weights(
    spec: SyntheticSpec,
    grid: dict[str, Sequence[float]],
    n_mc: int = 50_000,
    seed: int = 12345,
) -> tuple[dict[str, float], tuple[float, float, float]]:
    """Grid search over risk weights to match the per-stage target rates.

    Every weight not in ``grid`` keeps its value from ``spec``; for each
    combination the intercept is solved by bisection so the overall death
    rate matches the stage-weighted target.  Returns the best weights and the
    Monte-Carlo stage rates they achieve.  Raises :class:`CalibrationError`
    if no combination is within tolerance.
    """
    rng = np.random.default_rng(seed)
    raw = draw_features(replace(spec, missingness={}), n_mc, rng)
    stages = staging.stage_array(raw[:, 3], raw[:, 2], raw[:, 1], raw[:, 0])
    terms = risk_terms(raw, spec.ldh_saturation)
    shares = np.array([(stages == s).mean() for s in (1, 2, 3)])
    overall = float(shares @ np.asarray(spec.stage_targets))

    keys = [k for k in ("age", "ldh", "b2m", "albumin") if k in grid]
    best, best_err, best_rates = None, math.inf, None
    for combo in np.array(np.meshgrid(*[grid[k] for k in keys], indexing="ij")).reshape(len(keys), -1).T:
        w = dict(spec.risk_weights)
        w.update(zip(keys, map(float, combo)))
        lin = w["age"] * terms["age"] + w["ldh"] * terms["ldh"] + w["b2m"] * terms["b2m"] - w["albumin"] * terms["albumin"]
        lo, hi = -10.0, 10.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if (1 / (1 + np.exp(-(mid + lin)))).mean() < overall:
                lo = mid
            else:
                hi = mid
        w["intercept"] = 0.5 * (lo + hi)
        p = 1 / (1 + np.exp(-(w["intercept"] + lin)))
        rates = stage_rates(stages, p)
        err = max(abs(a - t) for a, t in zip(rates, spec.stage_targets))
        if err < best_err:
            best, best_err, best_rates = w, err, rates
    if best is None or best_err > spec.tolerance:
        rates = {} if best_rates is None else {f"stage{s}": r for s, r in zip((1, 2, 3), best_rates)}
        raise CalibrationError("no weight combination reaches the stage targets", rates)
    return best, best_rates


# --------------------------------------------------------------------------
# Spec persistence (flat key = value text)


def spec_to_text(spec: SyntheticSpec) -> str:
    lines = [f"seed = {spec.seed}", f"n_patients = {spec.n_patients}"]
    for name in FEATURES:
        m = spec.marginals[name]
        lines.append(f"dist.{name} = {m.family} {m.a!r} {m.b!r} {m.low!r}")
    for k, v in spec.risk_weights.items():
        lines.append(f"risk.{k} = {v!r}")
    for k, v in spec.missingness.items():
        lines.append(f"missing.{k} = {v!r}")
    lines.append("stage_targets = " + " ".join(repr(t) for t in spec.stage_targets))
    for k, v in spec.burden_loadings.items():
        lines.append(f"burden.{k} = {v!r}")
    lines.append(f"ldh_saturation = {spec.ldh_saturation!r}")
    lines.append(f"tolerance = {spec.tolerance!r}")
    lines.append(f"check_min_n = {spec.check_min_n}")
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> SyntheticSpec:
    base = SyntheticSpec()
    kw: dict = {}
    marginals = dict(base.marginals)
    weights = dict(base.risk_weights)
    missing: dict[str, float] | None = None
    burden: dict[str, float] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CohortError(f"spec line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key == "seed":
                kw["seed"] = int(value)
            elif key == "n_patients":
                kw["n_patients"] = int(value)
            elif key.startswith("dist."):
                fam, a, b, low = value.split()
                marginals[key[5:]] = Marginal(fam, float(a), float(b), float(low))
            elif key.startswith("risk."):
                weights[key[5:]] = float(value)
            elif key.startswith("missing."):
                missing = {} if missing is None else missing
                missing[key[8:]] = float(value)
            elif key.startswith("burden."):
                burden = {} if burden is None else burden
                burden[key[7:]] = float(value)
            elif key == "ldh_saturation":
                kw["ldh_saturation"] = float(value)
            elif key == "stage_targets":
                kw["stage_targets"] = tuple(float(v) for v in value.split())
            elif key == "tolerance":
                kw["tolerance"] = float(value)
            elif key == "check_min_n":
                kw["check_min_n"] = int(value)
            else:
                raise CohortError(f"spec line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise CohortError(f"spec line {lineno}: {exc}") from None
    spec = SyntheticSpec(
        marginals=marginals,
        risk_weights=weights,
        missingness=base.missingness if missing is None else missing,
        burden_loadings=base.burden_loadings if burden is None else burden,
        **kw,
    )
    spec.validate()
    return spec
