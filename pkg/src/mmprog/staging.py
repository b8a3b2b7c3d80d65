"""R-ISS staging without cytogenetics.

Stages are always computed from raw clinical units (mg/L, U/L, g/L, years).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np


class RissStage(IntEnum):
    STAGE1 = 1
    STAGE2 = 2
    STAGE3 = 3


class StagingError(ValueError):
    pass


@dataclass(frozen=True)
class StagingThresholds:
    b2m_low: float = 3.5
    b2m_high: float = 5.5
    albumin_min: float = 35.0
    ldh_young: float = 235.0
    ldh_old: float = 255.0
    age_cut: float = 70.0

    def __post_init__(self):
        vals = (self.b2m_low, self.b2m_high, self.albumin_min, self.ldh_young, self.ldh_old, self.age_cut)
        if min(vals) <= 0:
            raise ValueError("staging thresholds must be positive")
        if not self.b2m_low < self.b2m_high:
            raise ValueError("b2m_low must be below b2m_high")
        if not self.ldh_young < self.ldh_old:
            raise ValueError("ldh_young must be below ldh_old")


DEFAULT_THRESHOLDS = StagingThresholds()


def _check(name: str, value: float) -> None:
    if not math.isfinite(value) or value < 0:
        raise StagingError(f"{name} must be finite and non-negative, got {float(value)!r}")


def riss_stage(
    b2m: float,
    ldh: float,
    albumin: float,
    age: float,
    t: StagingThresholds = DEFAULT_THRESHOLDS,
) -> RissStage:
    for name, v in (("b2m", b2m), ("ldh", ldh), ("albumin", albumin), ("age", age)):
        _check(name, v)
    if age < t.age_cut:
        high_ldh = ldh > t.ldh_young
    else:
        high_ldh = ldh > t.ldh_old
    if b2m < t.b2m_low and albumin >= t.albumin_min and not high_ldh:
        return RissStage.STAGE1
    if b2m >= t.b2m_high and high_ldh:
        return RissStage.STAGE3
    return RissStage.STAGE2


def stage_array(b2m, ldh, albumin, age, t: StagingThresholds = DEFAULT_THRESHOLDS) -> np.ndarray:
    """Vectorised :func:`riss_stage`; returns an int array of 1/2/3."""
    b2m, ldh, albumin, age = (np.asarray(a, dtype=float) for a in (b2m, ldh, albumin, age))
    for name, a in (("b2m", b2m), ("ldh", ldh), ("albumin", albumin), ("age", age)):
        bad = ~np.isfinite(a) | (a < 0)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise StagingError(f"{name} at position {i} must be finite and non-negative, got {a.flat[i]!r}")
    high_ldh = np.where(age < t.age_cut, ldh > t.ldh_young, ldh > t.ldh_old)
    stage1 = (b2m < t.b2m_low) & (albumin >= t.albumin_min) & ~high_ldh
    stage3 = (b2m >= t.b2m_high) & high_ldh
    return np.where(stage1, 1, np.where(stage3, 3, 2)).astype(np.int64)


@dataclass(frozen=True)
class Staging:
    ids: tuple[str, ...]
    stages: np.ndarray
    sets: dict[int, np.ndarray] = field(repr=False)

    def counts(self) -> tuple[int, int, int]:
        return tuple(len(self.sets[s]) for s in (1, 2, 3))


def stage_cohort(cohort, t: StagingThresholds = DEFAULT_THRESHOLDS) -> Staging:
    """Stage every record of ``cohort`` and group record indices by stage."""
    stages = np.empty(len(cohort), dtype=np.int64)
    if len(cohort):
        cols = [cohort.column(n) for n in ("b2m", "ldh", "albumin", "age")]
        try:
            stages = stage_array(*cols, t=t)
        except StagingError:
            # redo row-wise to name the offending record
            for rid, *vals in zip(cohort.ids, *cols):
                try:
                    riss_stage(*vals, t=t)
                except StagingError as exc:
                    raise StagingError(f"record {rid}: {exc}") from None
            raise
    sets = {s: np.flatnonzero(stages == s) for s in (1, 2, 3)}
    return Staging(ids=tuple(cohort.ids), stages=stages, sets=sets)


def write_stage_report(staged: Staging, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "stage"])
        for rid, s in zip(staged.ids, staged.stages):
            w.writerow([rid, int(s)])
