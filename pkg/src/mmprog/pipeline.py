"""End-to-end experiment protocol.

split -> auxiliary pair search -> hyperparameter selection at alpha = 0 ->
alpha sweeps -> baselines -> Shapley rank tables, with every output file and
a JSON manifest written to one run directory.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from mmprog import __version__
from mmprog.cohort import Cohort, SplitSpec, fit_preprocessor, split
from mmprog.evaluation import (
    DEFAULT_PERMUTATIONS,
    BaselineTable,
    ShapRankTable,
    evaluate_baselines,
    shap_rank_table,
)
from mmprog.regularization import Mode, RegKind, RegularizerSpec
from mmprog.staging import DEFAULT_THRESHOLDS, StagingThresholds
from mmprog.training import (
    DEFAULT_ALPHAS,
    AuditLog,
    PairSearchResult,
    SelectionResult,
    SweepResult,
    TrainConfig,
    default_grid,
    make_batch,
    make_cv_plan,
    run_sweep,
    search_aux_pair,
    select_hyperparams,
    train,
)

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ProtocolConfig:
    split: SplitSpec = field(default_factory=SplitSpec)
    k: int = 5
    cv_seed: int = 0
    train_seed: int = 0
    grid: Sequence[TrainConfig] | None = None
    alphas: Sequence[float] = DEFAULT_ALPHAS
    regs: Sequence[str] = ("aa", "stage")
    thresholds: StagingThresholds = DEFAULT_THRESHOLDS
    shap_method: str = "sampled"
    n_permutations: int = DEFAULT_PERMUTATIONS
    shap_seed: int = 0

    def resolved_grid(self) -> list[TrainConfig]:
        return list(self.grid) if self.grid is not None else default_grid(seed=self.train_seed)

    def as_dict(self) -> dict:
        return {
            "split": {
                "seed": self.split.seed,
                "fractions": list(self.split.fractions),
                "fixed_counts": None if self.split.fixed_counts is None else list(self.split.fixed_counts),
            },
            "k": self.k,
            "cv_seed": self.cv_seed,
            "train_seed": self.train_seed,
            "grid": [c.as_dict() for c in self.resolved_grid()],
            "alphas": [float(a) for a in self.alphas],
            "regs": list(self.regs),
            "thresholds": asdict(self.thresholds),
            "shap_method": self.shap_method,
            "n_permutations": self.n_permutations,
            "shap_seed": self.shap_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        """Inverse of :meth:`as_dict`; used to rerun from a manifest."""
        s = d["split"]
        return cls(
            split=SplitSpec(
                seed=int(s["seed"]),
                fractions=tuple(s["fractions"]),
                fixed_counts=None if s["fixed_counts"] is None else tuple(s["fixed_counts"]),
            ),
            k=int(d["k"]),
            cv_seed=int(d["cv_seed"]),
            train_seed=int(d["train_seed"]),
            grid=[TrainConfig(**c) for c in d["grid"]],
            alphas=tuple(float(a) for a in d["alphas"]),
            regs=tuple(d["regs"]),
            thresholds=StagingThresholds(**d["thresholds"]),
            shap_method=d["shap_method"],
            n_permutations=int(d["n_permutations"]),
            shap_seed=int(d["shap_seed"]),
        )


@dataclass
class ProtocolResult:
    aux: Cohort
    kf: Cohort
    test: Cohort
    pair: PairSearchResult
    selection: SelectionResult
    sweeps: dict[str, SweepResult]
    baselines: BaselineTable
    shap: dict[str, ShapRankTable]
    audit: AuditLog
    manifest: dict
    outputs: dict[str, Path] = field(default_factory=dict)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path: Path | None, manifest: dict) -> None:
    if path is None:
        return
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(x: float):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)


def run_protocol(
    cohort: Cohort,
    config: ProtocolConfig | None = None,
    out_dir: str | Path | None = None,
    cohort_digest: str | None = None,
) -> ProtocolResult:
    """Run the full experiment on ``cohort``.

    With ``out_dir`` set, the directory receives for every regularizer
    ``<reg>_metr_test.csv``, ``<reg>_loss_test.csv`` (plus ``_kf`` variants)
    and ``shap_ranks_<reg>.csv``, and once ``baselines.csv`` and
    ``manifest.json``.  The manifest is written before training starts and
    finalized at the end; on failure it records the failing stage.
    """
    config = config or ProtocolConfig()
    regs = [RegKind(r).value for r in config.regs]
    if RegKind.NONE.value in regs:
        raise ValueError("protocol regularizers must be 'aa' or 'stage'")
    out = Path(out_dir) if out_dir is not None else None
    manifest_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        manifest_path = out / "manifest.json"
    manifest: dict = {
        "tool": "mmprog",
        "version": __version__,
        "status": "running",
        "config": config.as_dict(),
        "input": {"n_records": len(cohort), "digest": cohort_digest or cohort.fingerprint()},
    }
    _write_manifest(manifest_path, manifest)

    audit = AuditLog()
    stage = "split"
    try:
        aux, kf, test = split(cohort, config.split)
        manifest["splits"] = {
            "sizes": {"aux": len(aux), "kf": len(kf), "test": len(test)},
            "fingerprints": {"aux": aux.fingerprint(), "kf": kf.fingerprint(), "test": test.fingerprint()},
        }

        stage = "pair_search"
        plan = make_cv_plan(kf.ids, config.k, config.cv_seed)
        pair = search_aux_pair(kf, aux, plan, audit=audit)
        manifest["aux_model"] = {
            "pair": list(pair.pair),
            "weights": pair.model.weights.tolist(),
            "bias": pair.model.bias,
            "n_pairs_evaluated": pair.n_evaluated,
            "skipped": [list(p) for p in pair.skipped],
        }

        stage = "select_hyperparams"
        selection = select_hyperparams(config.resolved_grid(), plan, kf, config.thresholds, audit)
        best = selection.best
        manifest["selection"] = {
            "best": best.as_dict(),
            "scores": [
                {"config": c.as_dict(), "mean_val_loss": _clean(r.mean_loss)} for c, r in selection.scores
            ],
        }

        stage = "sweep"
        sweeps: dict[str, SweepResult] = {}
        for reg in regs:
            spec = (
                RegularizerSpec(RegKind.AA, aux=pair.model)
                if reg == RegKind.AA.value
                else RegularizerSpec(RegKind.SC)
            )
            sweeps[reg] = run_sweep(
                config.alphas, best, spec, kf, {"test": test, "kf": kf}, config.thresholds, audit
            )
        manifest["sweeps"] = {
            reg: {
                "failures": {str(a): m for a, m in sw.failures.items()},
                "train_loss_to_reg_ratio": {str(a): _clean(v) for a, v in sw.train_ratio.items()},
            }
            for reg, sw in sweeps.items()
        }

        stage = "baselines"
        prep = fit_preprocessor(kf)
        kb = make_batch(kf, prep, pair.model, config.thresholds)
        tb = make_batch(test, prep, pair.model, config.thresholds)
        stage_only = train(
            replace(best, alpha=1.0, mode=Mode.REG_ONLY),
            kb,
            RegularizerSpec(RegKind.SC),
            audit=audit,
            audit_step="stage_based",
        )
        manifest["stage_means"] = stage_only.reg.stage_means.tolist()
        alpha0 = next((sw.models.get(0.0) for sw in sweeps.values() if 0.0 in sw.models), None)
        if alpha0 is None:
            alpha0 = train(replace(best, alpha=0.0), kb, audit=audit, audit_step="alpha0").predictor
        predictions = {
            "auxiliary": {"kf": kb.soft, "test": tb.soft},
            "stage_based": {"kf": stage_only.predictor.predict(kb.X), "test": stage_only.predictor.predict(tb.X)},
            "alpha0": {"kf": alpha0.predict(kb.X), "test": alpha0.predict(tb.X)},
        }
        baselines = evaluate_baselines(predictions, {"kf": kb.y, "test": tb.y})

        stage = "shap"
        shap: dict[str, ShapRankTable] = {}
        for reg, sw in sweeps.items():
            models = {a: p.predict for a, p in sw.models.items()}
            shap[reg] = shap_rank_table(
                models, tb.X, config.shap_method, config.n_permutations, config.shap_seed
            )

        stage = "audit"
        audit.assert_disjoint(test.ids)
        manifest["id_flow"] = {
            "steps": {k: len(v) for k, v in audit.as_dict().items()},
            "test_ids_in_training": 0,
            "ids": audit.as_dict(),
        }

        outputs: dict[str, Path] = {}
        if out is not None:
            stage = "write"
            for reg, sw in sweeps.items():
                for p in sw.write_csvs(out, reg):
                    outputs[p.name] = p
                path = out / f"shap_ranks_{reg}.csv"
                if reg == RegKind.AA.value:
                    shap[reg].write_top_csv(path)
                else:
                    shap[reg].write_stage_csv(path)
                outputs[path.name] = path
            path = out / "baselines.csv"
            baselines.write_csv(path)
            outputs[path.name] = path
            manifest["outputs"] = {name: file_digest(p) for name, p in sorted(outputs.items())}
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["failed_stage"] = stage
        manifest["error"] = str(exc)
        _write_manifest(manifest_path, manifest)
        raise PipelineError(stage, exc) from exc

    manifest["status"] = "complete"
    _write_manifest(manifest_path, manifest)
    return ProtocolResult(aux, kf, test, pair, selection, sweeps, baselines, shap, audit, manifest, outputs)
