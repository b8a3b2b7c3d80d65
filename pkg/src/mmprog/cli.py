"""Command-line entry point: ``mmprog generate | stage | pipeline``.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from mmprog import __version__
from mmprog.cohort import (
    CalibrationError,
    CohortError,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    save_csv,
    spec_from_text,
    spec_to_text,
    stage_rates,
)
from mmprog.models import DegenerateFitError, StaleCacheError
from mmprog.pipeline import PipelineError, ProtocolConfig, file_digest, run_protocol
from mmprog.staging import stage_cohort, write_stage_report
from mmprog.training import DivergenceError, parse_grid

log = logging.getLogger("mmprog")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3

_NUMERICAL = (DivergenceError, CalibrationError, DegenerateFitError, StaleCacheError, FloatingPointError)


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PipelineError):
        return exit_code_for(exc.cause)
    if isinstance(exc, _NUMERICAL):
        return EXIT_NUMERICAL
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


def _write_json(path: Path, obj: dict) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# generate


def cmd_generate(args: argparse.Namespace) -> int:
    spec = SyntheticSpec()
    if args.spec:
        spec = spec_from_text(Path(args.spec).read_text(encoding="utf-8"))
    overrides = {}
    if args.n is not None:
        overrides["n_patients"] = args.n
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = dataclasses.replace(spec, **overrides)
    cohort = generate_synthetic(spec)
    out = Path(args.out)
    save_csv(cohort, out)
    rates = stage_rates(cohort.stages, cohort.labels)
    manifest = {
        "tool": "mmprog",
        "version": __version__,
        "command": "generate",
        "spec": spec_to_text(spec),
        "n_records": len(cohort),
        "positive_rate": float(cohort.labels.mean()),
        "stage_death_rates": [None if r != r else r for r in rates],
        "output": {out.name: file_digest(out)},
    }
    _write_json(out.with_name(out.stem + ".manifest.json"), manifest)
    print(f"wrote {len(cohort)} records to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# stage


def cmd_stage(args: argparse.Namespace) -> int:
    cohort = load_csv(args.cohort)
    staged = stage_cohort(cohort)
    write_stage_report(staged, args.out)
    n1, n2, n3 = staged.counts()
    print(f"staged {len(cohort)} records: stage1={n1} stage2={n2} stage3={n3}")
    return EXIT_OK


# --------------------------------------------------------------------------
# pipeline


def _new_run_dir(base: Path) -> Path:
    stamp = datetime.now(timezone.utc).strftime("run-%Y%m%dT%H%M%SZ")
    path = base / stamp
    n = 1
    while path.exists():
        path = base / f"{stamp}-{n}"
        n += 1
    return path


def _config_from_args(args: argparse.Namespace) -> ProtocolConfig:
    alphas = parse_grid(args.alphas)
    seed = args.seed
    return ProtocolConfig(
        split=SplitSpec(seed=seed),
        k=args.k,
        cv_seed=seed,
        train_seed=seed,
        alphas=alphas,
        regs=(args.reg,),
        shap_method=args.shap_method,
        n_permutations=args.permutations,
        shap_seed=seed,
    )


def cmd_pipeline(args: argparse.Namespace) -> int:
    if args.manifest:
        previous = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        config = ProtocolConfig.from_dict(previous["config"])
        cohort_path = Path(args.cohort or previous["input"]["path"])
    else:
        if not args.cohort or not args.reg:
            raise ValueError("pipeline needs --cohort and --reg (or --manifest)")
        config = _config_from_args(args)
        cohort_path = Path(args.cohort)

    # validates the schema, including the staging columns, before any training
    cohort = load_csv(cohort_path)
    if len(cohort) == 0:
        raise CohortError(f"{cohort_path}: cohort has no records")
    if not config.alphas:
        raise ValueError("alpha grid is empty")

    if args.run_dir:
        run_dir = Path(args.run_dir)
        if run_dir.exists() and any(run_dir.iterdir()):
            raise FileExistsError(f"run directory {run_dir} exists and is not empty")
    else:
        run_dir = _new_run_dir(Path(args.out_dir))
    run_dir.mkdir(parents=True, exist_ok=True)

    result = run_protocol(cohort, config, run_dir, cohort_digest=file_digest(cohort_path))
    # record where the input came from so the manifest can drive a rerun
    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest["input"]["path"] = str(cohort_path.resolve())
    _write_json(manifest_path, manifest)

    print(f"run directory: {run_dir}")
    print(f"auxiliary pair: {', '.join(result.pair.pair)}")
    print(f"selected config: {result.selection.best.as_dict()}")
    for name in sorted(result.outputs):
        print(f"  {name}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmprog", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mmprog {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort CSV")
    g.add_argument("--n", type=int, help="number of patients (default 812)")
    g.add_argument("--seed", type=int, help="generator seed (default 7)")
    g.add_argument("--spec", help="generator spec file (key = value lines)")
    g.add_argument("--out", required=True, help="output CSV path")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("stage", help="write an id,stage report for a cohort")
    s.add_argument("--cohort", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stage)

    p = sub.add_parser("pipeline", help="run the full training and evaluation protocol")
    p.add_argument("--cohort", help="cohort CSV")
    p.add_argument("--reg", choices=("aa", "stage"))
    p.add_argument("--alphas", default="0:8:1", help="start:end:step or a,b,c (default 0:8:1)")
    p.add_argument("--seed", type=int, default=0, help="seed for split, folds, training and Shapley sampling")
    p.add_argument("--k", type=int, default=5, help="number of CV folds")
    p.add_argument("--shap-method", choices=("sampled", "exact"), default="sampled")
    p.add_argument("--permutations", type=int, default=2000)
    p.add_argument("--out-dir", default="runs", help="parent of the timestamped run directory")
    p.add_argument("--run-dir", help="explicit run directory (must be new or empty)")
    p.add_argument("--manifest", help="rerun with the configuration stored in this manifest")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (PipelineError, CohortError, CalibrationError, OSError, ValueError, ArithmeticError, RuntimeError) as exc:
        code = exit_code_for(exc)
        detail = f"{exc}"
        if isinstance(exc, CalibrationError):
            detail += f" (achieved {exc.achieved})"
        print(f"mmprog {args.command}: error: {detail}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
