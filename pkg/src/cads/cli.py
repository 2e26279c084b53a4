"""Command-line entry point.

Every subcommand writes its results under ``--out`` and records a
``run.json`` provenance file (arguments, seed, versions, timings).
Timestamps live only in ``run.json`` so result files are byte-comparable
across identical runs.  Exit codes: 0 success, 1 validation failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, evaluation, synth
from .conformal import Measure
from .core import ValidationError, load_manifest, split_dataset
from .engine import CascadeEngine
from .optimizer import optimize, verify_on_test
from .router import PolicyConfig


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_engine(args) -> CascadeEngine:
    pool = load_manifest(args.manifest)
    split = split_dataset(
        pool.n_samples, args.seed, labels=pool.labels.labels, stratified=args.stratified
    )
    return CascadeEngine.build(pool, split)


def _split_ids(engine: CascadeEngine, which: str) -> np.ndarray:
    return engine.split.test_ids if which == "test" else engine.split.calibration_ids


def _add_common(parser, manifest: bool = True) -> None:
    if manifest:
        parser.add_argument("manifest", help="path to the pool manifest JSON")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=1, help="split / search seed")
    parser.add_argument(
        "--stratified", action="store_true", help="stratify the calibration split by class"
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=os.cpu_count() or 1,
        help="worker threads where supported (results are unaffected)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cads",
        description="Adaptive cascade inference over exported prediction pools",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a manifest and its files")
    p.add_argument("manifest")

    p = sub.add_parser("profile", help="write the profile bundle (calibration split)")
    _add_common(p)

    p = sub.add_parser("calibrate", help="write per-expert conformal quantiles")
    _add_common(p)
    p.add_argument("--zeta", type=float, default=0.1, help="non-coverage rate")

    p = sub.add_parser("optimize", help="search a policy under a budget")
    _add_common(p)
    p.add_argument("--budget", type=float, required=True, help="mean GFLOPs budget")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--sampler", choices=["tpe", "random"], default="tpe")

    p = sub.add_parser("evaluate", help="run one method and write its report")
    _add_common(p)
    p.add_argument(
        "--method",
        choices=["cads", "confidence", "cumulative", "full", "solo"],
        required=True,
    )
    p.add_argument("--config", help="policy JSON (for --method cads)")
    p.add_argument("--split", choices=["test", "calibration"], default="test")
    p.add_argument("--threshold", type=float, default=evaluation.DEFAULT_CONFIDENCE_THRESHOLD)
    p.add_argument("--weighting", choices=["uniform", "hybrid"], default="hybrid")
    p.add_argument("--expert", type=int, default=0, help="expert id for --method solo")
    p.add_argument(
        "--measure",
        choices=[m.value for m in Measure],
        default=Measure.APS.value,
        help="routing uncertainty source (cads only)",
    )
    p.add_argument("--traces", help="also write per-sample traces as JSON lines (cads only)")

    p = sub.add_parser("sweep", help="optimize across budgets and write the frontier")
    _add_common(p)
    p.add_argument("--budgets", required=True, help="comma-separated ascending budgets")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--sampler", choices=["tpe", "random"], default="tpe")

    p = sub.add_parser("synth", help="generate a synthetic pool")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--preset", choices=sorted(synth.PRESETS), default="standard")
    p.add_argument("--experts", type=int, default=6)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--easy-frac", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=1)

    p = sub.add_parser("ablate", help="run one ablation axis")
    _add_common(p)
    p.add_argument("--axis", choices=["measure", "weighting", "exit"], required=True)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--trials", type=int, default=100)

    return parser


def _cmd_validate(args) -> dict:
    pool = load_manifest(args.manifest)
    print(
        f"OK: {pool.n_experts} experts, {pool.n_samples} samples, "
        f"{pool.n_classes} classes"
    )
    return {"experts": pool.n_experts, "samples": pool.n_samples, "classes": pool.n_classes}


def _cmd_profile(args, out: Path) -> dict:
    engine = _load_engine(args)
    bundle = {
        "dataset": engine.pool.manifest.dataset,
        "seed": args.seed,
        "n_calibration": int(engine.split.calibration_ids.size),
        "n_classes": engine.pool.n_classes,
        "profiles": [p.to_dict() for p in engine.profiles],
        "difficulty": engine.difficulty.to_dict()["difficulty"],
        "complementarity": engine.table.to_dict(),
    }
    _write_json(out / "profiles.json", bundle)
    return {"outputs": ["profiles.json"]}


def _cmd_calibrate(args, out: Path) -> dict:
    engine = _load_engine(args)
    payload = [c.to_dict() for c in engine.calibrations(args.zeta)]
    _write_json(out / "calibrations.json", payload)
    return {"outputs": ["calibrations.json"]}


def _cmd_optimize(args, out: Path) -> dict:
    engine = _load_engine(args)
    study = optimize(engine, args.budget, args.trials, seed=args.seed, sampler=args.sampler)
    verification = verify_on_test(engine, study.best_trial.config, args.budget)
    _write_json(out / "study.json", study.to_dict())
    _write_json(out / "policy.json", study.best_trial.config.to_dict())
    _write_json(out / "verification.json", verification)
    print(
        f"best objective {study.best_trial.objective:.4f} "
        f"(accuracy {study.best_trial.accuracy:.4f}, "
        f"{study.best_trial.mean_gflops:.4f} GFLOPs); "
        f"test accuracy {verification['accuracy']:.4f}, "
        f"test GFLOPs {verification['mean_gflops']:.4f}"
        + (" [BUDGET VIOLATION]" if verification["budget_violation"] else "")
    )
    return {"outputs": ["study.json", "policy.json", "verification.json"]}


def _cmd_evaluate(args, out: Path) -> dict:
    engine = _load_engine(args)
    ids = _split_ids(engine, args.split)
    if args.method == "cads":
        if args.config:
            config = PolicyConfig.from_dict(json.loads(Path(args.config).read_text()))
        else:
            config = engine.default_policy()
        measure = Measure(args.measure)
        if args.traces:
            result = engine.run(config, ids, measure=measure)
            result.to_jsonl(args.traces)
            report = evaluation.report_from_batch(
                result, "cads", params={"measure": measure.value, "config": config.to_dict()}
            )
        else:
            report = evaluation.run_cads(engine, config, ids, measure=measure)
        reports = [report]
    elif args.method == "confidence":
        reports = [evaluation.run_confidence_cascade(engine, args.threshold, ids)]
    elif args.method == "cumulative":
        reports = evaluation.run_cumulative_cascade(engine, ids)
    elif args.method == "full":
        reports = [evaluation.run_full_ensemble(engine, ids, weighting=args.weighting)]
    else:
        if not 0 <= args.expert < engine.pool.n_experts:
            raise ValidationError(
                f"--expert {args.expert} out of range (pool has "
                f"{engine.pool.n_experts} experts)"
            )
        reports = [evaluation.run_solo(engine, args.expert, ids)]
    payload = [r.to_dict() for r in reports]
    _write_json(out / f"report_{args.method}.json", payload)
    for r in reports:
        print(
            f"{r.method}: accuracy {r.accuracy:.4f}, mean {r.mean_gflops:.4f} GFLOPs "
            f"({r.n_samples} samples)"
        )
    return {"outputs": [f"report_{args.method}.json"]}


def _cmd_sweep(args, out: Path) -> dict:
    engine = _load_engine(args)
    budgets = [float(b) for b in args.budgets.split(",") if b.strip()]
    points = evaluation.sweep_budgets(
        engine,
        budgets,
        args.trials,
        seed=args.seed,
        sampler=args.sampler,
        threads=args.threads,
    )
    _write_json(out / "sweep.json", [p.to_dict() for p in points])
    rows = evaluation.sweep_csv_rows(engine, points, engine.split.test_ids)
    evaluation.write_csv(out / "sweep.csv", rows)
    for p in points:
        flag = " [INFEASIBLE]" if p.infeasible else ""
        flag += " [BUDGET VIOLATION]" if p.verification["budget_violation"] else ""
        print(
            f"budget {p.budget:g}: test accuracy {p.verification['accuracy']:.4f}, "
            f"test GFLOPs {p.verification['mean_gflops']:.4f}{flag}"
        )
    return {"outputs": ["sweep.json", "sweep.csv"]}


def _cmd_synth(args, out: Path) -> dict:
    builder = synth.PRESETS[args.preset]
    if args.preset == "standard":
        spec = builder(
            n_experts=args.experts,
            n_classes=args.classes,
            n_samples=args.samples,
            easy_fraction=args.easy_frac,
            seed=args.seed,
        )
    else:
        spec = builder(n_classes=args.classes, n_samples=args.samples, seed=args.seed)
    manifest_path = synth.write_pool(spec, out)
    print(f"wrote {spec.n_experts}-expert pool to {manifest_path}")
    return {"outputs": [str(manifest_path)]}


def _cmd_ablate(args, out: Path) -> dict:
    engine = _load_engine(args)
    budget = args.budget
    if budget is None:
        budget = float(np.median(engine.costs))
    if args.axis == "measure":
        payload = evaluation.ablate_measure(engine, budget, args.trials, args.seed)
    elif args.axis == "weighting":
        payload = evaluation.ablate_weighting(engine, engine.split.test_ids)
    else:
        payload = evaluation.ablate_exit(engine, budget, args.trials, args.seed)
    _write_json(out / f"ablation_{args.axis}.json", payload)
    return {"outputs": [f"ablation_{args.axis}.json"]}


_HANDLERS = {
    "profile": _cmd_profile,
    "calibrate": _cmd_calibrate,
    "optimize": _cmd_optimize,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "synth": _cmd_synth,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    started_at = datetime.now(timezone.utc).isoformat()
    try:
        if args.command == "validate":
            _cmd_validate(args)
            return 0
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        info = _HANDLERS[args.command](args, out)
        run_record = {
            "command": args.command,
            "arguments": {k: v for k, v in vars(args).items() if k != "command"},
            "package_version": __version__,
            "python": sys.version.split()[0],
            "started_at": started_at,
            "duration_seconds": time.time() - started,
            **info,
        }
        _write_json(out / "run.json", run_record)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
