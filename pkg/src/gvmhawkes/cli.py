"""Command-line entry point.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dp
from .estimate import FitOptions, FitResult, fit, fit_many, run_pipeline, structural_tests, variant_mask
from .existence import check_existence
from .gof import repeated_gof
from .inference import SingularCovarianceError
from .likelihood import log_likelihood
from .model import (Constraint, KernelParameters, ModelVariant, ValidationError, load_params, read_realization,
                    read_trials, validate, write_realization, write_trials)
from .scenario import ScenarioError, load_config, run_scenario, to_json, write_report
from .simulate import SimulationError, SimulationSpec, simulate, simulate_batch

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3


def _emit(doc, out: str | None) -> None:
    text = to_json(doc)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _params(path: str, variant: str | None) -> tuple[KernelParameters, ModelVariant]:
    params, stored = load_params(path)
    v = ModelVariant(variant) if variant else (stored or ModelVariant.GVM)
    return params, v


def _trials(path: str) -> list:
    p = Path(path)
    if p.is_dir():
        return list(read_trials(p))
    return [read_realization(p)]


def _parse_mask(text: str | None, d: int, variant: str) -> np.ndarray:
    if text is None:
        return variant_mask(d, variant)
    doc = json.loads(Path(text).read_text()) if Path(text).is_file() else json.loads(text)
    return np.array([[Constraint[c] if isinstance(c, str) else int(c) for c in row] for row in doc], dtype=np.int64)


def cmd_check(args) -> int:
    params, variant = _params(args.params, args.variant)
    problems = validate(params, variant)
    if problems:
        _emit({"valid": False, "problems": problems}, args.out)
        return EXIT_INVALID
    _emit({"valid": True, "variant": variant.value, "existence": check_existence(params, variant).to_dict()}, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    params, variant = _params(args.params, args.variant)
    spec = SimulationSpec(params, variant, horizon=args.horizon, n_events=args.n_events, seed=args.seed,
                          allow_explosive=args.allow_explosive)
    if args.out.endswith(".csv"):
        if args.n != 1:
            raise ValidationError("a .csv output holds one realization; use a directory with --n > 1")
        r = simulate(spec)
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_realization(r, args.out)
        _emit({"variant": variant.value, "seed": args.seed, "events": len(r), "horizon": r.horizon}, None)
        return EXIT_OK
    reals = simulate_batch(spec, args.n, threads=args.threads)
    paths = write_trials(reals, args.out)
    summary = {
        "variant": variant.value,
        "seed": args.seed,
        "files": [p.name for p in paths],
        "events": [len(r) for r in reals],
        "horizons": [r.horizon for r in reals],
    }
    (Path(args.out) / "simulation.json").write_text(to_json(summary))
    return EXIT_OK


def cmd_loglik(args) -> int:
    params, _ = _params(args.params, None)
    trials = _trials(args.data)
    rows = [log_likelihood(r, params).to_dict() for r in trials]
    finite = [r["total"] for r in rows if r["total"] is not None]
    total = sum(finite) if len(finite) == len(rows) else None
    _emit({"trials": rows, "total": total}, args.out)
    return EXIT_OK if total is not None else EXIT_NUMERICAL


def cmd_fit(args) -> int:
    trials = _trials(args.data)
    opts = FitOptions(n_starts=args.starts, seed=args.seed)
    if not (args.single or args.joint or args.mask):
        res = run_pipeline(trials, q=args.q, ci_kind=args.ci, variant=args.variant, opts=opts, threads=args.threads)
        _emit(res.to_dict(), args.out)
        if args.params_out:
            Path(args.params_out).write_text(to_json(res.aggregate.to_dict(res.variant)))
        return EXIT_OK
    d = trials[0].dimension
    mask = _parse_mask(args.mask, d, args.variant)
    if args.joint:
        results = [fit(trials, mask, opts=opts)]
    else:
        results = fit_many(trials, mask, opts=opts, threads=args.threads)
    _emit({"variant": ModelVariant(args.variant).value, "joint": args.joint,
           "fits": [r.to_dict() for r in results]}, args.out)
    return EXIT_OK


def cmd_test(args) -> int:
    doc = json.loads(Path(args.fits).read_text())
    steps = doc.get("steps", {})
    if "1" not in steps:
        raise ValidationError(f"{args.fits}: no step-1 fits found")
    fits1 = [FitResult.from_dict(f) for f in steps["1"]["fits"]]
    fits3 = [FitResult.from_dict(f) for f in steps["3"]["fits"]] if "3" in steps else None
    variant = args.variant or doc.get("variant", "gvm")
    _emit(structural_tests(fits1, fits3, q=args.q, ci_kind=args.ci, variant=variant), args.out)
    return EXIT_OK


def cmd_gof(args) -> int:
    trials = _trials(args.data)
    doc = json.loads(Path(args.params).read_text())
    if "aggregate" in doc:  # accept a `test` result directly
        doc = doc["aggregate"]
    params = KernelParameters.from_dict(doc)
    res = repeated_gof(trials, params, reps=args.reps, p_n_rule=args.pn, theta_frac=args.theta_frac,
                       seed=args.seed, method=args.method, threads=args.threads)
    _emit(res, args.out)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    ds = dp.load_manifest(args.manifest)
    if args.trim:
        ds = dp.trim(ds, args.trim)
    if args.max_inactive is not None:
        ds = dp.filter_trials(ds, args.max_inactive)
    if args.min_jumps is not None:
        ds = dp.filter_neurons(ds, args.min_jumps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resample:
        k, n = args.resample
        reals = dp.resample_concat(ds, k, n, args.seed)
    else:
        reals = list(ds.trials)
    paths = write_trials(reals, out / "realizations")
    counts_dir = out / "normalized_counts"
    counts_dir.mkdir(exist_ok=True)
    for name, r in zip(ds.trial_names, ds.trials):
        dp.write_normalized_counts(r, counts_dir / f"{name}.csv", labels=ds.neuron_ids)
    prov = {
        "steps": list(ds.provenance),
        "neuron_ids": list(ds.neuron_ids),
        "trial_names": list(ds.trial_names),
        "resample": {"k_per_sample": args.resample[0], "n_samples": args.resample[1], "seed": args.seed}
        if args.resample else None,
        "realizations": [p.name for p in paths],
    }
    (out / "provenance.json").write_text(to_json(prov))
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = load_config(args.config)
    for key in ("n_realizations", "n_events"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    if args.seed is not None:
        cfg["seeds"]["simulation"] = args.seed
    report = run_scenario(cfg, threads=args.threads)
    write_report(report, args.out)
    _emit({"name": cfg["name"], "average_p_values": report.pvalue_table(),
           "exact_recovery": {m: c["exact_recovery"] for m, c in report.confusion.items()}}, None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gvmhawkes", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    variants = [v.value for v in ModelVariant]

    s = sub.add_parser("check", help="validate parameters and check the stability condition")
    s.add_argument("--params", required=True)
    s.add_argument("--variant", choices=variants)
    s.add_argument("--out")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="simulate realizations by thinning")
    s.add_argument("--params", required=True)
    s.add_argument("--variant", choices=variants)
    stop = s.add_mutually_exclusive_group(required=True)
    stop.add_argument("--horizon", type=float)
    stop.add_argument("--n-events", "--events", type=int)
    s.add_argument("--n", type=int, default=1, help="number of realizations")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--allow-explosive", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("loglik", help="exact log-likelihood of a realization or directory of trials")
    s.add_argument("--data", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_loglik)

    s = sub.add_parser("fit", help="run the five-step estimation pipeline (or plain per-trial fits)")
    s.add_argument("--data", required=True, help="realization CSV or directory of trial CSVs")
    s.add_argument("--variant", choices=variants, default="gvm")
    s.add_argument("--q", type=float, default=0.05)
    s.add_argument("--ci", choices=["asymptotic", "empirical"], default="asymptotic")
    s.add_argument("--single", action="store_true", help="plain per-trial fits, no testing")
    s.add_argument("--mask", help="JSON matrix of FREE/ZERO/EQUAL/TILDE_ZERO (inline or file); implies --single")
    s.add_argument("--joint", action="store_true", help="one fit maximising the summed log-likelihood")
    s.add_argument("--starts", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--params-out", help="pipeline mode: also write the aggregated parameters here")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("test", help="re-run Tests 1-3 on the fits stored in a pipeline result")
    s.add_argument("--fits", required=True, help="result JSON written by `fit`")
    s.add_argument("--variant", choices=variants)
    s.add_argument("--q", type=float, default=0.05)
    s.add_argument("--ci", choices=["asymptotic", "empirical"], default="asymptotic")
    s.add_argument("--out")
    s.set_defaults(func=cmd_test)

    s = sub.add_parser("gof", help="resampling time-rescaling goodness-of-fit")
    s.add_argument("--data", required=True)
    s.add_argument("--params", required=True)
    s.add_argument("--pn", choices=["sqrt", "two_thirds"], default="sqrt")
    s.add_argument("--theta-frac", type=float, default=0.9)
    s.add_argument("--reps", type=int, default=25)
    s.add_argument("--method", choices=["exp", "uniform"], default="exp")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_gof)

    s = sub.add_parser("preprocess", help="trim, filter and resample spike-train trials")
    s.add_argument("--manifest", required=True)
    s.add_argument("--trim", type=float, nargs=2, metavar=("A", "B"))
    s.add_argument("--max-inactive", type=int)
    s.add_argument("--min-jumps", type=int)
    s.add_argument("--resample", type=int, nargs=2, metavar=("K", "N"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("scenario", help="run a synthetic experiment config end to end")
    s.add_argument("--config", required=True, help="config path or bundled name")
    s.add_argument("--out", required=True)
    s.add_argument("--n-realizations", type=int)
    s.add_argument("--n-events", type=int)
    s.add_argument("--seed", type=int, help="override seeds.simulation")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, (ValidationError, FileNotFoundError)) else EXIT_NUMERICAL
    except (ValidationError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:  # before SimulationError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, SingularCovarianceError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
