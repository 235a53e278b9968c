"""Synthetic experiment driver: simulate, run the pipelines, score the fits.

A config is a JSON document::

    {
      "name": "bivariate_hp",
      "params": {"mu": [...], "alpha": [[...]], "beta": [...], "alpha_tilde": [[...]]},
      "variant": "hp",
      "n_realizations": 25,
      "n_events": 5000,
      "seeds": {"simulation": 1, "gof": 2, "fit": 0},
      "pipeline": {"q": 0.05, "ci_kind": "asymptotic"},
      "gof": {"reps": 25, "p_n_rule": "sqrt", "theta_frac": 0.9, "method": "exp"},
      "models": ["hp", "vm", "gvm"]
    }

``params_file`` (relative to the config) may replace the inline ``params``.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .estimate import FitOptions, FitResult, PipelineResult, run_pipeline
from .existence import check_existence
from .gof import repeated_gof
from .model import Constraint, KernelParameters, ModelVariant, ValidationError
from .simulate import SimulationSpec, simulate_batch

log = logging.getLogger(__name__)

GROUPS = ("mu", "alpha", "beta", "alpha_tilde")

DEFAULTS = {
    "n_realizations": 25,
    "n_events": 5000,
    "seeds": {"simulation": 0, "gof": 0, "fit": 0},
    "pipeline": {"q": 0.05, "ci_kind": "asymptotic"},
    "gof": {"reps": 25, "p_n_rule": "sqrt", "theta_frac": 0.9, "method": "exp"},
    "models": ["hp", "vm", "gvm"],
}


class ScenarioError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


def bundled_configs() -> list[str]:
    root = resources.files("gvmhawkes") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(ref: str | Path) -> dict:
    """Load a config from a path or by bundled name (e.g. ``bivariate_hp``)."""
    path = Path(ref)
    if path.is_file():
        doc = json.loads(path.read_text())
        base = path.parent
    else:
        res = resources.files("gvmhawkes") / "configs" / f"{ref}.json"
        if not res.is_file():
            raise ValidationError(f"no config file or bundled config named {ref!r}")
        doc = json.loads(res.read_text())
        base = None
    return normalize_config(doc, base)


def normalize_config(doc: dict, base: Path | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for k, v in doc.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k].update(v)
        else:
            cfg[k] = v
    if "name" not in cfg:
        raise ValidationError("config needs a name")
    if "params" not in cfg:
        if "params_file" not in cfg:
            raise ValidationError("config needs params or params_file")
        p = Path(cfg["params_file"])
        if not p.is_absolute() and base is not None:
            p = base / p
        if not p.is_file():
            raise ValidationError(f"params_file {p} does not exist")
        cfg["params"] = json.loads(p.read_text())
        del cfg["params_file"]
    cfg["variant"] = ModelVariant(cfg.get("variant", "gvm")).value
    cfg["models"] = [ModelVariant(m).value for m in cfg["models"]]
    for key in ("simulation", "gof", "fit"):
        if not isinstance(cfg["seeds"].get(key), int):
            raise ValidationError(f"seeds.{key} must be an explicit integer")
    return cfg


def truth_params(cfg: dict) -> KernelParameters:
    p = cfg["params"]
    return KernelParameters.for_variant(p["mu"], p["alpha"], p["beta"], cfg["variant"], p.get("alpha_tilde"))


def true_mask(params: KernelParameters, variant: ModelVariant | str = ModelVariant.GVM) -> np.ndarray:
    """Constraint pattern of ``params`` as the given model would express it."""
    variant = ModelVariant(variant)
    a, at = params.alpha, params.alpha_tilde
    d = params.dimension
    m = np.zeros((d, d), dtype=np.int64)
    for i in range(d):
        for j in range(d):
            if variant is not ModelVariant.GVM:
                zero = a[i, j] == 0.0
                fill = Constraint.EQUAL if variant is ModelVariant.HP else Constraint.TILDE_ZERO
                m[i, j] = Constraint.ZERO if zero else fill
            elif a[i, j] == 0.0 and at[i, j] == 0.0:
                m[i, j] = Constraint.ZERO
            elif at[i, j] == 0.0:
                m[i, j] = Constraint.TILDE_ZERO
            elif a[i, j] == at[i, j]:
                m[i, j] = Constraint.EQUAL
            else:
                m[i, j] = Constraint.FREE
    return m


def group_error(est: np.ndarray, truth: np.ndarray) -> tuple[float, bool]:
    """``|est - truth|^2 / |truth|^2``; absolute squared error (flag True) when ``truth`` is 0."""
    num = float(np.sum((np.asarray(est) - np.asarray(truth)) ** 2))
    den = float(np.sum(np.asarray(truth) ** 2))
    if den == 0.0:
        return num, True
    return num / den, False


def report_errors(fits: dict[int, Sequence[FitResult]] | Sequence[FitResult], truth: KernelParameters) -> dict:
    """Per-step, per-group, per-trial squared errors with absolute-mode flags."""
    if not isinstance(fits, dict):
        fits = {0: fits}
    out = {"steps": {}, "absolute_error_groups": []}
    flagged = set()
    for step, results in fits.items():
        doc = {}
        for g in GROUPS:
            vals = []
            for f in results:
                e, absolute = group_error(getattr(f.theta_hat, g), getattr(truth, g))
                vals.append(e)
                if absolute:
                    flagged.add(g)
            doc[g] = vals
        out["steps"][str(step)] = doc
    out["absolute_error_groups"] = sorted(flagged)
    return out


def _outcome(null_true: bool, rejected: bool) -> str:
    if null_true:
        return "FN" if rejected else "TP"
    return "TN" if rejected else "FP"


def confusion(result: PipelineResult, truth: KernelParameters) -> dict:
    """Per-pair test outcomes against the truth.

    TP: true null kept (zero or equal detected); TN: false null rejected;
    FP: false null kept; FN: true null rejected.
    """
    a, at = truth.alpha, truth.alpha_tilde
    nulls = {
        "test1": lambda i, j: a[i, j] == 0.0 and at[i, j] == 0.0,
        "test2": lambda i, j: at[i, j] == 0.0,
        "test3": lambda i, j: a[i, j] == at[i, j],
    }
    if result.variant is not ModelVariant.GVM:
        nulls["test1"] = lambda i, j: a[i, j] == 0.0
    tables = {}
    for step, fam in result.tests.items():
        for name, tests in fam.items():
            rows = []
            for t, rej in zip(tests, result.rejections[step][name]):
                i, j = t.pair
                rows.append({"pair": [i + 1, j + 1], "outcome": _outcome(bool(nulls[name](i, j)), bool(rej))})
            counts = {k: sum(r["outcome"] == k for r in rows) for k in ("TP", "TN", "FP", "FN")}
            tables[name] = {"pairs": rows, "counts": counts}
    expected = true_mask(truth, result.variant)
    return {
        "tests": tables,
        "true_mask": [[Constraint(int(c)).name for c in row] for row in expected],
        "exact_recovery": bool(np.array_equal(expected, result.final_mask)),
    }


@dataclass
class ScenarioReport:
    config: dict
    manifest: dict
    pipelines: dict[str, dict] = field(default_factory=dict)
    errors: dict[str, dict] = field(default_factory=dict)
    confusion: dict[str, dict] = field(default_factory=dict)
    gof: dict[str, dict] = field(default_factory=dict)

    def pvalue_table(self) -> dict:
        return {k: v["average_p_value"] for k, v in self.gof.items()}

    def files(self) -> dict[str, dict]:
        doc = {
            "manifest.json": self.manifest,
            "errors.json": self.errors,
            "confusion.json": self.confusion,
            "gof.json": self.gof,
            "pvalues.json": {"config": self.config, "average_p_values": self.pvalue_table()},
        }
        for m, p in self.pipelines.items():
            doc[f"pipeline_{m}.json"] = p
        return doc


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # stage-tagged re-raise for the CLI
        raise ScenarioError(name, exc) from exc


def run_scenario(cfg: dict, threads: int = 1) -> ScenarioReport:
    """Simulate the configured truth, fit every requested model and score the fits.

    GoF scores the truth, the GVM aggregate after the final step and the HP/VM
    aggregates after their last step, on the same simulated trials.
    """
    cfg = normalize_config(cfg)
    truth = _stage("config", truth_params, cfg)
    existence = _stage("config", check_existence, truth, cfg["variant"])
    seeds = cfg["seeds"]
    spec = SimulationSpec(truth, cfg["variant"], n_events=int(cfg["n_events"]), seed=seeds["simulation"])
    log.info("%s: simulating %d realizations", cfg["name"], cfg["n_realizations"])
    trials = _stage("simulate", simulate_batch, spec, int(cfg["n_realizations"]), threads)

    manifest = {
        "package_version": __version__,
        "config": cfg,
        "existence": existence.to_dict(),
        "rng": "PCG64; realization k uses SeedSequence(seeds.simulation, spawn_key=(k,)); "
               "GoF repetition k uses SeedSequence(seeds.gof, spawn_key=(k,))",
        "events_per_realization": [len(r) for r in trials],
        "horizons": [r.horizon for r in trials],
    }
    report = ScenarioReport(cfg, manifest)
    opts = FitOptions(seed=seeds["fit"])
    pc = cfg["pipeline"]
    gc = cfg["gof"]

    def gof(theta):
        return repeated_gof(trials, theta, reps=int(gc["reps"]), p_n_rule=gc["p_n_rule"],
                            theta_frac=float(gc["theta_frac"]), seed=seeds["gof"], method=gc["method"], threads=threads)

    report.gof["truth"] = _stage("gof:truth", gof, truth)
    for model in cfg["models"]:
        log.info("%s: %s pipeline", cfg["name"], model)
        res = _stage(f"pipeline:{model}", run_pipeline, trials, q=float(pc["q"]), ci_kind=pc["ci_kind"],
                     variant=model, opts=opts, threads=threads)
        report.pipelines[model] = res.to_dict()
        report.errors[model] = report_errors(res.fits, truth)
        report.confusion[model] = confusion(res, truth)
        report.gof[model] = _stage(f"gof:{model}", gof, res.aggregate)
    return report


def to_json(doc) -> str:
    """Deterministic JSON: sorted keys, fixed indent, non-finite floats as strings."""
    return json.dumps(_finite(doc), sort_keys=True, indent=2) + "\n"


def _finite(x):
    if isinstance(x, float):
        return x if math.isfinite(x) else str(x)
    if isinstance(x, dict):
        return {str(k): _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, np.generic):
        return _finite(x.item())
    if isinstance(x, np.ndarray):
        return _finite(x.tolist())
    return x


def write_report(report: ScenarioReport, out: str | Path) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, doc in sorted(report.files().items()):
        p = out / name
        p.write_text(to_json(doc))
        paths.append(p)
    return paths
