"""Maximum-likelihood fits and the five-step structural estimation pipeline."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import inference as inf
from .likelihood import neg_loglik_batch
from .model import Constraint, KernelParameters, ModelVariant, Realization, TrialSet, stack_trials

log = logging.getLogger(__name__)

MU_MIN = 1e-8
BETA_MIN = 1e-4
BETA_MAX = 1e4


class OptimizerStatus(str, enum.Enum):
    CONVERGED = "CONVERGED"
    MAX_ITER = "MAX_ITER"
    LINE_SEARCH_FAIL = "LINE_SEARCH_FAIL"


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    pgtol: float = 1e-6
    fd_step: float = 1e-6
    n_starts: int = 1
    seed: int = 0


class ParameterLayout:
    """Map between :class:`KernelParameters` under a mask and a packed free vector.

    ``x[:d]`` holds mu, ``x[d:2d]`` beta (beta_tilde is tied to it), followed by one
    variable per free alpha entry and one per FREE alpha_tilde entry. EQUAL pairs
    share the alpha variable; ZERO and TILDE_ZERO entries have no variable.
    """

    def __init__(self, mask):
        mask = np.asarray(mask, dtype=np.int64)
        d = mask.shape[0]
        self.d = d
        self.mask = mask
        self.alpha_idx = np.full((d, d), -1, dtype=np.int64)
        self.tilde_idx = np.full((d, d), -1, dtype=np.int64)
        q = 2 * d
        for i in range(d):
            for j in range(d):
                if mask[i, j] != Constraint.ZERO:
                    self.alpha_idx[i, j] = q
                    q += 1
        for i in range(d):
            for j in range(d):
                if mask[i, j] == Constraint.FREE:
                    self.tilde_idx[i, j] = q
                    q += 1
                elif mask[i, j] == Constraint.EQUAL:
                    self.tilde_idx[i, j] = self.alpha_idx[i, j]
        self.size = q
        self.lower = np.full(q, -np.inf)
        self.upper = np.full(q, np.inf)
        self.lower[:d] = MU_MIN
        self.lower[d:2 * d] = BETA_MIN
        self.upper[d:2 * d] = BETA_MAX

    def bounds(self):
        return [(None if np.isinf(lo) else lo, None if np.isinf(hi) else hi) for lo, hi in zip(self.lower, self.upper)]

    def pack(self, params: KernelParameters) -> np.ndarray:
        d = self.d
        x = np.zeros(self.size)
        x[:d] = params.mu
        x[d:2 * d] = params.beta
        for i in range(d):
            for j in range(d):
                if self.alpha_idx[i, j] >= 0:
                    x[self.alpha_idx[i, j]] = params.alpha[i, j]
                if self.tilde_idx[i, j] >= 0 and self.tilde_idx[i, j] != self.alpha_idx[i, j]:
                    x[self.tilde_idx[i, j]] = params.alpha_tilde[i, j]
        return np.clip(x, self.lower, self.upper)

    def unpack(self, x) -> KernelParameters:
        d = self.d
        x = np.asarray(x, dtype=float)
        alpha = np.where(self.alpha_idx >= 0, x[np.maximum(self.alpha_idx, 0)], 0.0)
        alpha_tilde = np.where(self.tilde_idx >= 0, x[np.maximum(self.tilde_idx, 0)], 0.0)
        beta = x[d:2 * d]
        return KernelParameters(mu=x[:d], alpha=alpha, beta=beta, alpha_tilde=alpha_tilde, beta_tilde=beta, mask=self.mask)


class Objective:
    """Negative log-likelihood of one or more trials as a function of the packed vector.

    With ``soft`` (the optimiser default) a non-positive intensity at an own event
    is penalised smoothly rather than returning ``inf``; the value is unchanged
    wherever every such intensity exceeds ``LOG_FLOOR``.
    """

    def __init__(self, trials: Sequence[Realization], layout: ParameterLayout, fd_step: float = 1e-6, soft: bool = True):
        self.layout = layout
        self.times, self.dims, self.offsets, self.horizons = stack_trials(trials)
        self.scale = 1.0 / max(1, self.times.size)
        self.fd_step = fd_step
        self.soft = soft
        self.n_evals = 0

    def values(self, xs: np.ndarray) -> np.ndarray:
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        self.n_evals += xs.shape[0]
        return neg_loglik_batch(xs, self.layout.d, self.layout.alpha_idx, self.layout.tilde_idx,
                                self.times, self.dims, self.offsets, self.horizons, self.soft)

    def __call__(self, x) -> float:
        return float(self.values(x)[0])

    def steps(self, x: np.ndarray, h: float | None = None) -> np.ndarray:
        h = self.fd_step if h is None else h
        return h * np.maximum(1.0, np.abs(x))

    def value_and_grad(self, x, h: float | None = None) -> tuple[float, np.ndarray]:
        """Value and central-difference gradient, one-sided next to bounds or infinities."""
        x = np.asarray(x, dtype=float)
        p = x.size
        step = self.steps(x, h)
        up = np.minimum(x + step, self.layout.upper)
        dn = np.maximum(x - step, self.layout.lower)
        xs = np.repeat(x[None, :], 2 * p + 1, axis=0)
        idx = np.arange(p)
        xs[1 + idx, idx] = up
        xs[1 + p + idx, idx] = dn
        vals = self.values(xs)
        f0 = vals[0]
        fp = vals[1:p + 1]
        fm = vals[p + 1:]
        hp = up - x
        hm = x - dn
        grad = np.zeros(p)
        for k in range(p):
            ok_p = np.isfinite(fp[k]) and hp[k] > 0
            ok_m = np.isfinite(fm[k]) and hm[k] > 0
            if ok_p and ok_m:
                grad[k] = (fp[k] - fm[k]) / (hp[k] + hm[k])
            elif ok_p and np.isfinite(f0):
                grad[k] = (fp[k] - f0) / hp[k]
            elif ok_m and np.isfinite(f0):
                grad[k] = (f0 - fm[k]) / hm[k]
        return f0, grad


@dataclass(frozen=True)
class FitResult:
    theta_hat: KernelParameters
    neg_loglik: float
    optimizer_status: OptimizerStatus
    n_evals: int
    seed_of_init: int
    n_iter: int = 0

    def to_dict(self) -> dict:
        return {
            "theta_hat": self.theta_hat.to_dict(),
            "neg_loglik": self.neg_loglik,
            "optimizer_status": self.optimizer_status.value,
            "n_evals": self.n_evals,
            "n_iter": self.n_iter,
            "seed_of_init": self.seed_of_init,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FitResult":
        return cls(KernelParameters.from_dict(doc["theta_hat"]), float(doc["neg_loglik"]),
                   OptimizerStatus(doc["optimizer_status"]), int(doc["n_evals"]), int(doc["seed_of_init"]),
                   int(doc.get("n_iter", 0)))


def default_init(trials: Sequence[Realization], mask) -> KernelParameters:
    """mu from event rates, beta = 1, no interactions."""
    d = trials[0].dimension
    counts = sum(r.counts() for r in trials)
    span = sum(r.horizon for r in trials)
    mu = np.maximum(counts / span, MU_MIN)
    z = np.zeros((d, d))
    return KernelParameters(mu=mu, alpha=z, beta=np.ones(d), alpha_tilde=z, mask=mask)


def _status(res) -> OptimizerStatus:
    if res.success:
        return OptimizerStatus.CONVERGED
    if res.status == 1:
        return OptimizerStatus.MAX_ITER
    return OptimizerStatus.LINE_SEARCH_FAIL


def _minimize(obj: Objective, x0: np.ndarray, opts: FitOptions):
    def fun(x):
        f, g = obj.value_and_grad(x)
        if not np.isfinite(f):
            return 1e300, np.zeros_like(g)
        return f * obj.scale, g * obj.scale

    return minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=obj.layout.bounds(),
                    options={"maxiter": opts.max_iter, "gtol": opts.pgtol, "maxcor": 10})


def fit(data: Realization | Sequence[Realization], mask=None, init: KernelParameters | None = None,
        opts: FitOptions = FitOptions()) -> FitResult:
    """Local maximum-likelihood estimate under ``mask`` (beta_tilde tied to beta).

    Passing several realizations maximises the sum of their log-likelihoods.
    """
    trials = [data] if isinstance(data, Realization) else list(data)
    d = trials[0].dimension
    mask = np.zeros((d, d), dtype=np.int64) if mask is None else np.asarray(mask, dtype=np.int64)
    layout = ParameterLayout(mask)
    obj = Objective(trials, layout, opts.fd_step)
    start = (init if init is not None else default_init(trials, mask)).with_mask(mask)
    x0 = layout.pack(start)
    if not np.isfinite(obj(x0)):
        x0 = layout.pack(default_init(trials, mask))
    starts = [x0]
    rng = np.random.default_rng(opts.seed)
    for _ in range(1, opts.n_starts):
        x = x0.copy()
        x[2 * d:] += rng.normal(0.0, 0.1, size=x.size - 2 * d)
        x[d:2 * d] *= np.exp(rng.normal(0.0, 0.5, size=d))
        starts.append(np.clip(x, layout.lower, layout.upper))
    best = None
    for x in starts:
        res = _minimize(obj, x, opts)
        fx = obj(res.x)
        if best is None or fx < best[1]:
            best = (res, fx)
    res, fx = best
    return FitResult(layout.unpack(res.x), float(fx), _status(res), obj.n_evals, opts.seed, int(res.nit))


def fit_many(trials: Sequence[Realization], mask, inits: Sequence[KernelParameters | None] | None = None,
             opts: FitOptions = FitOptions(), threads: int = 1) -> list[FitResult]:
    inits = [None] * len(trials) if inits is None else list(inits)
    jobs = list(zip(trials, inits))
    if threads <= 1:
        return [fit(r, mask, init, opts) for r, init in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fit(job[0], mask, job[1], opts), jobs))


def average_params(params: Sequence[KernelParameters]) -> KernelParameters:
    """Coordinate-wise mean, summed in the given order."""
    n = len(params)
    first = params[0]
    acc = {k: np.zeros_like(getattr(first, k)) for k in ("mu", "alpha", "beta", "alpha_tilde", "beta_tilde")}
    for p in params:
        for k in acc:
            acc[k] = acc[k] + getattr(p, k)
    return KernelParameters(**{k: v / n for k, v in acc.items()}, mask=first.mask)


# --- structural pipeline -----------------------------------------------------

def variant_mask(d: int, variant: ModelVariant | str) -> np.ndarray:
    variant = ModelVariant(variant)
    fill = {ModelVariant.GVM: Constraint.FREE, ModelVariant.HP: Constraint.EQUAL,
            ModelVariant.VM: Constraint.TILDE_ZERO}[variant]
    return np.full((d, d), int(fill), dtype=np.int64)


@dataclass
class PipelineResult:
    variant: ModelVariant
    fits: dict[int, list[FitResult]]
    tests: dict[int, dict[str, list[inf.PairTest]]]
    rejections: dict[int, dict[str, np.ndarray]]
    masks: dict[int, np.ndarray]
    aggregate: KernelParameters
    options: dict = field(default_factory=dict)

    @property
    def final_mask(self) -> np.ndarray:
        return self.masks[max(self.masks)]

    def to_dict(self) -> dict:
        def mask_doc(m):
            return [[Constraint(int(c)).name for c in row] for row in m]

        return {
            "variant": self.variant.value,
            "options": self.options,
            "steps": {
                str(step): {"fits": [f.to_dict() for f in fits], "mask": mask_doc(self.masks[step])}
                for step, fits in self.fits.items()
            },
            "tests": {
                str(step): {
                    name: [dict(t.to_dict(), rejected=bool(rej)) for t, rej in zip(tests, self.rejections[step][name])]
                    for name, tests in fam.items()
                }
                for step, fam in self.tests.items()
            },
            "final_mask": mask_doc(self.final_mask),
            "aggregate": self.aggregate.to_dict(self.variant),
        }


def _estimates(fits: Sequence[FitResult]) -> tuple[np.ndarray, np.ndarray]:
    a = np.stack([f.theta_hat.alpha for f in fits])
    at = np.stack([f.theta_hat.alpha_tilde for f in fits])
    return a, at


def joint_zero_tests(fits: Sequence[FitResult], ci_kind) -> list[inf.PairTest]:
    """Test 1 on every pair; singular covariances fall back to the sign version."""
    a, at = _estimates(fits)
    d = a.shape[1]
    out = []
    for i in range(d):
        for j in range(d):
            samples = np.column_stack([a[:, i, j], at[:, i, j]])
            try:
                t = inf.test1_joint_zero(samples, ci_kind, (i, j))
            except inf.SingularCovarianceError:
                t = inf.test1_joint_zero(samples, inf.CIKind.EMPIRICAL, (i, j))
                t = inf.PairTest(t.pair, t.statistic, t.p_value, t.kind, t.null, t.flags + ("singular_covariance_fallback",))
            out.append(t)
    return out


def nature_tests(fits: Sequence[FitResult], pairs, ci_kind) -> tuple[list[inf.PairTest], list[inf.PairTest]]:
    a, at = _estimates(fits)
    t2 = [inf.test2_tilde_zero(at[:, i, j], ci_kind, (i, j)) for i, j in pairs]
    t3 = [inf.test3_equal(np.column_stack([a[:, i, j], at[:, i, j]]), ci_kind, (i, j)) for i, j in pairs]
    return t2, t3


def decide_nature(test2: inf.PairTest, rej2: bool, test3: inf.PairTest, rej3: bool) -> Constraint:
    """Constraint for one surviving pair after Tests 2 and 3.

    If neither null is rejected, keep the one with the larger p-value.
    """
    if rej2 and rej3:
        return Constraint.FREE
    if not rej2 and not rej3:
        return Constraint.TILDE_ZERO if test2.p_value > test3.p_value else Constraint.EQUAL
    return Constraint.EQUAL if rej2 else Constraint.TILDE_ZERO


def structural_tests(fits1: Sequence[FitResult], fits3: Sequence[FitResult] | None, q: float = 0.05,
                     ci_kind=inf.CIKind.ASYMPTOTIC, variant: ModelVariant | str = ModelVariant.GVM) -> dict:
    """Re-run the Step-2 and Step-4 tests on stored fits, without refitting.

    ``fits3`` supplies the samples for Tests 2 and 3; without it only Test 1
    is reported.
    """
    variant = ModelVariant(variant)
    d = fits1[0].theta_hat.dimension
    pairs = [(i, j) for i in range(d) for j in range(d)]
    if variant is ModelVariant.GVM:
        t1 = joint_zero_tests(fits1, ci_kind)
    else:
        a, _ = _estimates(fits1)
        t1 = [inf.test_alpha_zero(a[:, i, j], ci_kind, (i, j)) for i, j in pairs]
    rej1 = inf.benjamini_hochberg([t.p_value for t in t1], q)
    out = {"test1": [dict(t.to_dict(), rejected=bool(r)) for t, r in zip(t1, rej1)]}
    mask = variant_mask(d, variant)
    for (i, j), r in zip(pairs, rej1):
        if not r:
            mask[i, j] = Constraint.ZERO
    if variant is ModelVariant.GVM and fits3 is not None:
        surviving = [pr for pr, r in zip(pairs, rej1) if r]
        t2, t3 = nature_tests(fits3, surviving, ci_kind)
        rej2 = inf.benjamini_hochberg([t.p_value for t in t2], q)
        rej3 = inf.benjamini_hochberg([t.p_value for t in t3], q)
        out["test2"] = [dict(t.to_dict(), rejected=bool(r)) for t, r in zip(t2, rej2)]
        out["test3"] = [dict(t.to_dict(), rejected=bool(r)) for t, r in zip(t3, rej3)]
        for k, (i, j) in enumerate(surviving):
            mask[i, j] = decide_nature(t2[k], rej2[k], t3[k], rej3[k])
    out["mask"] = [[Constraint(int(c)).name for c in row] for row in mask]
    return out


def run_pipeline(trials: TrialSet | Sequence[Realization], q: float = 0.05, ci_kind=inf.CIKind.ASYMPTOTIC,
                 variant: ModelVariant | str = ModelVariant.GVM, opts: FitOptions = FitOptions(),
                 threads: int = 1) -> PipelineResult:
    """Fit, test interactions, refit; for GVM also test memory type and refit again.

    HP and VM models stop after the third step and test ``alpha_ij = 0`` instead
    of the joint null.
    """
    trials = list(trials)
    if len(trials) < 3:
        raise ValueError("the pipeline needs at least three realizations")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    variant = ModelVariant(variant)
    ci_kind = inf.CIKind(ci_kind)
    d = trials[0].dimension
    fits, tests, rejections, masks = {}, {}, {}, {}

    masks[1] = variant_mask(d, variant)
    log.info("step 1: fitting %d realizations (%s)", len(trials), variant.value)
    fits[1] = fit_many(trials, masks[1], opts=opts, threads=threads)

    pairs = [(i, j) for i in range(d) for j in range(d)]
    if variant is ModelVariant.GVM:
        t1 = joint_zero_tests(fits[1], ci_kind)
    else:
        a, _ = _estimates(fits[1])
        t1 = [inf.test_alpha_zero(a[:, i, j], ci_kind, (i, j)) for i, j in pairs]
    rej1 = inf.benjamini_hochberg([t.p_value for t in t1], q)
    tests[2] = {"test1": t1}
    rejections[2] = {"test1": rej1}
    mask3 = masks[1].copy()
    for (i, j), r in zip(pairs, rej1):
        if not r:
            mask3[i, j] = Constraint.ZERO
    masks[3] = mask3
    log.info("step 3: refitting with %d zeroed pairs", int((~rej1).sum()))
    fits[3] = fit_many(trials, mask3, inits=[f.theta_hat for f in fits[1]], opts=opts, threads=threads)

    if variant is not ModelVariant.GVM:
        aggregate = average_params([f.theta_hat for f in fits[3]])
        return PipelineResult(variant, fits, tests, rejections, masks, aggregate,
                              {"q": q, "ci_kind": ci_kind.value})

    surviving = [pr for pr, r in zip(pairs, rej1) if r]
    t2, t3 = nature_tests(fits[3], surviving, ci_kind)
    rej2 = inf.benjamini_hochberg([t.p_value for t in t2], q)
    rej3 = inf.benjamini_hochberg([t.p_value for t in t3], q)
    tests[4] = {"test2": t2, "test3": t3}
    rejections[4] = {"test2": rej2, "test3": rej3}
    mask5 = mask3.copy()
    for k, (i, j) in enumerate(surviving):
        mask5[i, j] = decide_nature(t2[k], rej2[k], t3[k], rej3[k])
    masks[5] = mask5
    log.info("step 5: final refit")
    fits[5] = fit_many(trials, mask5, inits=[f.theta_hat for f in fits[3]], opts=opts, threads=threads)
    aggregate = average_params([f.theta_hat for f in fits[5]])
    return PipelineResult(variant, fits, tests, rejections, masks, aggregate, {"q": q, "ci_kind": ci_kind.value})
