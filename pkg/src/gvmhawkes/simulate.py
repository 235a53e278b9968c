"""Ogata thinning for HP / VM / GVM exponential Hawkes processes.

RNG layout: realization ``k`` of a batch seeded with ``seed`` draws from
``PCG64(SeedSequence(seed, spawn_key=(k,)))``; a single :func:`simulate` call
uses ``SeedSequence(seed)`` directly.  Within a realization the stream is
consumed as (exponential waiting time, uniform) per candidate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .existence import check_existence
from .intensity import IntensityState, _decay, kernel_arrays
from .model import KernelParameters, ModelVariant, Realization, ValidationError, validate

DEFAULT_BUDGET = 1e7

_OK = 0
_BUDGET = 1


class SimulationError(RuntimeError):
    pass


class ExistenceConditionError(SimulationError, ValidationError):
    """Parameters fail the non-explosion condition and no override was given."""


@dataclass(frozen=True)
class SimulationSpec:
    params: KernelParameters
    variant: ModelVariant = ModelVariant.GVM
    horizon: float | None = None
    n_events: int | None = None
    seed: int = 0
    allow_explosive: bool = False
    budget: float = DEFAULT_BUDGET

    def __post_init__(self):
        if (self.horizon is None) == (self.n_events is None):
            raise ValidationError("give exactly one of horizon or n_events")
        object.__setattr__(self, "variant", ModelVariant(self.variant))


@njit(cache=True, nogil=True, inline="always")
def _dim_bound(mu, a, b, beta, beta_tilde):
    # sup over s >= 0 of (mu + a e^{-beta s} + b e^{-beta_tilde s})^+
    if beta == beta_tilde:
        return max(mu, mu + a + b)
    return mu + max(a, 0.0) + max(b, 0.0)


@njit(cache=True, nogil=True)
def _thin(rng, mu, alpha, beta, alpha_tilde, beta_tilde, horizon, max_events, budget):
    d = mu.size
    cap = 1024
    times = np.empty(cap)
    dims = np.empty(cap, dtype=np.int64)
    n = 0
    eta = np.zeros(d)
    eta_t = np.zeros(d)
    eta_aux = np.zeros(d)
    lam = np.zeros(d)
    prev = -1
    anchor = 0.0
    s = 0.0
    proposals = 0.0
    while True:
        dt = s - anchor
        bound = 0.0
        for i in range(d):
            a = alpha[i, prev] if prev >= 0 else 0.0
            bound += _dim_bound(mu[i], (eta[i] + a) * _decay(-beta[i] * dt), eta_t[i] * _decay(-beta_tilde[i] * dt), beta[i], beta_tilde[i])
        s += rng.exponential(1.0 / bound)
        if s > horizon:
            break
        proposals += 1.0
        if proposals > budget * max(s, 1.0):
            return times[:n], dims[:n], s, _BUDGET
        dt = s - anchor
        total = 0.0
        for i in range(d):
            a = alpha[i, prev] if prev >= 0 else 0.0
            v = mu[i] + (eta[i] + a) * _decay(-beta[i] * dt) + eta_t[i] * _decay(-beta_tilde[i] * dt)
            lam[i] = v if v > 0.0 else 0.0
            total += lam[i]
        u = rng.random() * bound
        if u >= total:
            continue
        # u is uniform on [0, total) given acceptance: reuse it to pick the dimension
        k = d - 1
        acc = 0.0
        for i in range(d):
            acc += lam[i]
            if u < acc:
                k = i
                break
        for i in range(d):
            a = 0.0
            at = 0.0
            if prev >= 0:
                a = alpha[i, prev]
                at = alpha_tilde[i, prev]
            eb = _decay(-beta[i] * dt)
            ebt = _decay(-beta_tilde[i] * dt)
            if i == k:
                eta_t[i] = (eta_t[i] + eta_aux[i] + at) * ebt
                eta[i] = 0.0
                eta_aux[i] = 0.0
            else:
                eta[i] = (eta[i] + a) * eb
                eta_aux[i] = (eta_aux[i] + at) * ebt
                eta_t[i] = eta_t[i] * ebt
        if n == cap:
            cap *= 2
            nt = np.empty(cap)
            nd = np.empty(cap, dtype=np.int64)
            nt[:n] = times[:n]
            nd[:n] = dims[:n]
            times = nt
            dims = nd
        times[n] = s
        dims[n] = k
        n += 1
        prev = k
        anchor = s
        if n >= max_events:
            break
    return times[:n], dims[:n], s, _OK


def segment_bound(state: IntensityState, params: KernelParameters, last_dim: int | None) -> float:
    """Upper bound on the total intensity over the segment starting at the anchor."""
    d = params.dimension
    a = params.alpha[:, last_dim] if last_dim is not None else np.zeros(d)
    return float(sum(
        _dim_bound(params.mu[i], state.eta[i] + a[i], state.eta_tilde[i], params.beta[i], params.beta_tilde[i])
        for i in range(d)
    ))


def _check(spec: SimulationSpec) -> None:
    problems = validate(spec.params, spec.variant)
    if problems:
        raise ValidationError("; ".join(problems))
    if not spec.allow_explosive:
        report = check_existence(spec.params, spec.variant)
        if not report.satisfied:
            raise ExistenceConditionError(
                f"spectral radius {report.spectral_radius:.6g} >= 1; pass allow_explosive to simulate anyway"
            )


def _run(spec: SimulationSpec, seed_seq: np.random.SeedSequence) -> Realization:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    horizon = math.inf if spec.horizon is None else float(spec.horizon)
    max_events = np.iinfo(np.int64).max if spec.n_events is None else int(spec.n_events)
    times, dims, s, status = _thin(rng, *kernel_arrays(spec.params), horizon, max_events, float(spec.budget))
    if status == _BUDGET:
        raise SimulationError(f"proposal budget exhausted near t={s:.6g} ({times.size} events): likely explosion")
    if spec.horizon is None:
        end = float(times[-1]) if times.size else 0.0
    else:
        end = horizon
    return Realization(times.copy(), dims.copy(), end, spec.params.dimension)


def simulate(spec: SimulationSpec) -> Realization:
    _check(spec)
    return _run(spec, np.random.SeedSequence(spec.seed))


def simulate_batch(spec: SimulationSpec, n: int, threads: int = 1) -> list[Realization]:
    """``n`` independent realizations on per-index RNG streams (see module docstring)."""
    _check(spec)
    seqs = [np.random.SeedSequence(spec.seed, spawn_key=(k,)) for k in range(n)]
    if threads <= 1:
        return [_run(spec, s) for s in seqs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda s: _run(spec, s), seqs))
