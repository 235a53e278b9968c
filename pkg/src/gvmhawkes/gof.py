"""Time-rescaling goodness-of-fit with the resampling correction.

Each trial is mapped through its own compensator so a correct model yields a
unit-rate Poisson process; a few transformed trials are concatenated and the
result is tested with Kolmogorov-Smirnov.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .likelihood import compensator
from .model import KernelParameters, Realization


@dataclass(frozen=True, eq=False)
class RescaledRealization:
    transformed_times: np.ndarray
    horizon_mass: float
    per_dimension: tuple[np.ndarray, ...] | None = None

    def increments(self) -> np.ndarray:
        return np.diff(self.transformed_times, prepend=0.0)


def time_rescale(r: Realization, params: KernelParameters, per_dimension: bool = False) -> RescaledRealization:
    """Apply ``Lambda = sum_i Lambda^i`` to every event; optionally ``Lambda^i`` to i's own events."""
    trace = compensator(r, params)
    full = trace.full()
    per = None
    if per_dimension:
        per = tuple(trace.at_events[r.dims == i, i] for i in range(r.dimension))
    return RescaledRealization(full, float(trace.total.sum()), per)


def ks_exponential(increments) -> tuple[float, float]:
    """One-sample KS statistic against Exp(1) and its asymptotic Kolmogorov p-value."""
    x = np.sort(np.asarray(increments, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("KS test needs a nonempty sample")
    cdf = -np.expm1(-x)
    k = np.arange(1, n + 1)
    d_stat = float(max(np.max(k / n - cdf), np.max(cdf - (k - 1) / n)))
    return d_stat, float(stats.kstwobign.sf(math.sqrt(n) * d_stat))


def ks_uniform(points, length: float) -> tuple[float, float]:
    """KS of points against the uniform law on ``[0, length]`` (order-statistics reduction)."""
    u = np.sort(np.asarray(points, dtype=float)) / length
    n = u.size
    if n == 0:
        raise ValueError("KS test needs a nonempty sample")
    k = np.arange(1, n + 1)
    d_stat = float(max(np.max(k / n - u), np.max(u - (k - 1) / n)))
    return d_stat, float(stats.kstwobign.sf(math.sqrt(n) * d_stat))


def subsample_size(n: int, rule: str) -> int:
    if rule == "sqrt":
        return math.isqrt(n)
    if rule == "two_thirds":
        # integer-safe floor of n^(2/3)
        p = int(round(n ** (2.0 / 3.0)))
        while p ** 3 > n * n:
            p -= 1
        while (p + 1) ** 3 <= n * n:
            p += 1
        return p
    raise ValueError(f"unknown p_n rule {rule!r}")


@dataclass(frozen=True)
class GofResult:
    statistic: float
    p_value: float
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "p_value": self.p_value, "diagnostics": self.diagnostics}


def _resample_once(rescaled: Sequence[RescaledRealization], p_n: int, theta_frac: float,
                   rng: np.random.Generator, method: str) -> GofResult:
    n = len(rescaled)
    chosen = rng.choice(n, size=p_n, replace=False)
    pieces = []
    shift = 0.0
    for k in chosen:
        pieces.append(rescaled[k].transformed_times + shift)
        shift += rescaled[k].horizon_mass
    points = np.concatenate(pieces) if pieces else np.zeros(0)
    mean_mass = shift / p_n
    theta_cut = theta_frac * mean_mass
    cut = p_n * theta_cut
    kept = points[points <= cut]
    if kept.size == 0:
        raise ValueError("no transformed points below the truncation level")
    if method == "uniform":
        d_stat, p = ks_uniform(kept, cut)
    else:
        d_stat, p = ks_exponential(np.diff(kept, prepend=0.0))
    diag = {
        "selected": sorted(int(k) for k in chosen),
        "n_points": int(kept.size),
        "mean_mass": mean_mass,
        "theta_cut": theta_cut,
    }
    return GofResult(d_stat, p, diag)


def rescale_trials(trials: Sequence[Realization], theta_hat: KernelParameters) -> list[RescaledRealization]:
    return [time_rescale(r, theta_hat) for r in trials]


def resampling_gof(trials: Sequence[Realization], theta_hat: KernelParameters, p_n_rule: str = "sqrt",
                   theta_frac: float = 0.9, seed: int = 0, method: str = "exp",
                   rescaled: Sequence[RescaledRealization] | None = None) -> GofResult:
    """One resampling repetition: subsample, concatenate, truncate and KS-test."""
    trials = list(trials)
    if len(trials) < 1:
        raise ValueError("need at least one trial")
    if not 0.0 < theta_frac < 1.0:
        raise ValueError("theta_frac must lie in (0, 1)")
    p_n = subsample_size(len(trials), p_n_rule)
    if p_n < 1:
        raise ValueError("subsample size p_n < 1")
    if rescaled is None:
        rescaled = rescale_trials(trials, theta_hat)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return _resample_once(rescaled, p_n, theta_frac, rng, method)


def repeated_gof(trials: Sequence[Realization], theta_hat: KernelParameters, reps: int = 25,
                 p_n_rule: str = "sqrt", theta_frac: float = 0.9, seed: int = 0,
                 method: str = "exp", threads: int = 1) -> dict:
    """``reps`` resampling repetitions on streams ``SeedSequence(seed, spawn_key=(k,))``."""
    trials = list(trials)
    rescaled = rescale_trials(trials, theta_hat)
    p_n = subsample_size(len(trials), p_n_rule)
    if p_n < 1:
        raise ValueError("subsample size p_n < 1")

    def one(k):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(k,))))
        return _resample_once(rescaled, p_n, theta_frac, rng, method)

    if threads <= 1:
        results = [one(k) for k in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(reps)))
    p_values = [g.p_value for g in results]
    return {
        "p_n": p_n,
        "theta_frac": theta_frac,
        "method": method,
        "reps": [g.to_dict() for g in results],
        "p_values": p_values,
        "average_p_value": float(np.mean(p_values)),
        "rejection_rate_05": float(np.mean(np.asarray(p_values) < 0.05)),
    }
