"""Exact compensator and log-likelihood under a common decay (beta_tilde == beta).

With a common decay rate every underlying intensity is, between two events,
``mu_i + C e^{-beta_i (t - T_l)}`` with ``C = lambda*(T_l) - mu_i + alpha[i, d_l]``.
It is monotone, so its positive part is integrated exactly by locating the single
time where it crosses zero from below (the restart time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .intensity import _decay
from .model import KernelParameters, Realization, ValidationError


class DecayConstraintError(ValidationError):
    """The exact compensator needs beta_tilde == beta."""


def _require_common_decay(params: KernelParameters) -> None:
    if not params.common_decay:
        raise DecayConstraintError("compensator and likelihood require beta_tilde == beta")


@njit(cache=True, nogil=True, inline="always")
def _restart_offset(c, mu, beta, span):
    # offset after T_l at which mu + c e^{-beta s} becomes >= 0, clamped to span
    if mu + c >= 0.0:
        return 0.0
    r = math.log(-c / mu) / beta
    return r if r < span else span


@njit(cache=True, nogil=True, inline="always")
def _segment(c, mu, beta, r, span):
    return mu * (span - r) + c / beta * (_decay(-beta * r) - _decay(-beta * span))


def restart_time(lambda_star_at_tl: float, alpha_i_dl: float, mu_i: float, beta_i: float, tl: float, tl_next: float) -> float:
    """First time in ``[tl, tl_next]`` where the underlying intensity is back to >= 0."""
    c = lambda_star_at_tl - mu_i + alpha_i_dl
    return tl + _restart_offset(c, mu_i, beta_i, tl_next - tl)


def segment_integral(lambda_star_at_tl: float, alpha_i_dl: float, mu_i: float, beta_i: float, tl: float, restart: float, t_end: float) -> float:
    """Integral of ``mu + C e^{-beta (s - tl)}`` over ``[restart, t_end]``."""
    c = lambda_star_at_tl - mu_i + alpha_i_dl
    return _segment(c, mu_i, beta_i, restart - tl, t_end - tl)


LOG_FLOOR = 1e-8


@njit(cache=True, nogil=True, inline="always")
def _soft_log(x):
    # log below LOG_FLOOR is continued by its second-order Taylor polynomial
    if x >= LOG_FLOOR:
        return math.log(x)
    u = (x - LOG_FLOOR) / LOG_FLOOR
    return math.log(LOG_FLOOR) + u - 0.5 * u * u


@njit(cache=True, nogil=True)
def _loglik_core(times, dims, lo, hi, horizon, mu, alpha, beta, alpha_tilde, logsum, comp, soft=False):
    """Accumulate per-dimension log-intensity sums and compensators of one trial.

    Returns the index of the first own event with non-positive intensity, or -1.
    With ``soft`` the log is extended below a tiny floor instead, and -1 is
    always returned.
    """
    d = mu.size
    eta = np.zeros(d)
    eta_t = np.zeros(d)
    eta_aux = np.zeros(d)
    prev = -1
    anchor = 0.0
    for l in range(lo, hi + 1):
        t_end = times[l] if l < hi else horizon
        span = t_end - anchor
        k = dims[l] if l < hi else -1
        for i in range(d):
            if prev >= 0:
                c = eta[i] + eta_t[i] + alpha[i, prev]
            else:
                c = 0.0
            r = _restart_offset(c, mu[i], beta[i], span)
            comp[i] += _segment(c, mu[i], beta[i], r, span)
            e = _decay(-beta[i] * span)
            if i == k:
                left = mu[i] + c * e
                if soft:
                    logsum[i] += _soft_log(left)
                elif not left > 0.0:
                    return l
                else:
                    logsum[i] += math.log(left)
                at = alpha_tilde[i, prev] if prev >= 0 else 0.0
                eta_t[i] = (eta_t[i] + eta_aux[i] + at) * e
                eta[i] = 0.0
                eta_aux[i] = 0.0
            elif k >= 0:
                a = 0.0
                at = 0.0
                if prev >= 0:
                    a = alpha[i, prev]
                    at = alpha_tilde[i, prev]
                eta[i] = (eta[i] + a) * e
                eta_aux[i] = (eta_aux[i] + at) * e
                eta_t[i] = eta_t[i] * e
        prev = k
        anchor = t_end
    return -1


@njit(cache=True, nogil=True)
def _compensator_core(times, dims, horizon, mu, alpha, beta, alpha_tilde):
    n = times.size
    d = mu.size
    restart = np.zeros((n, d))
    integrals = np.zeros((n, d))
    at_events = np.zeros((n, d))
    total = np.zeros(d)
    eta = np.zeros(d)
    eta_t = np.zeros(d)
    eta_aux = np.zeros(d)
    prev = -1
    anchor = 0.0
    for l in range(n + 1):
        t_end = times[l] if l < n else horizon
        span = t_end - anchor
        k = dims[l] if l < n else -1
        for i in range(d):
            c = eta[i] + eta_t[i] + alpha[i, prev] if prev >= 0 else 0.0
            r = _restart_offset(c, mu[i], beta[i], span)
            j = _segment(c, mu[i], beta[i], r, span)
            total[i] += j
            if l > 0:
                restart[l - 1, i] = anchor + r
                integrals[l - 1, i] = j
            if l < n:
                at_events[l, i] = total[i]
                e = _decay(-beta[i] * span)
                a = 0.0
                at = 0.0
                if prev >= 0:
                    a = alpha[i, prev]
                    at = alpha_tilde[i, prev]
                if i == k:
                    eta_t[i] = (eta_t[i] + eta_aux[i] + at) * e
                    eta[i] = 0.0
                    eta_aux[i] = 0.0
                else:
                    eta[i] = (eta[i] + a) * e
                    eta_aux[i] = (eta_aux[i] + at) * e
                    eta_t[i] = eta_t[i] * e
        prev = k
        anchor = t_end
    return restart, integrals, at_events, total


@dataclass(frozen=True, eq=False)
class CompensatorTrace:
    """Per-segment restart times and integrals; row ``l`` is the segment after event ``l``.

    The last row's segment ends at the horizon.  ``at_events[l]`` holds
    ``Lambda^i(T_l)`` and ``total`` holds ``Lambda^i(T)``.
    """

    restart_times: np.ndarray
    segment_integrals: np.ndarray
    at_events: np.ndarray
    total: np.ndarray

    def full(self) -> np.ndarray:
        """Compensator of the superposed process at each event time."""
        return self.at_events.sum(axis=1)


def compensator(r: Realization, params: KernelParameters) -> CompensatorTrace:
    _require_common_decay(params)
    restart, integrals, at_events, total = _compensator_core(
        r.times, r.dims, r.horizon, params.mu, params.alpha, params.beta, params.alpha_tilde
    )
    return CompensatorTrace(restart, integrals, at_events, total)


@dataclass(frozen=True)
class LogLikelihood:
    total: float
    per_dimension: np.ndarray
    compensator: np.ndarray
    bad_event: int | None = None

    def to_dict(self) -> dict:
        doc = {
            "total": self.total if math.isfinite(self.total) else None,
            "per_dimension": [v if math.isfinite(v) else None for v in self.per_dimension.tolist()],
            "compensator": self.compensator.tolist(),
        }
        if self.bad_event is not None:
            doc["bad_event"] = self.bad_event
        return doc


def log_likelihood(r: Realization, params: KernelParameters) -> LogLikelihood:
    """Log-likelihood on ``[0, T]``; ``-inf`` if an own-event intensity is not positive."""
    _require_common_decay(params)
    d = params.dimension
    logsum = np.zeros(d)
    comp = np.zeros(d)
    bad = _loglik_core(r.times, r.dims, 0, len(r), r.horizon, params.mu, params.alpha, params.beta, params.alpha_tilde, logsum, comp)
    if bad >= 0:
        per = np.full(d, np.nan)
        per[r.dims[bad]] = -np.inf
        return LogLikelihood(-math.inf, per, comp, int(bad))
    per = logsum - comp
    return LogLikelihood(float(per.sum()), per, comp)


# --- vectorised objective over packed parameter vectors ----------------------

@njit(cache=True, nogil=True)
def _unpack(x, d, alpha_idx, tilde_idx):
    mu = x[:d].copy()
    beta = x[d:2 * d].copy()
    alpha = np.zeros((d, d))
    alpha_tilde = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            q = alpha_idx[i, j]
            if q >= 0:
                alpha[i, j] = x[q]
            q = tilde_idx[i, j]
            if q >= 0:
                alpha_tilde[i, j] = x[q]
    return mu, alpha, beta, alpha_tilde


@njit(cache=True, nogil=True)
def neg_loglik_batch(xs, d, alpha_idx, tilde_idx, times, dims, offsets, horizons, soft=False):
    """Negative log-likelihood summed over trials, for each row of ``xs``.

    Packed layout: ``x[:d] = mu``, ``x[d:2d] = beta``, then free interaction
    variables addressed by ``alpha_idx`` / ``tilde_idx`` (-1 means pinned to 0).
    Non-positive own-event intensities give ``+inf`` unless ``soft`` is set,
    in which case the optimiser-friendly log extension is used.
    """
    m = xs.shape[0]
    out = np.empty(m)
    logsum = np.zeros(d)
    comp = np.zeros(d)
    for row in range(m):
        mu, alpha, beta, alpha_tilde = _unpack(xs[row], d, alpha_idx, tilde_idx)
        acc = 0.0
        for k in range(horizons.size):
            logsum[:] = 0.0
            comp[:] = 0.0
            bad = _loglik_core(times, dims, offsets[k], offsets[k + 1], horizons[k], mu, alpha, beta, alpha_tilde, logsum, comp, soft)
            if bad >= 0:
                acc = math.inf
                break
            for i in range(d):
                acc += comp[i] - logsum[i]
        out[row] = acc
    return out
