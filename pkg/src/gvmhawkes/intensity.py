"""Underlying intensities of GVM exponential Hawkes processes.

Each receiving dimension ``i`` carries three accumulators anchored at the last
event time ``T_l``:

* ``eta``      recent-past sum (events at or after i's last own event), weights alpha
* ``eta_tilde`` distant-past sum (events before i's last own event), weights alpha_tilde
* ``eta_aux``  the recent-past events again, but weighted by alpha_tilde

The event at ``T_l`` itself is *not* in the accumulators; it enters through the
``alpha[:, d_l]`` term of the following segment.  When ``i`` jumps, its recent
window closes: ``eta`` and ``eta_aux`` are cleared and ``eta_aux`` (plus the
previous event) is moved into ``eta_tilde``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import KernelParameters, Realization

UNDERFLOW = -700.0


@njit(cache=True, nogil=True, inline="always")
def _decay(x):
    if x < UNDERFLOW:
        return 0.0
    return math.exp(x)


@njit(cache=True, nogil=True)
def _replay(times, dims, mu, alpha, beta, alpha_tilde, beta_tilde):
    n = times.size
    d = mu.size
    eta = np.zeros(d)
    eta_t = np.zeros(d)
    eta_aux = np.zeros(d)
    out_eta = np.zeros((n, d))
    out_eta_t = np.zeros((n, d))
    out_aux = np.zeros((n, d))
    left = np.zeros((n, d))
    prev = -1
    t_prev = 0.0
    for l in range(n):
        t = times[l]
        k = dims[l]
        dt = t - t_prev
        for i in range(d):
            a = 0.0
            at = 0.0
            if prev >= 0:
                a = alpha[i, prev]
                at = alpha_tilde[i, prev]
            eb = _decay(-beta[i] * dt)
            ebt = _decay(-beta_tilde[i] * dt)
            left[l, i] = mu[i] + (eta[i] + a) * eb + eta_t[i] * ebt
            if i == k:
                eta_t[i] = (eta_t[i] + eta_aux[i] + at) * ebt
                eta[i] = 0.0
                eta_aux[i] = 0.0
            else:
                eta[i] = (eta[i] + a) * eb
                eta_aux[i] = (eta_aux[i] + at) * ebt
                eta_t[i] = eta_t[i] * ebt
            out_eta[l, i] = eta[i]
            out_eta_t[l, i] = eta_t[i]
            out_aux[l, i] = eta_aux[i]
        prev = k
        t_prev = t
    return out_eta, out_eta_t, out_aux, left


@njit(cache=True, nogil=True)
def _evaluate(times, dims, mu, alpha, beta, alpha_tilde, beta_tilde, grid):
    """Underlying intensities at sorted ``grid`` points (left limits at event times)."""
    n = times.size
    d = mu.size
    m = grid.size
    out = np.zeros((m, d))
    eta = np.zeros(d)
    eta_t = np.zeros(d)
    eta_aux = np.zeros(d)
    prev = -1
    t_prev = 0.0
    l = 0
    for g in range(m):
        s = grid[g]
        while l < n and times[l] < s:
            t = times[l]
            k = dims[l]
            dt = t - t_prev
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
            prev = k
            t_prev = t
            l += 1
        dt = s - t_prev
        for i in range(d):
            a = alpha[i, prev] if prev >= 0 else 0.0
            out[g, i] = mu[i] + (eta[i] + a) * _decay(-beta[i] * dt) + eta_t[i] * _decay(-beta_tilde[i] * dt)
    return out


def kernel_arrays(params: KernelParameters):
    return params.mu, params.alpha, params.beta, params.alpha_tilde, params.beta_tilde


@dataclass(frozen=True, eq=False)
class IntensityState:
    """Accumulators anchored at ``anchor_time`` (an event time, or 0 before any event)."""

    eta: np.ndarray
    eta_tilde: np.ndarray
    eta_aux: np.ndarray
    anchor_time: float = 0.0

    @classmethod
    def zero(cls, d: int) -> "IntensityState":
        return cls(np.zeros(d), np.zeros(d), np.zeros(d), 0.0)

    def underlying(self, params: KernelParameters) -> np.ndarray:
        """lambda* at the anchor itself: ``mu + eta + eta_tilde``."""
        return params.mu + self.eta + self.eta_tilde


def _jump_terms(params: KernelParameters, dim: int | None, d: int):
    if dim is None:
        return np.zeros(d), np.zeros(d)
    return params.alpha[:, dim], params.alpha_tilde[:, dim]


def underlying_intensity_between(state: IntensityState, params: KernelParameters, last_dim: int | None, t: float) -> np.ndarray:
    """lambda*(t) for ``t`` after the anchor event and up to (left limit of) the next one.

    ``last_dim`` is the 0-based dimension of the anchor event, or ``None`` when
    the anchor is time 0 with no event.
    """
    if not t > state.anchor_time:
        raise ValueError(f"t={t} must exceed the anchor time {state.anchor_time}")
    d = params.dimension
    a, _ = _jump_terms(params, last_dim, d)
    dt = t - state.anchor_time
    eb = np.where(-params.beta * dt < UNDERFLOW, 0.0, np.exp(-params.beta * dt))
    ebt = np.where(-params.beta_tilde * dt < UNDERFLOW, 0.0, np.exp(-params.beta_tilde * dt))
    return params.mu + (state.eta + a) * eb + state.eta_tilde * ebt


def advance_state(state: IntensityState, params: KernelParameters, next_time: float, next_dim: int, prev_dim: int | None) -> IntensityState:
    """Move the anchor from the current event to the next one at ``next_time`` in ``next_dim``."""
    if not next_time > state.anchor_time:
        raise ValueError(f"next_time={next_time} must exceed the anchor time {state.anchor_time}")
    d = params.dimension
    a, at = _jump_terms(params, prev_dim, d)
    dt = next_time - state.anchor_time
    eb = np.where(-params.beta * dt < UNDERFLOW, 0.0, np.exp(-params.beta * dt))
    ebt = np.where(-params.beta_tilde * dt < UNDERFLOW, 0.0, np.exp(-params.beta_tilde * dt))
    eta = (state.eta + a) * eb
    eta_aux = (state.eta_aux + at) * ebt
    eta_tilde = state.eta_tilde * ebt
    eta_tilde[next_dim] = (state.eta_tilde[next_dim] + state.eta_aux[next_dim] + at[next_dim]) * ebt[next_dim]
    eta[next_dim] = 0.0
    eta_aux[next_dim] = 0.0
    return IntensityState(eta, eta_tilde, eta_aux, float(next_time))


@dataclass(frozen=True, eq=False)
class ReplayTrace:
    """States right at each event and left-limit intensities just before it."""

    times: np.ndarray
    dims: np.ndarray
    eta: np.ndarray
    eta_tilde: np.ndarray
    eta_aux: np.ndarray
    left_limits: np.ndarray

    def __len__(self) -> int:
        return self.times.size

    def __getitem__(self, l: int) -> tuple[IntensityState, np.ndarray]:
        state = IntensityState(self.eta[l].copy(), self.eta_tilde[l].copy(), self.eta_aux[l].copy(), float(self.times[l]))
        return state, self.left_limits[l]

    def own_left_limits(self) -> np.ndarray:
        """lambda*(T_l^-) of the dimension that jumps at each event."""
        return self.left_limits[np.arange(self.times.size), self.dims]


def replay(r: Realization, params: KernelParameters) -> ReplayTrace:
    if r.dimension != params.dimension:
        raise ValueError("realization and parameters disagree on dimension")
    eta, eta_t, aux, left = _replay(r.times, r.dims, *kernel_arrays(params))
    return ReplayTrace(r.times, r.dims, eta, eta_t, aux, left)


def underlying_intensity(r: Realization, params: KernelParameters, t) -> np.ndarray:
    """lambda* at arbitrary times ``t`` (shape ``(len(t), d)``); left limits at event times."""
    grid = np.atleast_1d(np.asarray(t, dtype=float))
    order = np.argsort(grid, kind="stable")
    vals = _evaluate(r.times, r.dims, *kernel_arrays(params), grid[order])
    out = np.empty_like(vals)
    out[order] = vals
    return out


def conditional_intensity(r: Realization, params: KernelParameters, t) -> np.ndarray:
    """lambda = (lambda*)^+ at times ``t``."""
    return np.maximum(underlying_intensity(r, params, t), 0.0)
