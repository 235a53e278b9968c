"""Independent reference implementations used as test oracles.

Everything here is written directly from the model definition (double sums
over the event history, numerical quadrature) and shares no code with the
package's recursions.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate, optimize

from gvmhawkes.model import KernelParameters, Realization


def brute_intensity(r: Realization, p: KernelParameters, i: int, t: float) -> float:
    """lambda^{i*}(t) by direct summation; the memory window starts at i's last event before t."""
    past = r.times < t
    own = r.times[past & (r.dims == i)]
    last = own[-1] if own.size else -math.inf
    total = p.mu[i]
    for tk, j in zip(r.times[past], r.dims[past]):
        if tk >= last:
            total += p.alpha[i, j] * math.exp(-p.beta[i] * (t - tk))
        else:
            total += p.alpha_tilde[i, j] * math.exp(-p.beta_tilde[i] * (t - tk))
    return total


def brute_intensity_terms(r: Realization, p: KernelParameters, i: int, t: float) -> tuple[float, float]:
    """Same double sum as :func:`brute_intensity`, vectorised over the history.

    Also returns ``mu_i + sum |term|``, the magnitude scale of the sum.
    """
    past = r.times < t
    tk, j = r.times[past], r.dims[past]
    own = tk[j == i]
    recent = tk >= (own[-1] if own.size else -math.inf)
    terms = np.where(recent, p.alpha[i, j] * np.exp(-p.beta[i] * (t - tk)),
                     p.alpha_tilde[i, j] * np.exp(-p.beta_tilde[i] * (t - tk)))
    return p.mu[i] + float(np.sum(terms)), p.mu[i] + float(np.sum(np.abs(terms)))


def quad_segments(r: Realization, p: KernelParameters, i: int, upto: float | None = None) -> np.ndarray:
    """Integral of (lambda^{i*})^+ over each inter-event segment of [0, upto] by adaptive quadrature.

    Segments are split at events and at every sign change found on a fine scan
    (one at most under a common decay, possibly two otherwise).
    """
    upto = r.horizon if upto is None else upto
    knots = np.concatenate([[0.0], r.times[r.times < upto], [upto]])
    f = lambda s: max(brute_intensity(r, p, i, s), 0.0)  # noqa: E731
    g = lambda s: brute_intensity(r, p, i, s)  # noqa: E731
    out = np.zeros(knots.size - 1)
    for k, (a, b) in enumerate(zip(knots[:-1], knots[1:])):
        if b <= a:
            continue
        scan = np.linspace(a, b, 65)
        scan[0] = a + (b - a) * 1e-12
        vals = np.array([g(s) for s in scan])
        pieces = [a]
        for k2 in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            pieces.append(optimize.brentq(g, scan[k2], scan[k2 + 1], xtol=1e-15, rtol=1e-15))
        pieces.append(b)
        for u, v in zip(pieces[:-1], pieces[1:]):
            val, _ = integrate.quad(f, u, v, epsabs=1e-14, epsrel=1e-12, limit=200)
            out[k] += val
    return out


def quad_compensator(r: Realization, p: KernelParameters, i: int, upto: float | None = None) -> float:
    return float(np.sum(quad_segments(r, p, i, upto)))


def quad_full_compensator_at_events(r: Realization, p: KernelParameters) -> np.ndarray:
    """sum_i Lambda^i at every event time (valid for unequal decays too)."""
    cum = sum(np.cumsum(quad_segments(r, p, i))[: len(r)] for i in range(r.dimension))
    return np.asarray(cum)


def direct_loglik(r: Realization, p: KernelParameters) -> float:
    """sum_i [ sum over own events log lambda^i(T-) - integral of lambda^i ]."""
    ll = 0.0
    for i in range(r.dimension):
        for t in r.times[r.dims == i]:
            lam = brute_intensity(r, p, i, t)
            if lam <= 0:
                return -math.inf
            ll += math.log(lam)
        ll -= quad_compensator(r, p, i)
    return ll


def classical_hp_loglik(r: Realization, mu, alpha, beta) -> float:
    """Linear exponential Hawkes log-likelihood with positive kernels, textbook O(n^2) form."""
    mu, alpha, beta = map(np.asarray, (mu, alpha, beta))
    ll = 0.0
    for i in range(r.dimension):
        for t in r.times[r.dims == i]:
            prev = r.times < t
            ll += math.log(mu[i] + np.sum(alpha[i, r.dims[prev]] * np.exp(-beta[i] * (t - r.times[prev]))))
        comp = mu[i] * r.horizon
        comp += np.sum(alpha[i, r.dims] / beta[i] * (1.0 - np.exp(-beta[i] * (r.horizon - r.times))))
        ll -= comp
    return ll


def random_instance(rng: np.random.Generator, d: int, n: int, common_decay: bool = True,
                    horizon: float | None = None) -> tuple[Realization, KernelParameters]:
    """Random parameters with mixed-sign interactions and a random (not simulated) event history."""
    mu = rng.uniform(0.2, 2.0, d)
    alpha = rng.uniform(-1.5, 1.5, (d, d))
    alpha_tilde = rng.uniform(-1.5, 1.5, (d, d))
    beta = rng.uniform(0.3, 4.0, d)
    beta_tilde = beta.copy() if common_decay else rng.uniform(0.3, 4.0, d)
    T = horizon if horizon is not None else max(1.0, n / 2.0)
    times = np.sort(rng.uniform(0.0, T, n))
    times = times[np.concatenate([[True], np.diff(times) > 0])]
    times = times[times > 0]
    dims = rng.integers(0, d, times.size)
    r = Realization(times, dims, T, d)
    return r, KernelParameters(mu=mu, alpha=alpha, beta=beta, alpha_tilde=alpha_tilde, beta_tilde=beta_tilde)


REF_MU = [0.7, 1.0]
REF_ALPHA = [[0.2, 0.0], [-0.6, 1.2]]
REF_BETA = [3.0, 2.0]
