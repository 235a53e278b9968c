"""Non-explosion checks: spectral-radius condition and the bounded-kernel VM case."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import KernelParameters, ModelVariant


class Theorem(str, enum.Enum):
    SPECTRAL = "SPECTRAL"
    VM_BOUNDED = "VM_BOUNDED"


@dataclass(frozen=True)
class ExistenceReport:
    spectral_radius: float
    condition_matrix: np.ndarray
    satisfied: bool
    applicable_theorem: Theorem

    def to_dict(self) -> dict:
        return {
            "spectral_radius": self.spectral_radius,
            "condition_matrix": self.condition_matrix.tolist(),
            "satisfied": self.satisfied,
            "applicable_theorem": self.applicable_theorem.value,
        }


def _abs_exp_integral(c: float, b: float, lo: float, hi: float) -> float:
    # int_lo^hi |c| e^{-b t} dt, hi may be inf
    upper = 0.0 if math.isinf(hi) else math.exp(-b * hi)
    return abs(c) / b * (math.exp(-b * lo) - upper)


def l1_max_kernel(alpha: float, alpha_tilde: float, beta: float, beta_tilde: float) -> float:
    """Integral over [0, inf) of |max(alpha e^{-beta t}, alpha_tilde e^{-beta_tilde t})|."""
    if not (beta > 0 and beta_tilde > 0):
        raise ValueError("decay rates must be > 0")
    if beta == beta_tilde:
        return abs(max(alpha, alpha_tilde)) / beta
    # The two exponentials cross at most once on (0, inf): where
    # alpha e^{-beta t} = alpha_tilde e^{-beta_tilde t}.
    cuts = [0.0]
    if alpha != 0.0 and alpha_tilde != 0.0 and (alpha > 0) == (alpha_tilde > 0):
        tc = math.log(alpha / alpha_tilde) / (beta - beta_tilde)
        if tc > 0:
            cuts.append(tc)
    cuts.append(math.inf)
    total = 0.0
    bmin = min(beta, beta_tilde)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        # the dominating branch is constant on (lo, hi); probe its midpoint
        probe = lo + 1.0 if math.isinf(hi) else 0.5 * (lo + hi)
        if alpha * math.exp(-(beta - bmin) * probe) >= alpha_tilde * math.exp(-(beta_tilde - bmin) * probe):
            total += _abs_exp_integral(alpha, beta, lo, hi)
        else:
            total += _abs_exp_integral(alpha_tilde, beta_tilde, lo, hi)
    return total


def condition_matrix(params: KernelParameters) -> np.ndarray:
    d = params.dimension
    out = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            out[i, j] = l1_max_kernel(params.alpha[i, j], params.alpha_tilde[i, j], params.beta[i], params.beta_tilde[i])
    return out


def spectral_radius(m: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(m)))) if m.size else 0.0


def power_iteration_radius(m: np.ndarray, iters: int = 200) -> float:
    """Spectral radius of a nonnegative matrix by power iteration on a positive start vector."""
    v = np.ones(m.shape[0])
    rho = 0.0
    for _ in range(iters):
        w = m @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        rho = norm / np.linalg.norm(v)
        v = w / norm
    return float(rho)


def check_existence(params: KernelParameters, variant: ModelVariant | str = ModelVariant.GVM) -> ExistenceReport:
    variant = ModelVariant(variant)
    mat = condition_matrix(params)
    rho = spectral_radius(mat)
    if variant is ModelVariant.VM:
        # exponential kernels are bounded, so the VM existence theorem always applies
        return ExistenceReport(rho, mat, True, Theorem.VM_BOUNDED)
    return ExistenceReport(rho, mat, rho < 1.0, Theorem.SPECTRAL)
