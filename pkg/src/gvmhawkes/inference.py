"""Interaction tests across repeated fits and Benjamini-Hochberg selection."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class CIKind(str, enum.Enum):
    ASYMPTOTIC = "asymptotic"
    EMPIRICAL = "empirical"


class TestKind(str, enum.Enum):
    __test__ = False

    HOTELLING_T2 = "HOTELLING_T2"
    STUDENT_T = "STUDENT_T"
    EMPIRICAL_SIGN = "EMPIRICAL_SIGN"


class Null(str, enum.Enum):
    JOINT_ZERO = "JOINT_ZERO"
    TILDE_ZERO = "TILDE_ZERO"
    EQUAL = "EQUAL"
    ALPHA_ZERO = "ALPHA_ZERO"


class SingularCovarianceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PairTest:
    pair: tuple[int, int]
    statistic: float
    p_value: float
    kind: TestKind
    null: Null
    flags: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        stat = self.statistic
        return {
            "pair": [self.pair[0] + 1, self.pair[1] + 1],
            "statistic": stat if math.isfinite(stat) else str(stat),
            "p_value": self.p_value,
            "kind": self.kind.value,
            "null": self.null.value,
            "flags": list(self.flags),
        }


def sign_p_value(samples) -> float:
    """Two-sided sign-count p-value ``2 min(k+, k-) / n``."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    return 2.0 * min(int(np.sum(x > 0)), int(np.sum(x < 0))) / n


def _student(samples, pair, null, ci_kind) -> PairTest:
    x = np.asarray(samples, dtype=float)
    n = x.size
    if CIKind(ci_kind) is CIKind.EMPIRICAL:
        return PairTest(pair, float(np.mean(x)), sign_p_value(x), TestKind.EMPIRICAL_SIGN, null)
    if n < 2:
        raise ValueError("need at least two samples")
    mean = float(np.mean(x))
    var = float(np.var(x, ddof=1))
    if np.ptp(x) == 0.0:
        # constant samples: exactly zero gives no evidence, any other constant is conclusive
        if mean == 0.0:
            return PairTest(pair, 0.0, 1.0, TestKind.STUDENT_T, null, ("zero_variance",))
        return PairTest(pair, math.copysign(math.inf, mean), 0.0, TestKind.STUDENT_T, null, ("zero_variance",))
    t = mean * math.sqrt(n / var)
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), n - 1)))
    return PairTest(pair, t, p, TestKind.STUDENT_T, null)


def test_alpha_zero(alpha_samples, ci_kind=CIKind.ASYMPTOTIC, pair=(0, 0)) -> PairTest:
    """Univariate null ``alpha_ij = 0`` used when fitting the HP or VM model."""
    return _student(alpha_samples, pair, Null.ALPHA_ZERO, ci_kind)


def test1_joint_zero(samples, ci_kind=CIKind.ASYMPTOTIC, pair=(0, 0)) -> PairTest:
    """Null ``(alpha_ij, alpha_tilde_ij) = (0, 0)`` from ``n`` rows of estimates.

    The asymptotic version is Hotelling's T^2 with parameters (2, n-1), evaluated
    through ``T^2 (n-2) / (2(n-1)) ~ F(2, n-2)``. The empirical version combines
    the two coordinate sign p-values with a Bonferroni factor of two.
    """
    g = np.asarray(samples, dtype=float).reshape(-1, 2)
    n = g.shape[0]
    if n < 3:
        raise ValueError("Test 1 needs at least three samples")
    if CIKind(ci_kind) is CIKind.EMPIRICAL:
        p0 = sign_p_value(g[:, 0])
        p1 = sign_p_value(g[:, 1])
        return PairTest(pair, min(p0, p1), min(1.0, 2.0 * min(p0, p1)), TestKind.EMPIRICAL_SIGN, Null.JOINT_ZERO)
    mean = g.mean(axis=0)
    cov = np.cov(g, rowvar=False, ddof=1)
    scale = np.max(np.abs(cov))
    if scale == 0.0 or np.linalg.cond(cov) > 1e12:
        raise SingularCovarianceError(f"sample covariance of pair {pair} is singular")
    t2 = float(n * mean @ np.linalg.solve(cov, mean))
    f = t2 * (n - 2) / (2.0 * (n - 1))
    p = float(stats.f.sf(f, 2, n - 2))
    return PairTest(pair, t2, p, TestKind.HOTELLING_T2, Null.JOINT_ZERO)


def test2_tilde_zero(tilde_samples, ci_kind=CIKind.ASYMPTOTIC, pair=(0, 0)) -> PairTest:
    """Null ``alpha_tilde_ij = 0``."""
    return _student(tilde_samples, pair, Null.TILDE_ZERO, ci_kind)


def test3_equal(samples, ci_kind=CIKind.ASYMPTOTIC, pair=(0, 0)) -> PairTest:
    """Null ``alpha_ij = alpha_tilde_ij`` from rows ``(alpha, alpha_tilde)``; tested on differences."""
    g = np.asarray(samples, dtype=float).reshape(-1, 2)
    return _student(g[:, 0] - g[:, 1], pair, Null.EQUAL, ci_kind)


def benjamini_hochberg(p_values, q: float) -> np.ndarray:
    """Boolean rejection mask of the step-up procedure at FDR level ``q``."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    below = p[order] <= q * np.arange(1, m + 1) / m
    if below.any():
        k = int(np.nonzero(below)[0].max())
        reject[order[: k + 1]] = True
    return reject


def empirical_ci(samples, eta: float) -> tuple[float, float]:
    """Order-statistic interval ``[x_(floor(eta n / 2)), x_(ceil((1 - eta / 2) n))]``, with ``x_(0) = -inf``."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 1:
        raise ValueError("empty sample")
    # round away binary noise before floor/ceil so that e.g. 0.75 * 4 stays 3
    lo = math.floor(round(eta * n / 2.0, 9))
    hi = math.ceil(round((1.0 - eta / 2.0) * n, 9))
    hi = min(max(hi, 1), n)
    lower = -math.inf if lo == 0 else float(x[lo - 1])
    return lower, float(x[hi - 1])


# keep pytest from collecting these when imported into test modules
for _f in (test_alpha_zero, test1_joint_zero, test2_tilde_zero, test3_equal):
    _f.__test__ = False
