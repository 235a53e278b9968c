import numpy as np
import pytest
from scipy import integrate, optimize

from gvmhawkes.existence import (Theorem, check_existence, condition_matrix, l1_max_kernel, power_iteration_radius,
                                 spectral_radius)
from gvmhawkes.model import KernelParameters
from oracles import REF_ALPHA, REF_BETA, REF_MU


def quad_l1(a, at, b, bt):
    f = lambda t: abs(max(a * np.exp(-b * t), at * np.exp(-bt * t)))  # noqa: E731
    diff = lambda t: a * np.exp(-b * t) - at * np.exp(-bt * t)  # noqa: E731
    # locate kinks of the integrand on a grid, refine with brentq, integrate piecewise
    grid = np.linspace(0.0, 60.0, 6001)
    vals = diff(grid)
    knots = [0.0]
    for k in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        knots.append(optimize.brentq(diff, grid[k], grid[k + 1], xtol=1e-15))
    total = 0.0
    for lo, hi in zip(knots, knots[1:] + [np.inf]):
        val, _ = integrate.quad(f, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=500)
        total += val
    return total


def test_l1_examples():
    assert l1_max_kernel(0.2, 0.2, 3, 3) == pytest.approx(0.2 / 3, abs=1e-15)
    assert l1_max_kernel(-0.6, -0.6, 2, 2) == pytest.approx(0.3, abs=1e-15)
    assert l1_max_kernel(0.0, 0.0, 1, 2) == 0.0
    with pytest.raises(ValueError):
        l1_max_kernel(0.1, 0.1, 0.0, 1.0)


def test_l1_unequal_decays_vs_quadrature():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, at = rng.uniform(-2, 2, 2)
        b, bt = rng.uniform(0.2, 5, 2)
        assert l1_max_kernel(a, at, b, bt) == pytest.approx(quad_l1(a, at, b, bt), rel=1e-8, abs=1e-12)


def test_reference_parameters():
    p = KernelParameters.for_variant(REF_MU, REF_ALPHA, REF_BETA, "hp")
    rep = check_existence(p, "hp")
    assert np.allclose(rep.condition_matrix, [[0.2 / 3, 0.0], [0.3, 0.6]], atol=1e-15, rtol=0)
    assert abs(rep.spectral_radius - 0.6) < 1e-12
    assert rep.satisfied and rep.applicable_theorem is Theorem.SPECTRAL


def test_vm_always_satisfied():
    p = KernelParameters.for_variant([1.0], [[50.0]], [1.0], "vm")
    rep = check_existence(p, "vm")
    assert rep.satisfied and rep.applicable_theorem is Theorem.VM_BOUNDED
    assert rep.spectral_radius == pytest.approx(50.0)


def test_boundary_not_satisfied():
    p = KernelParameters(mu=[1.0], alpha=[[2.0]], beta=[2.0], alpha_tilde=[[2.0]])
    rep = check_existence(p, "gvm")
    assert rep.spectral_radius == pytest.approx(1.0, abs=1e-15)
    assert not rep.satisfied


def test_eig_vs_power_iteration_and_scaling():
    rng = np.random.default_rng(4)
    for _ in range(50):
        d = int(rng.integers(1, 6))
        p = KernelParameters(mu=np.ones(d), alpha=rng.uniform(-1, 1, (d, d)), beta=rng.uniform(0.5, 3, d),
                             alpha_tilde=rng.uniform(-1, 1, (d, d)), beta_tilde=rng.uniform(0.5, 3, d))
        m = condition_matrix(p)
        rho = spectral_radius(m)
        assert abs(rho - power_iteration_radius(m)) < 1e-8 * max(1.0, rho)
        scaled = p.replace(alpha=p.alpha * 1.7, alpha_tilde=p.alpha_tilde * 1.7)
        assert spectral_radius(condition_matrix(scaled)) == pytest.approx(1.7 * rho, rel=1e-10)
