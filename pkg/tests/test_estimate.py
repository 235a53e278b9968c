import numpy as np
import pytest

from gvmhawkes import inference as inf
from gvmhawkes.estimate import (FitOptions, FitResult, ParameterLayout, average_params, decide_nature, fit,
                                run_pipeline, structural_tests, variant_mask)
from gvmhawkes.model import Constraint, KernelParameters, Realization
from gvmhawkes.simulate import SimulationSpec, simulate, simulate_batch
from oracles import REF_ALPHA, REF_BETA, REF_MU

C = Constraint


def reference(variant):
    return KernelParameters.for_variant(REF_MU, REF_ALPHA, REF_BETA, variant)


def test_layout_masks_are_exact():
    mask = np.array([[C.FREE, C.ZERO], [C.EQUAL, C.TILDE_ZERO]])
    layout = ParameterLayout(mask)
    assert layout.size == 4 + 3 + 1
    x = np.arange(1.0, 9.0)
    p = layout.unpack(x)
    assert p.alpha[0, 1] == 0.0 and p.alpha_tilde[0, 1] == 0.0
    assert p.alpha[1, 0] == p.alpha_tilde[1, 0]
    assert p.alpha_tilde[1, 1] == 0.0 and p.alpha[1, 1] != 0.0
    assert np.array_equal(p.beta, p.beta_tilde)
    assert np.array_equal(layout.pack(p), x)


def test_poisson_mle_is_rate():
    p = KernelParameters(mu=[1.5], alpha=[[0.0]], beta=[1.0], alpha_tilde=[[0.0]])
    r = simulate(SimulationSpec(p, "gvm", horizon=400.0, seed=3))
    res = fit(r, mask=[[C.ZERO]])
    assert res.theta_hat.mu[0] == pytest.approx(len(r) / r.horizon, rel=1e-5)
    assert res.optimizer_status.value == "CONVERGED"


def test_fit_from_truth_improves_likelihood():
    p = reference("hp")
    r = simulate(SimulationSpec(p, "hp", n_events=3000, seed=1))
    mask = variant_mask(2, "hp")
    res = fit(r, mask, init=p)
    from gvmhawkes.likelihood import log_likelihood
    assert res.neg_loglik <= -log_likelihood(r, p.with_mask(mask)).total + 1e-8
    assert np.allclose(res.theta_hat.alpha, res.theta_hat.alpha_tilde)
    assert np.abs(res.theta_hat.alpha - p.alpha).max() < 0.3


def test_fit_result_roundtrip():
    p = reference("vm")
    r = simulate(SimulationSpec(p, "vm", n_events=300, seed=2))
    res = fit(r, variant_mask(2, "vm"), opts=FitOptions(max_iter=20))
    back = FitResult.from_dict(res.to_dict())
    assert back.to_dict() == res.to_dict()


def test_multi_start_never_worse():
    p = reference("vm")
    r = simulate(SimulationSpec(p, "vm", n_events=800, seed=4))
    one = fit(r, variant_mask(2, "gvm"))
    many = fit(r, variant_mask(2, "gvm"), opts=FitOptions(n_starts=3, seed=1))
    assert many.neg_loglik <= one.neg_loglik + 1e-9


def test_average_params():
    a = KernelParameters(mu=[1.0], alpha=[[0.2]], beta=[1.0], alpha_tilde=[[0.0]])
    b = KernelParameters(mu=[3.0], alpha=[[0.4]], beta=[3.0], alpha_tilde=[[0.2]])
    m = average_params([a, b])
    assert m.mu[0] == 2.0 and m.alpha[0, 0] == pytest.approx(0.3) and m.beta[0] == 2.0


def test_variant_masks():
    assert np.all(variant_mask(2, "hp") == C.EQUAL)
    assert np.all(variant_mask(2, "vm") == C.TILDE_ZERO)
    assert np.all(variant_mask(3, "gvm") == C.FREE)


def _pt(p, null):
    return inf.PairTest((0, 0), 0.0, p, inf.TestKind.STUDENT_T, null)


def test_decide_nature_rules():
    t2, t3 = _pt(0.3, inf.Null.TILDE_ZERO), _pt(0.6, inf.Null.EQUAL)
    assert decide_nature(t2, True, t3, True) is C.FREE
    assert decide_nature(t2, True, t3, False) is C.EQUAL
    assert decide_nature(t2, False, t3, True) is C.TILDE_ZERO
    assert decide_nature(t2, False, t3, False) is C.EQUAL
    assert decide_nature(_pt(0.9, inf.Null.TILDE_ZERO), False, t3, False) is C.TILDE_ZERO


def test_pipeline_rejects_bad_inputs():
    r = Realization([0.5], [0], 1.0, 1)
    with pytest.raises(ValueError):
        run_pipeline([r, r])
    with pytest.raises(ValueError):
        run_pipeline([r, r, r], q=1.5)


@pytest.mark.slow
def test_pipeline_small_scenario_deterministic():
    p = reference("vm")
    reals = simulate_batch(SimulationSpec(p, "vm", n_events=1500, seed=21), 8)
    a = run_pipeline(reals, variant="gvm", threads=1)
    b = run_pipeline(reals, variant="gvm", threads=3)
    assert a.to_dict() == b.to_dict()
    assert sorted(a.fits) == [1, 3, 5]
    assert a.final_mask[0, 1] == C.ZERO
    # the strong self-excitation of neuron 2 must survive Test 1
    assert a.final_mask[1, 1] != C.ZERO
    st = structural_tests(a.fits[1], a.fits[3], variant="gvm")
    assert [t["p_value"] for t in st["test1"]] == [t.p_value for t in a.tests[2]["test1"]]
    assert st["mask"] == a.to_dict()["final_mask"]
    hp = run_pipeline(reals, variant="hp")
    assert sorted(hp.fits) == [1, 3]
    assert all(t.null is inf.Null.ALPHA_ZERO for t in hp.tests[2]["test1"])
