import numpy as np
import pytest

from defect_homog import harness
from defect_homog.coeff import constant_field, defect_field, periodic_field, zero_defect
from defect_homog.errors import InsufficientPoints, MembershipViolation
from defect_homog.gridfn import GridFunction, uniform_mesh
from defect_homog.model import make_model
from defect_homog.operators import make_instance

from conftest import instance_from

EPS = [2.0**-k for k in range(3, 9)]
TWO_PHASE = periodic_field([0, 0.5, 1], [2.0, 1.0])


def test_rate_study_linear_slope():
    inst = instance_from("linear", EPS[0])
    table = harness.rate_study(inst, EPS)
    assert [r.eps for r in table.rows] == EPS
    assert all(r.converged and r.bound_ok for r in table.rows)
    assert 0.9 <= table.fitted_slope <= 1.1


def test_rate_study_floor_skips_fit():
    inst = make_instance(TWO_PHASE, None, make_model(["0"], ["0"]), EPS[0], r=3.0)
    table = harness.rate_study(inst, EPS)
    assert table.fitted_slope is None
    assert all(r.sup_error == 0.0 for r in table.rows)


def test_rate_study_needs_points():
    inst = instance_from("linear", EPS[0])
    with pytest.raises(InsufficientPoints):
        harness.rate_study(inst, [0.1])
    with pytest.raises(InsufficientPoints):
        harness.rate_study(inst, [0.1, 0.1, 0.05, 0.05, 0.02])


def test_rate_study_marks_failed_rows():
    inst = instance_from("stiff", 0.5)
    table = harness.rate_study(inst, [0.5, 0.02, 0.01, 0.005])
    assert not table.rows[0].converged and "NoConvergence" in table.rows[0].error
    assert all(r.converged for r in table.rows[1:])
    assert table.fitted_slope is not None


def test_defect_sweep_membership_and_reduction():
    inst = instance_from("linear", EPS[0])
    bad = defect_field([0, 1], [-1.5])
    with pytest.raises(MembershipViolation, match="'hole'"):
        harness.defect_sweep(inst, EPS[:4], [("zero", zero_defect(1)), ("hole", bad)])
    sweep = harness.defect_sweep(inst, EPS[:4], [("zero", zero_defect(1))])
    single = harness.rate_study(inst, EPS[:4], zero_defect(1), "zero")
    assert sweep.tables[0].to_dict() == single.to_dict()
    assert sweep.spread == [1.0] * 4


def test_averaging_exact_cancellation():
    A = periodic_field([0, 0.3, 1], [[2.0, 0.5, 0.3, 1.0], [1.0, 0.0, 0.0, 3.0]])
    u = GridFunction(uniform_mesh(8), np.tile([1.0, -2.0], (9, 1)))
    tab = harness.averaging_check(A, zero_defect(2), [1 / 3, 1 / 7, 1 / 10, 1 / 64], u)
    assert max(r.full_interval for r in tab.rows) <= 1e-13


def test_averaging_linear_u():
    u = GridFunction.from_function(uniform_mesh(64), lambda x: x)
    tab = harness.averaging_check(TWO_PHASE, zero_defect(1), [2.0**-k for k in range(3, 10)], u)
    assert 0.9 <= tab.slope <= 1.1
    assert tab.scaled_spread < 2.0
    assert tab.gamma_hat == max(r.scaled for r in tab.rows)


def test_averaging_defect_still_first_order():
    u = GridFunction.from_function(uniform_mesh(8), lambda x: np.ones_like(x))
    eps = [2.0**-k for k in range(3, 10)]
    tab = harness.averaging_check(constant_field([[1.0]]), defect_field([0, 1], [-0.5]), eps, u)
    vals = [r.sup_value for r in tab.rows]
    assert min(vals) > 0
    assert 0.9 <= tab.slope <= 1.1
    # corner (0, eps) captures the whole defect: eps * (1/(1-0.5) - 1) = eps
    assert np.allclose(vals, eps, rtol=1e-12)


def test_averaging_is_seeded():
    u = GridFunction.from_function(uniform_mesh(16), lambda x: np.sin(3 * x))
    a = harness.averaging_check(TWO_PHASE, zero_defect(1), [0.1, 0.05], u, seed=5)
    b = harness.averaging_check(TWO_PHASE, zero_defect(1), [0.1, 0.05], u, seed=5)
    assert a.to_dict() == b.to_dict() and a.seed == 5


def test_operator_demo_trivial():
    inst = make_instance(TWO_PHASE, None, make_model(["0"], ["0"]), 0.1, r=3.0, N_target=32)
    tab = harness.operator_convergence_demo(inst, [0.25, 0.125], per_period=4)
    for r in tab.rows:
        assert r.opnorm_inf == 0 and r.opnorm_2 == 0 and not any(r.vector_norms)


def test_operator_demo_strong_not_uniform():
    inst = instance_from("cubic", 0.125)
    tab = harness.operator_convergence_demo(inst, [2.0**-k for k in range(3, 8)], 5, seed=1)
    assert all(tab.monotone())
    slopes = tab.vector_slopes()
    assert min(slopes) > 0.5
    # the operator norm decays clearly slower than any fixed vector
    assert tab.opnorm_slope("opnorm_inf") < 0.5 * min(slopes)


def test_threads_do_not_change_results(monkeypatch):
    inst = instance_from("cubic", EPS[0], N_target=64)
    serial = harness.rate_study(inst, EPS[:4]).to_dict()
    monkeypatch.setenv("DEFECT_HOMOG_THREADS", "3")
    assert harness.thread_count() == 3
    assert harness.rate_study(inst, EPS[:4]).to_dict() == serial


def test_oracle_compare_rows():
    inst = instance_from("cubic", 2.0**-5, N_target=64)
    comp = harness.oracle_compare(inst, (2, 4))
    assert all(r.within for r in comp.rows)
    assert comp.rows[1].ratio_to_previous == pytest.approx(4.0, rel=0.05)
