import numpy as np
import pytest

from defect_homog.coeff import constant_field, periodic_field
from defect_homog.errors import MeshTooFine, NotLinear
from defect_homog.gridfn import GridFunction
from defect_homog.model import make_model
from defect_homog.operators import make_instance
from defect_homog.oracle import (
    closed_form_linear,
    second_derivative_scale,
    solve_fem,
    weak_residual,
)
from defect_homog.solver import solve_eps, solve_homogenized

from conftest import instance_from

TWO_PHASE = periodic_field([0, 0.5, 1], [2.0, 1.0])
ONE = constant_field([[1.0]])


def _inst(c, d, eps=0.5, A=TWO_PHASE, N=16):
    return make_instance(A, None, make_model(c, d), eps, r=3.0, N_target=N)


def test_trivial_instances():
    inst = _inst(["0"], ["0"])
    assert not np.any(solve_fem(inst).solution.values)
    assert not np.any(closed_form_linear(inst).values)


def test_closed_form_examples():
    inst = _inst(["0"], ["1"], A=ONE)
    x = inst.mesh.nodes
    u = closed_form_linear(inst).values[:, 0]
    assert np.max(np.abs(u - x * (x - 1) / 2)) <= 1e-15
    assert abs(u[-1]) <= 1e-13
    # two-phase, eps = 0.5, d = 1: piecewise quadratic, reproduced by the Galerkin oracle
    inst = _inst(["0"], ["1"])
    fem = solve_fem(inst, 8)
    assert np.max(np.abs(fem.solution.values[::8] - closed_form_linear(inst).values)) <= 1e-13
    with pytest.raises(NotLinear):
        closed_form_linear(_inst(["0"], ["u1"]))


def test_fem_sinh_solution_second_order():
    consts = []
    for N in (16, 32, 64):
        inst = _inst(["0"], ["u1 - 1"], A=ONE, N=N)
        fem = solve_fem(inst, 2)
        x = fem.mesh.nodes
        exact = 1 - (np.sinh(x) + np.sinh(1 - x)) / np.sinh(1)
        consts.append(np.max(np.abs(fem.solution.values[:, 0] - exact)) / fem.mesh.h.max() ** 2)
    assert max(consts) / min(consts) < 1.1


@pytest.mark.parametrize("eps", [2.0**-3, 2.0**-5, 2.0**-8])
def test_fem_agrees_with_closed_form(eps):
    # the lumped load is second order, so the oracle mesh is refined 64 times
    inst = instance_from("linear", eps, N_target=256)
    fem = solve_fem(inst, 64)
    assert np.max(np.abs(fem.solution.values[::64] - closed_form_linear(inst).values)) <= 1e-9


def test_fem_residual_and_boundary():
    inst = instance_from("system2d", 2.0**-4, N_target=64)
    fem = solve_fem(inst, 4)
    assert fem.newton_residual <= 1e-10
    assert not np.any(fem.solution.values[[0, -1]])
    assert np.max(np.abs(weak_residual(inst, fem.solution))) <= 1e-10
    # oracle mesh shares every solver node
    fem.mesh.node_index(inst.mesh.nodes)


def test_fem_cap():
    inst = make_instance(TWO_PHASE, None, make_model(["0"], ["1"]), 0.5, N_target=64, cap=200)
    with pytest.raises(MeshTooFine):
        solve_fem(inst, 8)


@pytest.mark.parametrize("name", ["linear", "cubic", "system2d"])
def test_solver_matches_oracle_second_order(name):
    inst = instance_from(name, 2.0**-5, N_target=64)
    diffs = []
    for s in (2, 4):
        fine = inst.with_mesh(inst.mesh.refine(s))
        u0, _ = solve_homogenized(fine)
        sol = solve_eps(fine, u0).solution
        fem = solve_fem(inst, s).solution
        d = np.max(np.abs(sol.values - fem.values))
        h = fine.mesh.h.max()
        assert d <= 5 * h * h * second_derivative_scale(fine, sol)
        diffs.append(d)
    assert diffs[0] / diffs[1] == pytest.approx(4.0, rel=0.05)


def test_weak_residual_consistent_load_is_exact_for_solver():
    inst = instance_from("cubic", 2.0**-4, N_target=64)
    u0, _ = solve_homogenized(inst)
    u = solve_eps(inst, u0).solution
    assert np.max(np.abs(weak_residual(inst, u, lumped=False))) <= 1e-10
    assert np.max(np.abs(weak_residual(inst, GridFunction.zeros(inst.mesh, 1)))) > 1e-3
