import numpy as np
import pytest
from hypothesis import given, strategies as st

from defect_homog.coeff import constant_field, defect_field, periodic_field, zero_defect
from defect_homog.errors import MembershipViolation, NonElliptic
from defect_homog.gridfn import GridFunction
from defect_homog.model import make_model
from defect_homog.operators import (
    apply_F0,
    apply_F_eps,
    apply_Fprime,
    apply_Fprime_loop,
    assemble_Fprime,
    gamma_0,
    gamma_eps,
    load_operator_matrix,
    make_instance,
)
from defect_homog.oracle import closed_form_linear

from conftest import instance_from

TWO_PHASE = periodic_field([0, 0.5, 1], [2.0, 1.0])
A2 = periodic_field([0, 0.3, 1], [[2.0, 0.5, 0.3, 1.0], [1.0, 0.0, 0.0, 3.0]])
B2 = defect_field([0, 1], [[-0.3, 0.0, 0.0, -0.3]])


def _inst(A, c, d, eps, B=None, N=64, r=4.0, **kw):
    return make_instance(A, B, make_model(c, d, **kw), eps, r=r, N_target=N)


def test_instance_validation():
    with pytest.raises(NonElliptic):
        _inst(constant_field([[1.0]]), ["0"], ["0"], 0.1, B=defect_field([0, 1], [-1.0]))
    with pytest.raises(MembershipViolation):
        _inst(constant_field([[1.0]]), ["0"], ["0"], 0.1, B=defect_field([0, 1], [-0.5]), r=1.5)


def test_gamma_examples():
    inst = _inst(A2, ["0", "0"], ["0", "0"], 0.07, B=B2)
    u = GridFunction.zeros(inst.mesh, 2)
    assert not np.any(gamma_eps(inst, u)) and not np.any(gamma_0(inst, u))

    inst = _inst(A2, ["1.5", "-0.25"], ["0", "0"], 0.07, B=B2)
    u = GridFunction.zeros(inst.mesh, 2)
    assert np.allclose(gamma_eps(inst, u), [1.5, -0.25], atol=1e-14)
    assert np.allclose(gamma_0(inst, u), [1.5, -0.25], atol=1e-14)

    inst = _inst(constant_field(np.eye(2)), ["0", "0"], ["3", "-1"], 0.1)
    u = GridFunction.zeros(inst.mesh, 2)
    assert np.allclose(gamma_eps(inst, u), [-1.5, 0.5], atol=1e-14)
    inst = _inst(A2, ["0", "0"], ["3", "-1"], 0.1, B=B2)
    u = GridFunction.zeros(inst.mesh, 2)
    assert np.allclose(gamma_0(inst, u), [-1.5, 0.5], atol=1e-14)


def test_apply_F_examples():
    inst = _inst(TWO_PHASE, ["0"], ["0"], 0.1)
    u = GridFunction.zeros(inst.mesh, 1)
    assert not np.any(apply_F_eps(inst, u).values)
    assert not np.any(apply_F0(inst, u).values)

    d0 = 2.5
    inst = _inst(constant_field([[1.0]]), ["0"], [repr(d0)], 0.1)
    x = inst.mesh.nodes
    u = GridFunction.zeros(inst.mesh, 1)
    assert np.allclose(apply_F_eps(inst, u).values[:, 0], d0 * x * (x - 1) / 2, atol=1e-14)

    inst = _inst(TWO_PHASE, ["0"], [repr(d0)], 0.1)
    x = inst.mesh.nodes
    u = GridFunction.zeros(inst.mesh, 1)
    expected = d0 * x * (x - 1) / (2 * inst.A0[0, 0])
    assert np.allclose(apply_F0(inst, u).values[:, 0], expected, atol=1e-14)
    # F0 is constant in u here: one application is already the fixed point
    rand = GridFunction(inst.mesh, np.random.default_rng(0).normal(size=(x.size, 1)))
    v = apply_F0(inst, rand)
    assert np.allclose(apply_F0(inst, v).values, v.values, atol=1e-15)


def test_F_matches_closed_form_for_x_affine_data():
    # interpolation of an x-affine d is exact, so F(u) is the exact solution
    inst = _inst(TWO_PHASE, ["0.5 - x"], ["2*x + 1 + 3*step(x - 0.37)"], 0.13,
                 B=defect_field([0, 1], [-0.5]), x_breakpoints=[0.37])
    u = GridFunction.zeros(inst.mesh, 1)
    ref = closed_form_linear(inst)
    assert np.max(np.abs(apply_F_eps(inst, u).values - ref.values)) <= 1e-13


def test_F_matches_closed_form_second_order():
    errs = []
    for N in (64, 128, 256):
        inst = _inst(TWO_PHASE, ["0"], ["sin(3*x) + x"], 2.0**-5, N=N)
        u = GridFunction.zeros(inst.mesh, 1)
        errs.append(np.max(np.abs(apply_F_eps(inst, u).values - closed_form_linear(inst).values)))
    assert errs[-1] <= 1e-5
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def _random_u(inst, rng, scale=1.0):
    x = inst.mesh.nodes
    k = rng.normal(size=(4, inst.n))
    vals = sum(np.outer(np.sin((j + 1) * np.pi * x), k[j]) for j in range(4)) * scale
    return GridFunction(inst.mesh, vals + rng.normal(size=vals.shape) * 0.05)


@given(st.integers(0, 2**31), st.floats(0.02, 0.9), st.sampled_from(["cubic", "system2d"]))
def test_boundary_invariant(seed, eps, name):
    inst = instance_from(name, eps, N_target=32)
    F = apply_F_eps(inst, _random_u(inst, np.random.default_rng(seed)))
    assert not np.any(F.values[0])
    assert np.max(np.abs(F.values[-1])) <= 1e-12


def test_fprime_trivial():
    inst = _inst(TWO_PHASE, ["0"], ["0"], 0.1)
    op = assemble_Fprime(inst, GridFunction.zeros(inst.mesh, 1))
    assert not np.any(op.matrix)
    assert op.alpha == pytest.approx(1.0, abs=1e-14)


def test_fprime_against_integral_formula():
    # A = 1, c = 0, d = u: F'(u0)v(x) = int_0^x (g + int_0^y v) dy with g fixing w(1) = 0
    inst = _inst(constant_field([[1.0]]), ["0"], ["u1"], 0.5, N=2048)
    x = inst.mesh.nodes
    v = GridFunction.from_function(inst.mesh, lambda t: t * (1 - t))
    op = assemble_Fprime(inst, GridFunction.zeros(inst.mesh, 1), compute_alpha=False)
    w = op.apply(v)[:, 0]
    exact = x**3 / 6 - x**4 / 12 - x / 12
    assert np.max(np.abs(w - exact)) <= 1e-8


@pytest.mark.parametrize("name, eps", [("cubic", 2.0**-4), ("system2d", 2.0**-3),
                                       ("linear", 2.0**-5)])
def test_fprime_finite_differences(name, eps):
    inst = instance_from(name, eps, N_target=64)
    rng = np.random.default_rng(3)
    u0 = _random_u(inst, rng, 0.5)
    op = assemble_Fprime(inst, u0, compute_alpha=False)
    h = 1e-5
    for _ in range(5):
        v = _random_u(inst, rng)
        fd = (apply_F_eps(inst, u0 + v * h).values - apply_F_eps(inst, u0 + v * -h).values) / (2 * h)
        mv = op.apply(v)
        assert np.max(np.abs(fd - mv)) <= 1e-6 * max(1.0, np.max(np.abs(mv)))


@given(st.integers(0, 2**31), st.booleans())
def test_matrix_vs_loop_path(seed, homogenized):
    inst = instance_from("system2d", 0.11, N_target=24)
    rng = np.random.default_rng(seed)
    u0 = _random_u(inst, rng)
    v = _random_u(inst, rng)
    op = assemble_Fprime(inst, u0, homogenized=homogenized, compute_alpha=False)
    loop = apply_Fprime_loop(inst, u0, v, homogenized=homogenized).values
    assert np.max(np.abs(op.apply(v) - loop)) <= 1e-10
    batch = apply_Fprime(inst, u0, v, homogenized=homogenized).values
    assert np.max(np.abs(batch - loop)) <= 1e-10


def test_factorization_solves_accurately():
    inst = instance_from("system2d", 0.1, N_target=64)
    rng = np.random.default_rng(0)
    op = assemble_Fprime(inst, _random_u(inst, rng))
    r = rng.normal(size=op.matrix.shape[0])
    w = op.solve(r)
    assert np.linalg.norm(op.system_matrix @ w - r) <= 1e-10 * np.linalg.norm(r)
    assert op.alpha > 0


def test_dump_roundtrip(tmp_path):
    inst = instance_from("system2d", 0.25, N_target=8)
    op = assemble_Fprime(inst, GridFunction.zeros(inst.mesh, 2), compute_alpha=False)
    path = tmp_path / "fprime.bin"
    op.dump(path)
    n, N, mat = load_operator_matrix(path)
    assert (n, N) == (2, inst.mesh.size)
    assert np.array_equal(mat, op.matrix)
    assert path.stat().st_size == 16 + 8 * mat.size


def _alpha(d, N):
    inst = _inst(constant_field([[1.0]]), ["0"], [d], None, N=N)
    return assemble_Fprime(inst, GridFunction.zeros(inst.mesh, 1), homogenized=True).alpha


def test_alpha_degenerate_and_stable():
    a = [_alpha("-pi^2*u1", N) for N in (256, 512)]
    assert a[0] <= 1e-2 and a[1] < a[0]
    b = [_alpha("u1", N) for N in (64, 128, 256)]
    assert min(b) >= 0.5
