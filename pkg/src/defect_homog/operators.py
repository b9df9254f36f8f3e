"""The integral-equation maps F_eps, F_0, their derivatives at u0, and alpha.

For a grid function u the discrete map is

    F(u)(x) = int_0^x M(y)^-1 (gamma - c(y, u(y)) + int_0^y d(z, u(z)) dz) dy

where c(., u(.)) and d(., u(.)) are replaced by their piecewise-linear
interpolants (one-sided values at coefficient and step breakpoints) and every
integral of that representation is evaluated exactly. gamma is the weighted
average that makes F(u)(1) = 0:

    gamma = (int_0^1 M^-1)^-1 int_0^1 M^-1(y) (c(y, u(y)) - int_0^y d) dy.

M is A(./eps) + B(./eps) for F_eps and the constant A0 for F_0, in which case
gamma reduces to the plain average.
"""

from dataclasses import dataclass, field
from functools import cached_property
import struct

import numpy as np
import scipy.linalg as sla

from .coeff import (
    DEFAULT_CELL_CAP,
    ScaledCoefficient,
    check_Mr_membership,
    ellipticity,
    homogenized_matrix_A0,
    zero_defect,
)
from .errors import FactorizationFailure, MembershipViolation
from .gridfn import DEFAULT_MESH_CAP, GridFunction, build_mesh, cumtrapz_pairs
from .model import eval_c, eval_d, jac_c, jac_d

PIVOT_RTOL = 1e-13


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Coefficients, nonlinearities, eps and the mesh the problem is discretized on.

    ``eps`` of 0 or None denotes the homogenized problem only; F_eps is then
    unavailable but F_0 and the homogenized solve work on ``mesh``.
    """

    A: object
    B: object
    model: object
    eps: float
    r: float
    mesh: object
    N_target: int = 256
    cap: int = DEFAULT_MESH_CAP
    ellipticity: object = field(default=None, repr=False)

    @cached_property
    def A0(self):
        return homogenized_matrix_A0(self.A)

    @cached_property
    def scaled(self):
        if not self.eps:
            return None
        return ScaledCoefficient(self.A, self.B, self.eps, cap=min(self.cap, DEFAULT_CELL_CAP))

    @cached_property
    def minv_eps(self):
        if self.scaled is None:
            raise ValueError("F_eps needs eps > 0")
        return self.scaled.inverse_at(self.mesh.midpoints)

    @cached_property
    def minv_0(self):
        inv = np.linalg.inv(self.A0)
        return np.broadcast_to(inv, (self.mesh.size,) + inv.shape)

    def minv(self, homogenized):
        return self.minv_0 if homogenized else self.minv_eps

    @property
    def n(self):
        return self.model.n

    def with_eps(self, eps, B=None, N_target=None):
        return make_instance(
            self.A,
            self.B if B is None else B,
            self.model,
            eps,
            r=self.r,
            N_target=self.N_target if N_target is None else N_target,
            cap=self.cap,
        )

    def with_mesh(self, mesh):
        return ProblemInstance(
            self.A, self.B, self.model, self.eps, self.r, mesh,
            self.N_target, self.cap, self.ellipticity,
        )


def make_instance(A, B, model, eps, r=2.0, N_target=256, cap=DEFAULT_MESH_CAP, check=True):
    """Validate the coefficient data and discretize on an aligned mesh.

    Raises
    ------
    NonElliptic
        If A or A + B is not uniformly positive definite.
    MembershipViolation
        If ``check`` and B is outside the admissible class for ``r``.
    MeshTooFine
        If eps is too small for the node cap.
    """
    if B is None:
        B = zero_defect(A.n)
    if A.n != model.n or B.n != model.n:
        raise ValueError("coefficient and model dimensions differ")
    rep = ellipticity(A, B)
    if check:
        mem = check_Mr_membership(A, B, r)
        if not mem.member:
            raise MembershipViolation(mem.violated)
    sc = ScaledCoefficient(A, B, eps, cap=min(cap, DEFAULT_CELL_CAP)) if eps else None
    mesh = build_mesh(sc if sc is not None else None, A, B, N_target,
                      model.x_breakpoints, cap)
    inst = ProblemInstance(A, B, model, eps, r, mesh, N_target, cap, rep)
    if sc is not None:
        inst.__dict__["scaled"] = sc
    return inst


# -- nodal evaluation of the nonlinearities ----------------------------------

def _one_sided(f, model, x, u):
    """Per-interval left-end (right limit) and right-end (left limit) values."""
    plus = f(model, x[:-1], u[:-1], side=1)
    minus = f(model, x[1:], u[1:], side=-1)
    return plus, minus


def _values(u):
    return u.values if isinstance(u, GridFunction) else np.asarray(u, dtype=float)


def _integral_map(h, minv, cL, cR, dL, dR):
    """Core map on per-interval data of shape (N, n, ...). Returns (F, gamma)."""
    tail = (1,) * (cL.ndim - 2)
    hh = h.reshape((-1, 1) + tail)
    D = cumtrapz_pairs(h, dL, dR)
    avg = 0.5 * (D[:-1] + D[1:]) - 0.5 * (cL + cR) - (hh / 12.0) * (dR - dL)
    incr = hh * np.einsum("kab,kb...->ka...", minv, avg)
    raw = np.zeros((h.size + 1,) + avg.shape[1:])
    np.cumsum(incr, axis=0, out=raw[1:])
    wcum = np.zeros((h.size + 1,) + minv.shape[1:])
    np.cumsum(h[:, None, None] * minv, axis=0, out=wcum[1:])
    gamma = -np.linalg.solve(wcum[-1], raw[-1])
    F = raw + np.einsum("kab,b...->ka...", wcum, gamma)
    F[0] = 0.0
    return F, gamma


def _apply(inst, u, homogenized):
    vals = _values(u)
    x = inst.mesh.nodes
    cL, cR = _one_sided(eval_c, inst.model, x, vals)
    dL, dR = _one_sided(eval_d, inst.model, x, vals)
    return _integral_map(inst.mesh.h, inst.minv(homogenized), cL, cR, dL, dR)


def gamma_eps(inst, u):
    """Constant of integration that makes F_eps(u) vanish at x = 1."""
    return _apply(inst, u, False)[1]


def gamma_0(inst, u):
    return _apply(inst, u, True)[1]


def apply_F_eps(inst, u):
    F, _ = _apply(inst, u, False)
    return GridFunction(inst.mesh, F)


def apply_F0(inst, u):
    F, _ = _apply(inst, u, True)
    return GridFunction(inst.mesh, F)


def apply_F(inst, u, homogenized):
    return apply_F0(inst, u) if homogenized else apply_F_eps(inst, u)


# -- linearization -----------------------------------------------------------

def _jacobians(inst, u0):
    vals = _values(u0)
    x = inst.mesh.nodes
    PL, PR = _one_sided(jac_c, inst.model, x, vals)
    QL, QR = _one_sided(jac_d, inst.model, x, vals)
    return PL, PR, QL, QR


def apply_Fprime(inst, u0, V, homogenized=False):
    """F'(u0) applied to a batch ``V`` of shape (N+1, n, K) (or a grid function)."""
    single = isinstance(V, GridFunction) or np.ndim(V) == 2
    Vb = _values(V)
    if single:
        Vb = Vb[:, :, None]
    PL, PR, QL, QR = _jacobians(inst, u0)
    mv = lambda P, W: np.einsum("kab,kb...->ka...", P, W)  # noqa: E731
    cL, cR = mv(PL, Vb[:-1]), mv(PR, Vb[1:])
    dL, dR = mv(QL, Vb[:-1]), mv(QR, Vb[1:])
    F, _ = _integral_map(inst.mesh.h, inst.minv(homogenized), cL, cR, dL, dR)
    if single:
        return GridFunction(inst.mesh, F[:, :, 0])
    return F


def apply_Fprime_loop(inst, u0, v, homogenized=False):
    """Interval-by-interval evaluation of F'(u0) v.

    Written independently of the vectorized path as a cross-check: it runs
    the two nested integrals as explicit recurrences and fixes the constant
    from the linear condition w(1) = 0 afterwards.
    """
    vals = _values(u0)
    vv = _values(v)
    x = inst.mesh.nodes
    h = inst.mesh.h
    n = inst.n
    minv = inst.minv(homogenized)
    model = inst.model
    N = h.size
    inner = np.zeros(n)
    w_raw = np.zeros((N + 1, n))
    w_lin = np.zeros((N + 1, n, n))
    for k in range(N):
        a, b = x[k], x[k + 1]
        P_a = jac_c(model, a, vals[k], side=1)
        P_b = jac_c(model, b, vals[k + 1], side=-1)
        Q_a = jac_d(model, a, vals[k], side=1)
        Q_b = jac_d(model, b, vals[k + 1], side=-1)
        ca, cb = P_a @ vv[k], P_b @ vv[k + 1]
        da, db = Q_a @ vv[k], Q_b @ vv[k + 1]
        hk = h[k]
        # int over [a, b] of (inner + int_a^y d) dy with d linear
        d_int = hk * hk * (da / 3.0 + db / 6.0)
        seg = inner * hk + d_int - 0.5 * hk * (ca + cb)
        w_raw[k + 1] = w_raw[k] + minv[k] @ seg
        w_lin[k + 1] = w_lin[k] + hk * minv[k]
        inner = inner + 0.5 * hk * (da + db)
    g = np.linalg.solve(w_lin[N], -w_raw[N])
    w = w_raw + w_lin @ g
    w[0] = 0.0
    return GridFunction(inst.mesh, w)


@dataclass(frozen=True, eq=False)
class AssembledOperator:
    """Dense nodal matrix of F'(u0), LU factors of I - F'(u0), and alpha.

    Row/column index ``i*n + a`` is component ``a`` at node ``i``.
    """

    matrix: np.ndarray
    n: int
    N: int
    lu: tuple = field(repr=False, default=None)
    alpha: float = None

    def solve(self, rhs):
        shape = np.shape(rhs)
        out = sla.lu_solve(self.lu, np.reshape(rhs, (self.matrix.shape[0], -1)))
        return out.reshape(shape)

    @property
    def system_matrix(self):
        return np.eye(self.matrix.shape[0]) - self.matrix

    def apply(self, v):
        vals = _values(v)
        return (self.matrix @ vals.reshape(-1)).reshape(vals.shape)

    def dump(self, path):
        """Write header (n, N as int64) then the row-major float64 matrix."""
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qq", self.n, self.N))
            fh.write(np.ascontiguousarray(self.matrix, dtype="<f8").tobytes())


def load_operator_matrix(path):
    with open(path, "rb") as fh:
        n, N = struct.unpack("<qq", fh.read(16))
        size = n * (N + 1)
        mat = np.frombuffer(fh.read(), dtype="<f8").reshape(size, size)
    return n, N, mat


def smallest_singular_value(mat):
    return float(sla.svdvals(mat, check_finite=False)[-1])


def factorize(system):
    lu, piv = sla.lu_factor(system, check_finite=False)
    diag = np.abs(np.diag(lu))
    if not np.all(np.isfinite(diag)) or diag.min() <= PIVOT_RTOL * max(diag.max(), 1e-300):
        raise FactorizationFailure("I - F'(u0) is numerically singular")
    return lu, piv


def assemble_Fprime(inst, u0, homogenized=False, compute_alpha=True):
    """Assemble F'(u0) column by column on the nodal basis and factor I - F'(u0).

    Raises
    ------
    FactorizationFailure
        If I - F'(u0) is numerically singular.
    """
    m = inst.mesh.nodes.size
    n = inst.n
    size = m * n
    basis = np.eye(size).reshape(m, n, size)
    mat = apply_Fprime(inst, u0, basis, homogenized).reshape(size, size)
    system = np.eye(size) - mat
    lu = factorize(system)
    alpha = smallest_singular_value(system) if compute_alpha else None
    return AssembledOperator(mat, n, inst.mesh.size, lu, alpha)


def alpha_estimate(op):
    """Smallest singular value of I - F'(u0) in the Euclidean nodal norm."""
    if op.alpha is None:
        return smallest_singular_value(op.system_matrix)
    return op.alpha
