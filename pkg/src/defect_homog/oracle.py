"""Independent references: a P1 Galerkin solve of the weak formulation and
closed-form quadrature solutions for u-independent nonlinearities.

The Galerkin solver shares no code path with the integral-equation maps:
it assembles the stiffness form with the coefficient matrices themselves
(not their inverses), uses nodal (lumped) quadrature for the load terms and
runs a global Newton iteration on a block-tridiagonal sparse system.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import expr as ex
from .errors import MeshTooFine, NoConvergence, NotLinear
from .gridfn import GridFunction
from .model import eval_c, eval_d, jac_c, jac_d

FEM_TOL = 1e-10
FEM_MAXIT = 50
GAUSS_POINTS = 16


@dataclass
class OracleSolution:
    mesh: object
    solution: GridFunction
    newton_residual: float
    iterations: int = 0


def _cell_matrices(inst, mesh, homogenized):
    if homogenized:
        return np.broadcast_to(inst.A0, (mesh.size,) + inst.A0.shape)
    sc = inst.scaled
    return sc.values[sc._cell(mesh.midpoints)]


def weak_residual(inst, u, homogenized=False, lumped=True):
    """Nodal residual of the weak form against the hat functions of ``u.mesh``.

    Entry i is  int (M u' + c) phi_i' + d phi_i  with c, d replaced by the
    interpolant of their one-sided nodal values. ``lumped=True`` integrates
    the d-term with the nodal trapezoid rule (the oracle's discretization);
    ``lumped=False`` integrates it exactly. Boundary rows are zero.
    """
    mesh = u.mesh
    x, h = mesh.nodes, mesh.h
    vals = u.values
    model = inst.model
    M = _cell_matrices(inst, mesh, homogenized)
    slope = np.diff(vals, axis=0) / h[:, None]
    cL = eval_c(model, x[:-1], vals[:-1], side=1)
    cR = eval_c(model, x[1:], vals[1:], side=-1)
    dL = eval_d(model, x[:-1], vals[:-1], side=1)
    dR = eval_d(model, x[1:], vals[1:], side=-1)
    flux = np.einsum("kab,kb->ka", M, slope) + 0.5 * (cL + cR)
    R = np.zeros_like(vals)
    R[1:] += flux
    R[:-1] -= flux
    if lumped:
        R[:-1] += 0.5 * h[:, None] * dL
        R[1:] += 0.5 * h[:, None] * dR
    else:
        R[:-1] += h[:, None] * (dL / 3.0 + dR / 6.0)
        R[1:] += h[:, None] * (dL / 6.0 + dR / 3.0)
    R[0] = 0.0
    R[-1] = 0.0
    return R


def _jacobian(inst, mesh, vals, M):
    x, h = mesh.nodes, mesh.h
    n = vals.shape[1]
    model = inst.model
    PL = jac_c(model, x[:-1], vals[:-1], side=1)
    PR = jac_c(model, x[1:], vals[1:], side=-1)
    QL = jac_d(model, x[:-1], vals[:-1], side=1)
    QR = jac_d(model, x[1:], vals[1:], side=-1)
    K = M / h[:, None, None]
    # derivative of the flux on interval k w.r.t. u_k and u_{k+1}
    dflux_l = -K + 0.5 * PL
    dflux_r = K + 0.5 * PR
    m = x.size
    rows, cols, data = [], [], []

    def put(i, j, blocks):
        ii = (i[:, None, None] * n + np.arange(n)[None, :, None]) * np.ones((1, 1, n), int)
        jj = (j[:, None, None] * n + np.arange(n)[None, None, :]) * np.ones((1, n, 1), int)
        rows.append(ii.ravel())
        cols.append(jj.ravel())
        data.append(np.asarray(blocks).ravel())

    k = np.arange(m - 1)
    # row k+1 gets +flux_k, row k gets -flux_k
    put(k + 1, k, dflux_l)
    put(k + 1, k + 1, dflux_r)
    put(k, k, -dflux_l)
    put(k, k + 1, -dflux_r)
    put(k, k, 0.5 * h[:, None, None] * QL)
    put(k + 1, k + 1, 0.5 * h[:, None, None] * QR)
    J = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * n, m * n),
    ).tocsr()
    inner = np.arange(n, (m - 1) * n)
    return J[inner][:, inner].tocsc()


def solve_fem(inst, s=8, homogenized=False, tol=FEM_TOL, max_iter=FEM_MAXIT, initial=None):
    """P1 Galerkin solution on ``inst.mesh`` refined ``s`` times, by Newton.

    Raises
    ------
    NoConvergence
        If the nodal residual does not fall below ``tol``.
    MeshTooFine
        If the refined mesh exceeds the instance's node cap.
    """
    if (inst.mesh.size * int(s) + 1) > inst.cap:
        raise MeshTooFine(f"oracle mesh with s={s} exceeds the node cap {inst.cap}")
    mesh = inst.mesh.refine(s)
    n = inst.n
    M = _cell_matrices(inst, mesh, homogenized)
    vals = np.zeros((mesh.nodes.size, n)) if initial is None else initial(mesh.nodes).copy()
    vals[0] = vals[-1] = 0.0
    res = np.inf
    for it in range(1, max_iter + 1):
        R = weak_residual(inst, GridFunction(mesh, vals), homogenized)
        res = float(np.max(np.abs(R)))
        if res <= tol:
            return OracleSolution(mesh, GridFunction(mesh, vals), res, it - 1)
        J = _jacobian(inst, mesh, vals, M)
        delta = spla.spsolve(J, -R[1:-1].ravel())
        vals = vals.copy()
        vals[1:-1] += delta.reshape(-1, n)
        if not np.all(np.isfinite(vals)):
            break
    raise NoConvergence(f"FEM Newton stalled at residual {res:.3g}")


def closed_form_linear(inst, homogenized=False, points=GAUSS_POINTS):
    """Quadrature solution for c, d independent of u.

    On every mesh interval (aligned with all coefficient and step breakpoints)
    the inner and outer integrals are evaluated with Gauss-Legendre rules, so
    the result is exact up to quadrature error on smooth pieces.

    Raises
    ------
    NotLinear
        If c or d depends on u.
    """
    model = inst.model
    if any(ex.depends_on_u(e) for e in model.c_components + model.d_components):
        raise NotLinear("closed form needs c and d independent of u")
    mesh = inst.mesh
    x, h = mesh.nodes, mesh.h
    n = model.n
    N = h.size
    t, w = np.polynomial.legendre.leggauss(points)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    if homogenized:
        minv = np.broadcast_to(np.linalg.inv(inst.A0), (N, n, n))
    else:
        minv = inst.minv_eps

    def ev(f, y):
        flat = y.ravel()
        return f(model, flat, np.zeros((flat.size, n))).reshape(y.shape + (n,))

    y = x[:-1, None] + h[:, None] * t[None, :]  # (N, p)
    d_int = np.einsum("q,kqa->ka", w, ev(eval_d, y)) * h[:, None]
    D_nodes = np.zeros((N + 1, n))
    D_nodes[1:] = np.cumsum(d_int, axis=0)
    # inner integrals from x_k to each Gauss point y_kq
    z = x[:-1, None, None] + (y - x[:-1, None])[:, :, None] * t[None, None, :]
    d_part = np.einsum("r,kqra->kqa", w, ev(eval_d, z)) * (y - x[:-1, None])[:, :, None]
    D_at_y = D_nodes[:-1, None, :] + d_part
    g = D_at_y - ev(eval_c, y)
    seg = np.einsum("q,kqa->ka", w, g) * h[:, None]
    raw = np.zeros((N + 1, n))
    raw[1:] = np.cumsum(np.einsum("kab,kb->ka", minv, seg), axis=0)
    wcum = np.zeros((N + 1, n, n))
    wcum[1:] = np.cumsum(h[:, None, None] * minv, axis=0)
    gamma = -np.linalg.solve(wcum[-1], raw[-1])
    u = raw + wcum @ gamma
    u[0] = 0.0
    return GridFunction(mesh, u)


def second_derivative_scale(inst, u, homogenized=False):
    """Cheap proxy for sup |u''| on each coefficient cell.

    Uses u'' = M^-1 (d - dc/dx) with dc/dx taken from one-sided nodal chords
    of c(., u(.)).
    """
    mesh = u.mesh
    x, h = mesh.nodes, mesh.h
    model = inst.model
    M = _cell_matrices(inst, mesh, homogenized)
    minv_norm = np.linalg.norm(np.linalg.inv(M), ord=2, axis=(-2, -1))
    cL = eval_c(model, x[:-1], u.values[:-1], side=1)
    cR = eval_c(model, x[1:], u.values[1:], side=-1)
    dL = eval_d(model, x[:-1], u.values[:-1], side=1)
    dR = eval_d(model, x[1:], u.values[1:], side=-1)
    dmax = np.maximum(np.linalg.norm(dL, axis=1), np.linalg.norm(dR, axis=1))
    cslope = np.linalg.norm(cR - cL, axis=1) / h
    return float(np.max(minv_norm * (dmax + cslope)))
