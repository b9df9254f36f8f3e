"""Piecewise-constant matrix coefficients A(y), B(y) and their averages.

A periodic field covers exactly one period [0, 1); a defect field is
supported on a bounded interval and is the zero matrix outside it.
Because every field is piecewise constant, all integrals of A^-1 or
(A + B)^-1 are computed exactly by summing over cells.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

from .errors import MeshTooFine, NonElliptic, SingularCell

MERGE_TOL = 1e-14
SINGULAR_RCOND = 1e-14
DEFAULT_CELL_CAP = 200_000


def _sym_min_eig(mats):
    sym = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return np.linalg.eigvalsh(sym)[..., 0]


def _spectral_norm(mats):
    if mats.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(mats, ord=2, axis=(-2, -1))


def _checked_inverse(mats):
    sv = np.linalg.svd(mats, compute_uv=False)
    bad = sv[..., -1] <= SINGULAR_RCOND * np.maximum(sv[..., 0], 1e-300)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularCell(f"cell {k} matrix is numerically singular")
    return np.linalg.inv(mats)


def merge_points(points, tol=MERGE_TOL):
    """Sort and drop points closer than ``tol`` to their predecessor."""
    pts = np.sort(np.asarray(points, dtype=float))
    if pts.size == 0:
        return pts
    keep = np.concatenate(([True], np.diff(pts) > tol))
    return pts[keep]


@dataclass(frozen=True, eq=False)
class PiecewiseMatrixField:
    """Matrix field constant on the cells between consecutive breakpoints.

    Parameters
    ----------
    breakpoints : array_like, shape (K+1,)
        Strictly increasing cell edges.
    values : array_like, shape (K, n, n)
        One matrix per cell.
    periodic : bool
        If true the field is 1-periodic and ``breakpoints`` must span [0, 1].
        Otherwise the field vanishes outside [breakpoints[0], breakpoints[-1]].
    """

    breakpoints: np.ndarray
    values: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float)
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals.reshape(-1, 1, 1)
        elif vals.ndim == 2:
            n = int(round(math.sqrt(vals.shape[1])))
            if n * n != vals.shape[1]:
                raise ValueError("row-major cell values must have n*n entries")
            vals = vals.reshape(-1, n, n)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("need at least two breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if vals.shape[0] != bp.size - 1 or vals.shape[1] != vals.shape[2]:
            raise ValueError(
                f"expected {bp.size - 1} square cell matrices, got shape {vals.shape}"
            )
        if not (np.all(np.isfinite(bp)) and np.all(np.isfinite(vals))):
            raise ValueError("breakpoints and values must be finite")
        if self.periodic and (bp[0] != 0.0 or bp[-1] != 1.0):
            raise ValueError("periodic fields must cover exactly [0, 1)")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def period(self):
        return 1.0 if self.periodic else None

    @property
    def support(self):
        if self.periodic:
            return None
        return (float(self.breakpoints[0]), float(self.breakpoints[-1]))

    @property
    def cell_lengths(self):
        return np.diff(self.breakpoints)

    @cached_property
    def is_zero(self):
        return not np.any(self.values)

    def split_cells(self):
        """Same field with every cell cut in half (used as an exactness witness)."""
        bp = self.breakpoints
        mids = 0.5 * (bp[:-1] + bp[1:])
        new_bp = np.empty(2 * bp.size - 1)
        new_bp[0::2] = bp
        new_bp[1::2] = mids
        new_vals = np.repeat(self.values, 2, axis=0)
        return PiecewiseMatrixField(new_bp, new_vals, self.periodic)


def periodic_field(breakpoints, values):
    return PiecewiseMatrixField(breakpoints, values, periodic=True)


def defect_field(breakpoints, values):
    return PiecewiseMatrixField(breakpoints, values, periodic=False)


def zero_defect(n):
    return PiecewiseMatrixField([0.0, 1.0], np.zeros((1, n, n)), periodic=False)


def constant_field(matrix):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    return periodic_field([0.0, 1.0], m[None])


def eval_field(F, y):
    """Evaluate ``F`` at the points ``y``.

    At a breakpoint the right-limit cell value is returned. Accepts a scalar
    (returns an (n, n) matrix) or an array (returns shape ``y.shape + (n, n)``).
    """
    y_arr = np.asarray(y, dtype=float)
    flat = y_arr.reshape(-1)
    bp = F.breakpoints
    if F.periodic:
        t = np.mod(flat, 1.0)
        idx = np.searchsorted(bp, t, side="right") - 1
        idx = np.clip(idx, 0, len(F.values) - 1)
        out = F.values[idx]
    else:
        idx = np.searchsorted(bp, flat, side="right") - 1
        inside = (flat >= bp[0]) & (flat < bp[-1])
        idx = np.clip(idx, 0, len(F.values) - 1)
        out = np.where(inside[:, None, None], F.values[idx], 0.0)
    return out.reshape(y_arr.shape + (F.n, F.n))


def _support_partition(A, B):
    """Cells of A + B inside the support of B, as (edges, values)."""
    lo, hi = B.support
    j0, j1 = math.floor(lo), math.ceil(hi)
    per = (np.arange(j0, j1 + 1)[:, None] + A.breakpoints[None, :]).ravel()
    per = per[(per > lo) & (per < hi)]
    edges = merge_points(np.concatenate((B.breakpoints, per)))
    mids = 0.5 * (edges[:-1] + edges[1:])
    return edges, eval_field(A, mids) + eval_field(B, mids)


@dataclass(frozen=True)
class EllipticityReport:
    m_A: float
    m_AB: float
    sup_inv_A: float
    sup_inv_AB: float
    norm_B_inf: float
    norm_B_1: float

    @property
    def valid(self):
        return self.m_A > 0 and self.m_AB > 0


def ellipticity_report(A, B):
    """Same as :func:`ellipticity` but never raises."""
    m_A = float(np.min(_sym_min_eig(A.values)))
    edges, vals = _support_partition(A, B)
    m_AB = min(m_A, float(np.min(_sym_min_eig(vals))))
    inf = math.inf

    def sup_inv(mats):
        sv = np.linalg.svd(mats, compute_uv=False)[..., -1]
        return inf if np.any(sv <= 0) else float(np.max(1.0 / sv))

    sup_inv_A = sup_inv(A.values) if m_A > 0 else inf
    sup_inv_AB = max(sup_inv_A, sup_inv(vals)) if m_AB > 0 else inf
    norms = _spectral_norm(B.values)
    return EllipticityReport(
        m_A=m_A,
        m_AB=m_AB,
        sup_inv_A=sup_inv_A,
        sup_inv_AB=sup_inv_AB,
        norm_B_inf=float(np.max(norms)),
        norm_B_1=float(np.sum(B.cell_lengths * norms)),
    )


def ellipticity(A, B):
    """Quadratic-form lower bounds and defect norms, exact for piecewise-constant input.

    Raises
    ------
    NonElliptic
        If the symmetric part of A or of A + B fails to be positive definite
        on some cell.
    """
    rep = ellipticity_report(A, B)
    if rep.m_A <= 0:
        raise NonElliptic(f"A is not uniformly positive definite (m_A={rep.m_A:.3g})")
    if rep.m_AB <= 0:
        raise NonElliptic(f"A+B is not uniformly positive definite (m_AB={rep.m_AB:.3g})")
    return rep


@dataclass(frozen=True)
class MembershipReport:
    member: bool
    r: float
    norm_sum: float
    form_floor: float
    violated: str = None
    # The literal first-power bound (A+B)u.u >= |u|/r fails for every small u
    # whenever the quadratic form is bounded, so it is recorded, not enforced.
    literal_first_power_bound_holds: bool = False


def check_Mr_membership(A, B, r):
    """Test whether B belongs to the admissible defect class for parameter r.

    Uses the quadratic bound (A+B)u.u >= |u|^2 / r on every cell together with
    |B|_inf + |B|_1 <= r.
    """
    if not r > 1:
        raise ValueError("r must exceed 1")
    rep = ellipticity_report(A, B)
    norm_sum = rep.norm_B_inf + rep.norm_B_1
    violated = None
    if norm_sum > r * (1 + 1e-14):
        violated = f"norm bound: |B|_inf + |B|_1 = {norm_sum:.6g} > r = {r:.6g}"
    elif rep.m_AB < (1.0 / r) * (1 - 1e-14):
        violated = f"form bound: min (A+B)u.u = {rep.m_AB:.6g} < 1/r = {1.0 / r:.6g}"
    return MembershipReport(
        member=violated is None,
        r=float(r),
        norm_sum=norm_sum,
        form_floor=rep.m_AB,
        violated=violated,
    )


def homogenized_matrix_A0(A):
    """Effective matrix (integral over one period of A^-1)^-1."""
    inv = _checked_inverse(np.asarray(A.values))
    mean_inv = np.einsum("k,kij->ij", A.cell_lengths, inv)
    return _checked_inverse(mean_inv[None])[0]


@dataclass(frozen=True, eq=False)
class ScaledCoefficient:
    """The field y -> A(y/eps) + B(y/eps) restricted to [0, 1].

    Holds the refined cell partition and prefix sums of the zeroth and first
    moments of the inverse, so that integrals of (A+B)^-1 times an affine
    function over any subinterval are O(log K) lookups.
    """

    A: PiecewiseMatrixField
    B: PiecewiseMatrixField
    eps: float
    cap: int = DEFAULT_CELL_CAP
    edges: np.ndarray = field(init=False, repr=False)
    values: np.ndarray = field(init=False, repr=False)
    inverses: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        eps = float(self.eps)
        if not eps > 0:
            raise ValueError("eps must be positive")
        A, B = self.A, self.B
        periods = math.ceil(1.0 / eps)
        estimate = periods * (len(A.breakpoints) - 1) + len(B.breakpoints)
        if estimate > self.cap:
            raise MeshTooFine(
                f"eps={eps:g} gives ~{estimate} coefficient cells on [0,1] (cap {self.cap})"
            )
        pts = [np.array([0.0, 1.0])]
        per = (np.arange(periods + 1)[:, None] + A.breakpoints[None, :]).ravel() * eps
        pts.append(per[(per > 0) & (per < 1)])
        if not B.is_zero:
            bb = B.breakpoints * eps
            pts.append(bb[(bb > 0) & (bb < 1)])
        edges = merge_points(np.concatenate(pts))
        mids = 0.5 * (edges[:-1] + edges[1:])
        vals = eval_field(A, mids / eps) + eval_field(B, mids / eps)
        inv = _checked_inverse(vals)
        lens = np.diff(edges)
        n = A.n
        p0 = np.zeros((len(edges), n, n))
        p0[1:] = np.cumsum(lens[:, None, None] * inv, axis=0)
        p1 = np.zeros((len(edges), n, n))
        sq = 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2)
        p1[1:] = np.cumsum(sq[:, None, None] * inv, axis=0)
        for name, val in (("edges", edges), ("values", vals), ("inverses", inv)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_p0", p0)
        object.__setattr__(self, "_p1", p1)

    @property
    def breakpoints(self):
        """Interior cell edges in (0, 1)."""
        return self.edges[1:-1]

    def _cell(self, t):
        k = np.searchsorted(self.edges, t, side="right") - 1
        return np.clip(k, 0, len(self.values) - 1)

    def _primitive0(self, t):
        t = np.asarray(t, dtype=float)
        k = self._cell(t)
        return self._p0[k] + (t - self.edges[k])[..., None, None] * self.inverses[k]

    def _primitive1(self, t):
        t = np.asarray(t, dtype=float)
        k = self._cell(t)
        e = self.edges[k]
        return self._p1[k] + (0.5 * (t * t - e * e))[..., None, None] * self.inverses[k]

    def integral_inverse(self, a, b):
        """Integral of (A+B)^-1(x/eps) over [a, b] (vectorized over a, b)."""
        return self._primitive0(b) - self._primitive0(a)

    def first_moment(self, a, b):
        """Integral of x (A+B)^-1(x/eps) over [a, b]."""
        return self._primitive1(b) - self._primitive1(a)

    def inverse_at(self, x):
        """Cell inverse at x (right limit)."""
        return self.inverses[self._cell(np.asarray(x, dtype=float))]

    @property
    def total_inverse(self):
        return self._p0[-1].copy()


def effective_matrix_M(A, B, eps, cap=DEFAULT_CELL_CAP):
    """(integral over [0,1] of (A(x/eps)+B(x/eps))^-1 dx)^-1, summed exactly."""
    sc = ScaledCoefficient(A, B, eps, cap)
    return _checked_inverse(sc.total_inverse[None])[0]
