"""Experiments: eps-rate studies, defect sweeps, the averaging check and
strong-versus-uniform convergence of the linearizations."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np
from scipy.sparse.linalg import svds

from .coeff import ScaledCoefficient, check_Mr_membership, homogenized_matrix_A0
from .errors import DefectHomogError, InsufficientPoints, MembershipViolation
from .gridfn import GridFunction, sup_norm, w1inf_seminorm
from .operators import assemble_Fprime, make_instance
from .oracle import second_derivative_scale, solve_fem
from .solver import FIXED_POINT_TOL, solve_eps, solve_homogenized

MIN_EPSILONS = 4
FLOOR_FACTOR = 10.0
ORACLE_TOL_FACTOR = 5.0


def thread_count():
    """Worker threads for sweeps; DEFECT_HOMOG_THREADS overrides the default of 1."""
    try:
        return max(1, int(os.environ.get("DEFECT_HOMOG_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items, workers=None):
    workers = workers or thread_count()
    if workers == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def loglog_slope(x, y):
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass
class RateRow:
    eps: float
    sup_error: float = None
    discrepancy: float = None
    alpha: float = None
    iterations: int = None
    bound_ok: bool = None
    max_late_factor: float = None
    converged: bool = True
    error: str = None

    def as_list(self):
        return [self.eps, self.sup_error, self.discrepancy, self.alpha, self.iterations,
                self.bound_ok, self.max_late_factor, self.converged, self.error or ""]


RATE_COLUMNS = ["eps", "sup_error", "discrepancy", "alpha", "iterations", "bound_ok",
                "max_late_factor", "converged", "error"]


@dataclass
class RateTable:
    rows: list
    fitted_slope: float
    defect_id: str = "B"

    @property
    def converged_rows(self):
        return [r for r in self.rows if r.converged]

    def to_dict(self):
        return {
            "defect_id": self.defect_id,
            "fitted_slope": self.fitted_slope,
            "rows": [dict(zip(RATE_COLUMNS, r.as_list())) for r in self.rows],
        }


def _late_factor(factors):
    # contraction factors from iteration 3 on
    late = factors[1:]
    return max(late) if late else 0.0


def _rate_row(inst, eps, B, tol):
    try:
        ie = make_instance(inst.A, B, inst.model, eps, r=inst.r, N_target=inst.N_target,
                           cap=inst.cap, check=False)
        u0, _ = solve_homogenized(ie)
        rep = solve_eps(ie, u0, tol=tol)
    except DefectHomogError as exc:
        return RateRow(eps=eps, converged=False, error=f"{type(exc).__name__}: {exc}")
    return RateRow(
        eps=eps,
        sup_error=rep.error_vs_u0,
        discrepancy=rep.discrepancy,
        alpha=rep.alpha,
        iterations=rep.iterations,
        bound_ok=rep.bound_2_8_satisfied,
        max_late_factor=_late_factor(rep.contraction_factors),
    )


def rate_study(inst, epsilons, B=None, defect_id="B", tol=FIXED_POINT_TOL, workers=None):
    """Solve at every eps and fit the log-log slope of |u_eps - u0|_inf.

    Rows whose error lies within 10x of the iteration tolerance are excluded
    from the fit; if fewer than two rows remain the slope is None.

    Raises
    ------
    InsufficientPoints
        If fewer than four distinct eps values are given.
    """
    eps_list = sorted({float(e) for e in epsilons}, reverse=True)
    if len(eps_list) < MIN_EPSILONS:
        raise InsufficientPoints(f"need at least {MIN_EPSILONS} eps values, got {len(eps_list)}")
    B = inst.B if B is None else B
    rows = _map(lambda e: _rate_row(inst, e, B, tol), eps_list, workers)
    usable = [r for r in rows if r.converged and r.sup_error > FLOOR_FACTOR * tol]
    slope = None
    if len(usable) >= 2:
        slope = loglog_slope([r.eps for r in usable], [r.sup_error for r in usable])
    return RateTable(rows, slope, defect_id)


@dataclass
class SweepResult:
    tables: list
    epsilons: list
    max_scaled_error: list  # per eps: max over defects of sup_error / eps
    spread: list  # per eps: max / min sup_error across defects

    def to_dict(self):
        return {
            "epsilons": self.epsilons,
            "max_scaled_error": self.max_scaled_error,
            "spread": self.spread,
            "tables": [t.to_dict() for t in self.tables],
        }


def defect_sweep(inst, epsilons, defects, tol=FIXED_POINT_TOL, workers=None):
    """One :func:`rate_study` per defect plus cross-defect summaries.

    ``defects`` is a list of (id, field) pairs.

    Raises
    ------
    MembershipViolation
        Naming the first defect that is not admissible for ``inst.r``.
    """
    for did, B in defects:
        rep = check_Mr_membership(inst.A, B, inst.r)
        if not rep.member:
            raise MembershipViolation(f"defect {did!r}: {rep.violated}")
    tables = [rate_study(inst, epsilons, B, did, tol, workers) for did, B in defects]
    eps_list = [r.eps for r in tables[0].rows]
    scaled, spread = [], []
    for i, eps in enumerate(eps_list):
        errs = [t.rows[i].sup_error for t in tables if t.rows[i].converged]
        if errs:
            scaled.append(max(errs) / eps)
            spread.append(max(errs) / min(errs) if min(errs) > 0 else math.inf)
        else:
            scaled.append(None)
            spread.append(None)
    return SweepResult(tables, eps_list, scaled, spread)


# -- averaging of oscillations ---------------------------------------------------

def _oscillation_integral(sc, A0inv, u, a, b):
    """Exact integral over [a, b] of ((A+B)^-1(x/eps) - A0^-1) u(x) for PL u."""
    x = u.mesh.nodes
    lo = np.clip(x[:-1], a, b)
    hi = np.clip(x[1:], a, b)
    keep = hi > lo
    if not np.any(keep):
        return np.zeros(u.n)
    x0, x1 = x[:-1][keep], x[1:][keep]
    v0, v1 = u.values[:-1][keep], u.values[1:][keep]
    q = (v1 - v0) / (x1 - x0)[:, None]
    p = v0 - q * x0[:, None]
    lo, hi = lo[keep], hi[keep]
    I0 = sc.integral_inverse(lo, hi)
    I1 = sc.first_moment(lo, hi)
    osc = np.einsum("kab,kb->a", I0, p) + np.einsum("kab,kb->a", I1, q)
    plain = (p * (hi - lo)[:, None] + q * (0.5 * (hi**2 - lo**2))[:, None]).sum(axis=0)
    return osc - A0inv @ plain


@dataclass
class AveragingRow:
    eps: float
    sup_value: float
    full_interval: float
    scaled: float  # sup_value / (eps * (|u| + |u'|))


@dataclass
class AveragingTable:
    rows: list
    slope: float
    gamma_hat: float
    scaled_spread: float
    seed: int
    samples: int

    def to_dict(self):
        return {
            "slope": self.slope,
            "gamma_hat": self.gamma_hat,
            "scaled_spread": self.scaled_spread,
            "seed": self.seed,
            "samples": self.samples,
            "rows": [vars(r) for r in self.rows],
        }


def averaging_pairs(eps, samples, rng):
    ab = np.sort(rng.uniform(0.0, 1.0, (samples, 2)), axis=1)
    corners = np.array([[0.0, 1.0], [0.0, min(eps, 1.0)], [max(1.0 - eps, 0.0), 1.0]])
    return np.vstack((ab, corners))


def averaging_check(A, B, eps_list, u, samples=64, seed=0):
    """Sup over sampled subintervals of the oscillating-inverse integral against u.

    The same seeded generator draws a fresh set of ``samples`` pairs for each
    eps (in the given order); the corner pairs (0, 1), (0, eps), (1 - eps, 1)
    are always included.
    """
    A0inv = np.linalg.inv(homogenized_matrix_A0(A))
    norm = sup_norm(u) + w1inf_seminorm(u)
    rng = np.random.default_rng(seed)
    rows = []
    for eps in eps_list:
        sc = ScaledCoefficient(A, B, eps)
        vals = [np.linalg.norm(_oscillation_integral(sc, A0inv, u, a, b))
                for a, b in averaging_pairs(eps, samples, rng)]
        full = vals[-3]
        sup = max(vals)
        scaled = sup / (eps * norm) if norm > 0 else 0.0
        rows.append(AveragingRow(float(eps), float(sup), float(full), float(scaled)))
    usable = [r for r in rows if r.sup_value > 1e-13]
    slope = loglog_slope([r.eps for r in usable], [r.sup_value for r in usable]) \
        if len(usable) >= 2 else None
    scaled = [r.scaled for r in usable]
    gamma_hat = max(scaled) if scaled else 0.0
    spread = max(scaled) / min(scaled) if scaled and min(scaled) > 0 else None
    return AveragingTable(rows, slope, gamma_hat, spread, seed, samples)


# -- strong vs uniform operator convergence -------------------------------------

def smooth_test_functions(count, n, seed, modes=4):
    """Seeded random smooth functions x -> R^n, independent of any mesh."""
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=(count, modes, n)) / np.arange(1, modes + 1)[None, :, None]
    shift = rng.normal(size=(count, 2, n))

    def make(j):
        def f(x):
            x = np.asarray(x, float)
            k = np.arange(1, modes + 1)
            s = np.sin(np.pi * x[:, None] * k[None, :])
            return s @ coef[j] + shift[j, 0] + np.outer(x, shift[j, 1])
        return f

    return [make(j) for j in range(count)]


@dataclass
class OperatorRow:
    eps: float
    vector_norms: list
    opnorm_2: float
    opnorm_inf: float


@dataclass
class OperatorTable:
    rows: list
    seed: int

    def vector_slopes(self):
        eps = [r.eps for r in self.rows]
        cols = np.array([r.vector_norms for r in self.rows])
        return [loglog_slope(eps, cols[:, j]) if np.all(cols[:, j] > 0) else None
                for j in range(cols.shape[1])]

    def opnorm_slope(self, which="opnorm_inf"):
        vals = [getattr(r, which) for r in self.rows]
        if min(vals) <= 0:
            return None
        return loglog_slope([r.eps for r in self.rows], vals)

    def monotone(self):
        """Per test vector: norms strictly decrease as eps decreases."""
        cols = np.array([r.vector_norms for r in self.rows])
        return [bool(np.all(np.diff(cols[:, j]) < 0)) for j in range(cols.shape[1])]

    def to_dict(self):
        return {
            "seed": self.seed,
            "rows": [vars(r) for r in self.rows],
            "vector_slopes": self.vector_slopes(),
            "opnorm_inf_slope": self.opnorm_slope("opnorm_inf"),
            "opnorm_2_slope": self.opnorm_slope("opnorm_2"),
            "monotone": self.monotone(),
        }


def largest_singular_value(mat):
    """Top singular value by Lanczos with a fixed start vector (deterministic)."""
    if min(mat.shape) < 3:
        return float(np.linalg.norm(mat, 2))
    if not np.any(mat):
        return 0.0
    v0 = np.linspace(1.0, 2.0, mat.shape[1])
    return float(svds(mat, k=1, v0=v0, return_singular_vectors=False)[0])


def operator_convergence_demo(inst, epsilons, test_vectors=5, seed=0, per_period=16,
                              workers=None):
    """|(F_eps'(u0) - F_0'(u0)) v| for fixed smooth v, and the operator norms.

    ``opnorm_inf`` is the max-row-sum norm of the nodal difference matrix
    (the sup-norm operator norm on piecewise-linear functions); ``opnorm_2``
    is its largest singular value. The mesh keeps at least ``per_period``
    intervals per period eps, so that functions oscillating with the
    coefficient stay representable as eps shrinks.
    """
    eps_list = sorted({float(e) for e in epsilons}, reverse=True)
    funcs = smooth_test_functions(test_vectors, inst.n, seed)

    def row(eps):
        ie = inst.with_eps(eps, N_target=max(inst.N_target, int(math.ceil(per_period / eps))))
        u0, _ = solve_homogenized(ie)
        Fe = assemble_Fprime(ie, u0, homogenized=False, compute_alpha=False).matrix
        F0 = assemble_Fprime(ie, u0, homogenized=True, compute_alpha=False).matrix
        D = Fe - F0
        norms = []
        for f in funcs:
            v = GridFunction.from_function(ie.mesh, f, ie.n)
            dv = (D @ v.values.ravel()).reshape(v.values.shape)
            norms.append(sup_norm(dv))
        return OperatorRow(eps, norms, largest_singular_value(D),
                           float(np.max(np.abs(D).sum(axis=1))))

    return OperatorTable(_map(row, eps_list, workers), seed)


# -- oracle comparison ----------------------------------------------------------

@dataclass
class OracleRow:
    refine: int
    h_oracle: float
    sup_difference: float
    tolerance: float
    ratio_to_previous: float = None

    @property
    def within(self):
        return self.sup_difference <= self.tolerance


@dataclass
class OracleComparison:
    eps: float
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {
            "eps": self.eps,
            "rows": [dict(vars(r), within=r.within) for r in self.rows],
        }


def oracle_compare(inst, refinements=(2, 4)):
    """Integral-equation solve against the Galerkin oracle on shared meshes.

    For each refinement s both discretizations run on ``inst.mesh`` refined
    s times; the sup difference over all nodes is compared with the
    second-order tolerance 5 h^2 * scale, where scale is a proxy for |u''|.
    """
    out = OracleComparison(float(inst.eps))
    prev = None
    for s in refinements:
        fine = inst.with_mesh(inst.mesh.refine(s))
        u0, _ = solve_homogenized(fine)
        rep = solve_eps(fine, u0)
        fem = solve_fem(inst, s)
        diff = sup_norm(rep.solution - fem.solution)
        h = float(fine.mesh.h.max())
        tol = ORACLE_TOL_FACTOR * h * h * second_derivative_scale(fine, rep.solution)
        out.rows.append(OracleRow(s, h, diff, tol, prev / diff if prev and diff > 0 else None))
        prev = diff
    return out
