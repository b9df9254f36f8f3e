"""Newton solve of the homogenized problem and the frozen-linearization
iteration for the eps-problem.

The eps-problem is solved by iterating

    G(u) = (I - F_eps'(u0))^-1 (F_eps(u) - F_eps'(u0) u)

from u0 with a single factorization. When the linearization at u0 is
invertible with inverse bound 1/alpha and G contracts with factor 1/2,
the fixed point satisfies |u_eps - u0| <= (2/alpha) |F_eps(u0) - u0|.
"""

from dataclasses import dataclass, field
import math
from typing import NamedTuple

import numpy as np

from .errors import DefectHomogError, FactorizationFailure, NoConvergence
from .gridfn import GridFunction, sup_norm
from .model import jac_c, jac_d
from .operators import apply_F0, apply_F_eps, assemble_Fprime

NEWTON_TOL = 1e-11
NEWTON_MAXIT = 50
FIXED_POINT_TOL = 1e-11
FIXED_POINT_MAXIT = 100
DEGENERACY_THRESHOLD = 1e-6
DIVERGENCE_LIMIT = 1e8


@dataclass
class SolveReport:
    solution: GridFunction
    iterations: int
    residual_history: list
    contraction_factors: list
    alpha: float = None
    discrepancy: float = None
    error_vs_u0: float = None
    bound_2_8_satisfied: bool = None
    rho: float = None
    fixed_point_residual: float = None
    converged: bool = True
    eps: float = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        """JSON-ready fields (the solution itself goes to CSV)."""
        out = {
            "eps": self.eps,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_history": [float(r) for r in self.residual_history],
            "contraction_factors": [float(q) for q in self.contraction_factors],
            "alpha": self.alpha,
            "rho": self.rho,
            "discrepancy": self.discrepancy,
            "error_vs_u0": self.error_vs_u0,
            "bound_2_8_satisfied": self.bound_2_8_satisfied,
            "fixed_point_residual": self.fixed_point_residual,
        }
        out.update(self.extra)
        return out


def _ratios(res):
    return [res[k + 1] / res[k] if res[k] > 0 else 0.0 for k in range(len(res) - 1)]


def solve_homogenized(inst, tol=NEWTON_TOL, max_iter=NEWTON_MAXIT, initial=None):
    """Full Newton on u = F_0(u) starting from u = 0.

    Returns
    -------
    (GridFunction, SolveReport)
        ``residual_history`` holds |u_k - F_0(u_k)|_inf after each step.

    Raises
    ------
    NoConvergence
        On divergence or when ``max_iter`` steps do not reach ``tol``.
    FactorizationFailure
        If a linearization along the way is singular.
    """
    n = inst.n
    u = GridFunction.zeros(inst.mesh, n) if initial is None else initial
    r = apply_F0(inst, u) - u
    history = []
    for it in range(1, max_iter + 1):
        op = assemble_Fprime(inst, u, homogenized=True, compute_alpha=False)
        w = op.solve(r.values)
        u = u + w
        r = apply_F0(inst, u) - u
        res = sup_norm(r)
        history.append(res)
        if not math.isfinite(res) or res > DIVERGENCE_LIMIT:
            raise NoConvergence(f"Newton diverged at iteration {it}", history, _ratios(history))
        if res <= tol:
            return u, SolveReport(
                solution=u,
                iterations=it,
                residual_history=history,
                contraction_factors=_ratios(history),
                fixed_point_residual=res,
                eps=0.0,
            )
    raise NoConvergence(
        f"Newton did not reach tol={tol:g} in {max_iter} iterations", history, _ratios(history)
    )


class Nondegeneracy(NamedTuple):
    alpha: float
    degenerate: bool
    alpha_refined: float = None
    reason: str = ""


def check_nondegeneracy(inst, u0, threshold=DEGENERACY_THRESHOLD, doubling=True):
    """Decide whether the linearized homogenized problem has a nontrivial kernel.

    Flags degeneracy if alpha < ``threshold`` or if alpha drops by more than 10x
    when the mesh is doubled (a continuous kernel element shows up as a
    singular value decaying under refinement).
    """
    try:
        op = assemble_Fprime(inst, u0, homogenized=True)
    except FactorizationFailure:
        return Nondegeneracy(0.0, True, None, "singular linearization")
    alpha = op.alpha
    if alpha < threshold:
        return Nondegeneracy(alpha, True, None, f"alpha {alpha:.3g} < {threshold:g}")
    if not doubling:
        return Nondegeneracy(alpha, False)
    fine = inst.with_mesh(inst.mesh.refine(2))
    try:
        u_fine, _ = solve_homogenized(fine, initial=u0.on(fine.mesh))
        alpha_fine = assemble_Fprime(fine, u_fine, homogenized=True).alpha
    except DefectHomogError as exc:
        return Nondegeneracy(alpha, True, None, f"refined solve failed: {exc}")
    if alpha_fine < threshold or alpha / alpha_fine > 10.0:
        return Nondegeneracy(alpha, True, alpha_fine,
                             f"alpha {alpha:.3g} -> {alpha_fine:.3g} under doubling")
    return Nondegeneracy(alpha, False, alpha_fine)


def _node_pairs(f, model, x, u):
    return np.concatenate((f(model, x, u, side=1), f(model, x, u, side=-1)))


def sufficient_nondegeneracy(inst, u0):
    """Explicit sufficient condition for non-degeneracy at u0.

    Let q be the smallest eigenvalue of sym(dd/du) over the nodes, p the
    largest spectral norm of dc/du and m0 the smallest eigenvalue of sym(A0).
    For a weak solution v of the linearized problem,
    m0 |v'|^2 - p |v| |v'| + q |v|^2 <= 0, which forces v = 0 when q > 0
    and p^2 < 4 m0 q. Returns whether that holds.
    """
    x = inst.mesh.nodes
    vals = u0.values
    Q = _node_pairs(jac_d, inst.model, x, vals)
    P = _node_pairs(jac_c, inst.model, x, vals)
    q = float(np.min(np.linalg.eigvalsh(0.5 * (Q + np.swapaxes(Q, -1, -2)))[:, 0]))
    p = float(np.max(np.linalg.norm(P, ord=2, axis=(-2, -1))))
    A0 = inst.A0
    m0 = float(np.linalg.eigvalsh(0.5 * (A0 + A0.T))[0])
    return q > 0 and p * p < 4.0 * m0 * q


def solve_eps(inst, u0, tol=FIXED_POINT_TOL, max_iter=FIXED_POINT_MAXIT, initial=None, op=None):
    """Frozen-linearization fixed-point iteration for u = F_eps(u).

    Raises
    ------
    NoConvergence
        Carrying the step sizes and contraction factors seen so far; this
        signals eps outside the contraction regime rather than a bug.
    """
    if op is None:
        op = assemble_Fprime(inst, u0, homogenized=False)
    Fu0 = apply_F_eps(inst, u0)
    discrepancy = sup_norm(Fu0 - u0)
    u = u0 if initial is None else initial
    steps = []
    shape = u.values.shape
    converged = False
    for it in range(1, max_iter + 1):
        Fu = apply_F_eps(inst, u)
        rhs = Fu.values - op.apply(u)
        new = GridFunction(inst.mesh, op.solve(rhs).reshape(shape))
        step = sup_norm(new - u)
        steps.append(step)
        u = new
        if not math.isfinite(step) or step > DIVERGENCE_LIMIT:
            break
        if step <= tol:
            converged = True
            break
    factors = _ratios(steps)
    if not converged:
        raise NoConvergence(
            f"frozen iteration did not converge for eps={inst.eps:g} "
            f"(last step {steps[-1]:.3g}, factors {['%.3g' % q for q in factors[-5:]]})",
            steps,
            factors,
        )
    alpha = op.alpha
    rho = 2.0 / alpha
    err = sup_norm(u - u0)
    return SolveReport(
        solution=u,
        iterations=len(steps),
        residual_history=steps,
        contraction_factors=factors,
        alpha=alpha,
        discrepancy=discrepancy,
        error_vs_u0=err,
        rho=rho,
        # the iterate is within ~tol of the exact discrete fixed point
        bound_2_8_satisfied=bool(err <= rho * discrepancy + tol),
        fixed_point_residual=sup_norm(apply_F_eps(inst, u) - u),
        eps=float(inst.eps),
    )


@dataclass
class ProbeReport:
    ok: bool
    distances: list
    failures: int
    radius: float
    seed: int

    def __bool__(self):
        return self.ok


def local_uniqueness_probe(inst, u0, perturbations=20, radius=0.05, seed=0,
                           reference=None, match_tol=1e-8):
    """Restart :func:`solve_eps` from random points at sup-distance ``radius`` of u0.

    Holds (truthy report) when every restart converges to the reference
    solution within ``match_tol``. Non-converged restarts count as failures
    and are reported, not raised.
    """
    op = assemble_Fprime(inst, u0, homogenized=False)
    if reference is None:
        reference = solve_eps(inst, u0, op=op).solution
    rng = np.random.default_rng(seed)
    dists, failures = [], 0
    for _ in range(perturbations):
        v = rng.uniform(-1.0, 1.0, u0.values.shape)
        v *= radius / np.max(np.linalg.norm(v, axis=-1))
        try:
            rep = solve_eps(inst, u0, initial=u0 + v, op=op)
        except NoConvergence:
            failures += 1
            continue
        dists.append(sup_norm(rep.solution - reference))
    ok = failures == 0 and all(d <= match_tol for d in dists)
    return ProbeReport(ok, dists, failures, radius, seed)
