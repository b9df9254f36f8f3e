"""Nonlinearities c(x, u), d(x, u) with symbolic Jacobians in u."""

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import EvalError, ModelError


@dataclass(frozen=True, eq=False)
class NonlinearModel:
    n: int
    c_components: tuple
    d_components: tuple
    x_breakpoints: tuple = ()
    jac_c: tuple = None
    jac_d: tuple = None

    def __post_init__(self):
        if len(self.c_components) != self.n or len(self.d_components) != self.n:
            raise ModelError(f"need exactly {self.n} components for c and d")
        bps = tuple(sorted(float(b) for b in self.x_breakpoints))
        object.__setattr__(self, "x_breakpoints", bps)
        for comp in self.c_components + self.d_components:
            _validate(comp, bps)
        object.__setattr__(self, "jac_c", _jacobian(self.c_components, self.n))
        object.__setattr__(self, "jac_d", _jacobian(self.d_components, self.n))

    @property
    def is_linear_in_u(self):
        """True if c and d do not depend on u at all."""
        return not any(ex.depends_on_u(e) for e in self.c_components + self.d_components)

    def describe(self):
        return {
            "c": [ex.to_text(e) for e in self.c_components],
            "d": [ex.to_text(e) for e in self.d_components],
        }


def _jacobian(components, n):
    return tuple(tuple(ex.diff(e, j) for j in range(n)) for e in components)


def _validate(e, bps):
    for node in ex.walk(e):
        if isinstance(node, ex.Call) and node.fn == "step":
            arg = node.arg
            if ex.depends_on_u(arg):
                raise ModelError(f"step() may only depend on x: {ex.to_text(node)}")
            z = np.zeros((2, 1))
            v0, v1 = ex.evaluate(arg, np.array([0.0, 1.0]), z)
            slope = v1 - v0
            if slope == 0 or not np.isfinite(slope):
                raise ModelError(f"step() argument must be affine in x: {ex.to_text(node)}")
            root = -v0 / slope
            xs = np.array([0.25, 0.5, 0.75])
            vals = ex.evaluate(arg, xs, np.zeros((3, 1)))
            if not np.allclose(vals, v0 + slope * xs, rtol=0, atol=1e-12):
                raise ModelError(f"step() argument must be affine in x: {ex.to_text(node)}")
            if 0 < root < 1 and not any(abs(root - b) <= 1e-12 for b in bps):
                raise ModelError(
                    f"step() jumps at x={root:.15g}, which is not a declared x breakpoint"
                )


def make_model(c, d, n=None, x_breakpoints=()):
    """Build a model from lists of expression strings (or parsed expressions)."""
    if n is None:
        n = len(c)
    c_exprs = tuple(ex.parse_expression(t, n) if isinstance(t, str) else t for t in c)
    d_exprs = tuple(ex.parse_expression(t, n) if isinstance(t, str) else t for t in d)
    return NonlinearModel(n, c_exprs, d_exprs, tuple(x_breakpoints))


def _prep(x, u, n):
    x_arr = np.asarray(x, dtype=float)
    u_arr = np.asarray(u, dtype=float)
    scalar = x_arr.ndim == 0
    x1 = np.atleast_1d(x_arr)
    u1 = u_arr.reshape(x1.shape[0], n) if not scalar else u_arr.reshape(1, n)
    return scalar, x1, u1


def _checked(arr, what):
    if not np.all(np.isfinite(arr)):
        raise EvalError(f"non-finite value while evaluating {what}")
    return arr


def _eval_vec(components, x, u, n, side, what):
    scalar, x1, u1 = _prep(x, u, n)
    with np.errstate(all="ignore"):
        out = np.stack([ex.evaluate(e, x1, u1, side) for e in components], axis=-1)
    _checked(out, what)
    return out[0] if scalar else out


def _eval_mat(rows, x, u, n, side, what):
    scalar, x1, u1 = _prep(x, u, n)
    with np.errstate(all="ignore"):
        out = np.stack(
            [np.stack([ex.evaluate(e, x1, u1, side) for e in row], axis=-1) for row in rows],
            axis=-2,
        )
    _checked(out, what)
    return out[0] if scalar else out


def eval_c(model, x, u, side=1):
    """c(x, u); vectorized over a leading axis. ``side`` picks step() limits."""
    return _eval_vec(model.c_components, x, u, model.n, side, "c")


def eval_d(model, x, u, side=1):
    return _eval_vec(model.d_components, x, u, model.n, side, "d")


def jac_c(model, x, u, side=1):
    """Jacobian of c in u: entry [a, b] is dc_a / du_b."""
    return _eval_mat(model.jac_c, x, u, model.n, side, "jac c")


def jac_d(model, x, u, side=1):
    return _eval_mat(model.jac_d, x, u, model.n, side, "jac d")


def fd_jacobian_check(model, samples=100, h=1e-5, seed=0, u_range=2.0):
    """Worst relative discrepancy between symbolic and central-difference Jacobians.

    Samples x uniformly in [0, 1] and u uniformly in [-u_range, u_range]^n,
    both rounded to multiples of 2^-20, and uses the power of two nearest to
    ``h`` as step, so u +- h is exact and affine maps difference without
    representation error. The error of an entry is scaled by max(1, |J|) of
    the whole matrix.
    """
    if not 0 < h <= 1e-3:
        raise ValueError("h must lie in (0, 1e-3]")
    h = 2.0 ** round(np.log2(h))
    grid = 2.0**-20
    rng = np.random.default_rng(seed)
    n = model.n
    xs = np.round(rng.uniform(0.0, 1.0, samples) / grid) * grid
    us = np.round(rng.uniform(-u_range, u_range, (samples, n)) / grid) * grid
    worst = 0.0
    for f, jac in ((eval_c, jac_c), (eval_d, jac_d)):
        J = jac(model, xs, us)
        fd = np.empty_like(J)
        for b in range(n):
            up, um = us.copy(), us.copy()
            up[:, b] += h
            um[:, b] -= h
            fd[:, :, b] = (f(model, xs, up) - f(model, xs, um)) / (2.0 * h)
        scale = np.maximum(1.0, np.max(np.abs(J), axis=(1, 2)))
        err = np.max(np.abs(fd - J), axis=(1, 2)) / scale
        worst = max(worst, float(np.max(err)))
    return worst
