"""Meshes on [0, 1] and vector-valued piecewise-linear grid functions."""

from dataclasses import dataclass
import csv
import io

import numpy as np

from .coeff import DEFAULT_CELL_CAP, MERGE_TOL, ScaledCoefficient, merge_points
from .errors import MeshTooFine

DEFAULT_MESH_CAP = 200_000


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    coeff_breakpoints: np.ndarray = None

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("mesh needs at least two nodes")
        if nodes[0] != 0.0 or nodes[-1] != 1.0:
            raise ValueError("mesh must start at 0 and end at 1")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        bps = np.zeros(0) if self.coeff_breakpoints is None else np.array(
            self.coeff_breakpoints, dtype=float
        )
        if bps.size:
            # every interior breakpoint must coincide with a node
            j = np.clip(np.searchsorted(nodes, bps), 1, nodes.size - 1)
            gap = np.minimum(np.abs(nodes[j] - bps), np.abs(nodes[j - 1] - bps))
            if np.any(gap > 1e-12):
                raise ValueError("mesh is not aligned with coefficient breakpoints")
        nodes.setflags(write=False)
        bps.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "coeff_breakpoints", bps)

    @property
    def size(self):
        """Number of intervals."""
        return self.nodes.size - 1

    @property
    def h(self):
        return np.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def refine(self, s):
        """Split every interval into ``s`` equal pieces."""
        s = int(s)
        if s < 1:
            raise ValueError("refinement factor must be >= 1")
        frac = np.arange(s) / s
        x = self.nodes
        fine = (x[:-1, None] + frac[None, :] * np.diff(x)[:, None]).ravel()
        fine = np.append(fine, 1.0)
        return Mesh(fine, self.coeff_breakpoints)

    def node_index(self, x):
        """Indices of nodes coinciding with the points ``x`` (to 1e-12)."""
        x = np.asarray(x, dtype=float)
        j = np.clip(np.searchsorted(self.nodes, x), 0, self.nodes.size - 1)
        jm = np.clip(j - 1, 0, None)
        j = np.where(np.abs(self.nodes[jm] - x) < np.abs(self.nodes[j] - x), jm, j)
        if np.any(np.abs(self.nodes[j] - x) > 1e-12):
            raise ValueError("points are not mesh nodes")
        return j


def uniform_mesh(N):
    return Mesh(np.linspace(0.0, 1.0, int(N) + 1))


def build_mesh(eps, A, B, N_target, x_breakpoints=(), cap=DEFAULT_MESH_CAP):
    """Uniform mesh with ``N_target`` intervals merged with all coefficient breakpoints.

    ``eps=None`` (or 0) builds the mesh for the homogenized problem, which has
    no coefficient breakpoints.

    Raises
    ------
    MeshTooFine
        If the node count would exceed ``cap``.
    """
    N_target = int(N_target)
    if N_target < 1:
        raise ValueError("N_target must be positive")
    if N_target + 1 > cap:
        raise MeshTooFine(f"N_target={N_target} exceeds the node cap {cap}")
    xb = np.asarray(x_breakpoints, dtype=float)
    xb = xb[(xb > 0) & (xb < 1)]
    if eps:
        sc = eps if isinstance(eps, ScaledCoefficient) else ScaledCoefficient(
            A, B, eps, cap=min(cap, DEFAULT_CELL_CAP)
        )
        cb = sc.breakpoints
    else:
        cb = np.zeros(0)
    if cb.size + xb.size + N_target + 1 > cap:
        raise MeshTooFine(f"mesh would need more than {cap} nodes")
    nodes = merge_points(
        np.concatenate((np.linspace(0.0, 1.0, N_target + 1), cb, xb)), MERGE_TOL
    )
    nodes[0], nodes[-1] = 0.0, 1.0
    return Mesh(nodes, merge_points(np.concatenate((cb, xb))))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Continuous piecewise-linear function [0, 1] -> R^n given by nodal values."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.mesh.nodes.size:
            raise ValueError(
                f"expected {self.mesh.nodes.size} nodal values, got {v.shape[0]}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("grid function values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def x(self):
        return self.mesh.nodes

    @classmethod
    def from_function(cls, mesh, f, n=None):
        vals = np.asarray(f(mesh.nodes), dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if n is not None and vals.shape[1] != n:
            raise ValueError("dimension mismatch")
        return cls(mesh, vals)

    @classmethod
    def zeros(cls, mesh, n):
        return cls(mesh, np.zeros((mesh.nodes.size, n)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        cols = [np.interp(x, self.mesh.nodes, self.values[:, a]) for a in range(self.n)]
        return np.stack(cols, axis=-1)

    def on(self, mesh):
        """Interpolate onto another mesh."""
        return GridFunction(mesh, self(mesh.nodes))

    def __add__(self, other):
        return GridFunction(self.mesh, self.values + _vals(other))

    def __sub__(self, other):
        return GridFunction(self.mesh, self.values - _vals(other))

    def __mul__(self, s):
        return GridFunction(self.mesh, self.values * s)

    __rmul__ = __mul__

    def to_csv(self, header_lines=()):
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x"] + [f"u{a + 1}" for a in range(self.n)])
        for x, row in zip(self.mesh.nodes, self.values):
            w.writerow([repr(float(x))] + [repr(float(v)) for v in row])
        return buf.getvalue()


def _vals(g):
    return g.values if isinstance(g, GridFunction) else np.asarray(g, dtype=float)


def read_csv(text):
    """Parse the output of :meth:`GridFunction.to_csv`."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return GridFunction(Mesh(data[:, 0]), data[:, 1:])


def sup_norm(u):
    """Max over nodes of the Euclidean norm; exact for piecewise-linear u."""
    return float(np.max(np.linalg.norm(_vals(u), axis=-1)))


def w1inf_seminorm(u):
    """Max over intervals of |chord slope|."""
    slopes = np.diff(u.values, axis=0) / u.mesh.h[:, None]
    return float(np.max(np.linalg.norm(slopes, axis=-1)))


def cumtrapz_pairs(h, left, right):
    """Cumulative integral of a function linear on each interval.

    ``left[k]`` and ``right[k]`` are the one-sided values at the ends of
    interval ``k``; trailing dimensions are carried along. Returns nodal
    values starting from 0.
    """
    incr = (0.5 * h).reshape((-1,) + (1,) * (left.ndim - 1)) * (left + right)
    out = np.zeros((left.shape[0] + 1,) + left.shape[1:])
    np.cumsum(incr, axis=0, out=out[1:])
    return out


def weighted_cumtrapz_pairs(h, minv, left, right):
    """Cumulative integral of ``minv[k] @ g`` with g linear on each interval."""
    avg = 0.5 * (left + right)
    incr = np.einsum("kab,kb...->ka...", minv, avg)
    incr *= h.reshape((-1,) + (1,) * (avg.ndim - 1))
    out = np.zeros((left.shape[0] + 1,) + left.shape[1:])
    np.cumsum(incr, axis=0, out=out[1:])
    return out


def cumulative_integral(g):
    """Exact antiderivative (vanishing at 0) of the piecewise-linear ``g``, at the nodes."""
    v = g.values
    return GridFunction(g.mesh, cumtrapz_pairs(g.mesh.h, v[:-1], v[1:]))


def interval_inverses(mesh, A, B, eps):
    """(A(x/eps)+B(x/eps))^-1 on each mesh interval (mesh must be aligned)."""
    sc = eps if isinstance(eps, ScaledCoefficient) else ScaledCoefficient(A, B, eps)
    return sc.inverse_at(mesh.midpoints)


def weighted_cumulative_integral(A, B, eps, g):
    """x -> integral over [0, x] of (A(y/eps)+B(y/eps))^-1 g(y) dy at the nodes.

    Exact for piecewise-linear g on a mesh aligned with the coefficient
    breakpoints, since the coefficient is one constant matrix per interval.
    """
    minv = interval_inverses(g.mesh, A, B, eps)
    v = g.values
    return GridFunction(g.mesh, weighted_cumtrapz_pairs(g.mesh.h, minv, v[:-1], v[1:]))
