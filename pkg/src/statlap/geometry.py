"""Tensor fields on periodic rectangular charts and the metric/connection calculus.

All fields are node-sampled on a flat-torus chart: axis i has N_i nodes,
period L_i and uniform spacing h_i = L_i / N_i, with exact wraparound index
arithmetic. Node ordering is row-major (C order) over the axes in declared
order; a rank-r field is stored as an ndarray of shape (n_nodes, dim, ..., dim)
with r trailing index slots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np

from .errors import ShapeMismatch, SingularMetric

# Hard ceiling on the per-node condition number accepted by the PD check.
MAX_METRIC_CONDITION = 1e12

# Tolerance for the g * g^{-1} = I invariant (identity has unit scale).
METRIC_INVERSE_TOL = 1e-12

# Derived algebraic identities between stored fields (dual-pair difference,
# Levi-Civita midpoint) hold to floating-point roundoff, not bit-exactly;
# this is the accepted roundoff budget for O(1) fields.
ROUNDOFF_TOL = 1e-13


@dataclass(frozen=True)
class Grid:
    """Periodic rectangular chart with uniform spacing per axis.

    The chart along axis i is [origin_i, origin_i + period_i) and wraps
    around, so index arithmetic is exact mod points[i].
    """

    points: tuple[int, ...]
    periods: tuple[float, ...]
    origin: tuple[float, ...] = ()

    def __post_init__(self):
        points = tuple(int(p) for p in self.points)
        periods = tuple(float(p) for p in self.periods)
        origin = tuple(float(o) for o in self.origin) if self.origin else (0.0,) * len(points)
        if len(points) == 0:
            raise ShapeMismatch("grid needs at least one axis")
        if len(periods) != len(points) or len(origin) != len(points):
            raise ShapeMismatch("points, periods and origin must have equal length")
        if any(n < 4 for n in points):
            raise ShapeMismatch(f"need at least 4 points per axis, got {points}")
        if any(p <= 0 for p in periods):
            raise ShapeMismatch(f"periods must be positive, got {periods}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.points))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.periods, self.points))

    @property
    def weight(self) -> float:
        """Quadrature weight of one node, prod of spacings."""
        return float(np.prod(self.spacing))

    def axis_coords(self, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        return self.origin[axis] + h * np.arange(self.points[axis])

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (n_nodes, dim), row-major node order."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def to_grid_shape(self, values: np.ndarray) -> np.ndarray:
        return values.reshape(self.points + values.shape[1:])

    def to_node_shape(self, values: np.ndarray) -> np.ndarray:
        return values.reshape((self.n_nodes,) + values.shape[self.dim:])

    def shift(self, values: np.ndarray, axis: int, steps: int) -> np.ndarray:
        """values at node n + steps*e_axis, periodic. Leading axis is nodes."""
        grid_shaped = self.to_grid_shape(values)
        return self.to_node_shape(np.roll(grid_shaped, -steps, axis=axis))

    def diff_central(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Second-order central difference along a chart axis, periodic."""
        h = self.spacing[axis]
        return (self.shift(values, axis, +1) - self.shift(values, axis, -1)) / (2.0 * h)

    def diff_forward(self, values: np.ndarray, axis: int) -> np.ndarray:
        """First-order forward difference (lives at the axis midpoint)."""
        h = self.spacing[axis]
        return (self.shift(values, axis, +1) - values) / h

    def avg_forward(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Average of a node value and its +1 neighbour along an axis."""
        return 0.5 * (values + self.shift(values, axis, +1))

    def neighbor_index(self, axis: int, steps: int) -> np.ndarray:
        """Flat node index of node n + steps*e_axis, for every n."""
        flat = np.arange(self.n_nodes).reshape(self.points)
        return np.roll(flat, -steps, axis=axis).ravel()


def _symmetrize(values: np.ndarray, groups: tuple[tuple[int, ...], ...]) -> np.ndarray:
    """Enforce exact (bitwise) symmetry of tensor slots within each group.

    The symmetrized value for each sorted representative multi-index is
    computed once and copied to all permuted positions, so equality under
    slot permutation holds component-wise exactly.
    """
    if not groups:
        return values
    out = values.copy()
    rank = values.ndim - 1
    dim = values.shape[1] if rank else 0
    for group in groups:
        group = tuple(group)
        if any(s < 0 or s >= rank for s in group):
            raise ShapeMismatch(f"symmetry group {group} out of range for rank {rank}")
        if len(group) < 2:
            continue
        others = [s for s in range(rank) if s not in group]
        for fixed in product(range(dim), repeat=len(others)):
            for rep in product(range(dim), repeat=len(group)):
                if tuple(sorted(rep)) != rep:
                    continue
                perms = sorted(set(permutations(rep)))
                def _slot_index(assign):
                    idx = [slice(None)] * (rank + 1)
                    idx[0] = slice(None)
                    for s, v in zip(others, fixed):
                        idx[s + 1] = v
                    for s, v in zip(group, assign):
                        idx[s + 1] = v
                    return tuple(idx)
                acc = np.zeros(values.shape[0], dtype=values.dtype)
                for p in perms:
                    acc += out[_slot_index(p)]
                acc /= len(perms)
                for p in perms:
                    out[_slot_index(p)] = acc
    return out


@dataclass(frozen=True)
class TensorField:
    """Node-sampled tensor field of rank 0..3 with declared index symmetries.

    symmetries is a tuple of slot groups (0-based tensor slots, the node axis
    excluded); each group is kept exactly symmetric by construction.
    """

    grid: Grid
    rank: int
    values: np.ndarray
    symmetries: tuple[tuple[int, ...], ...] = ()

    @classmethod
    def create(cls, grid, values, symmetries=()):
        values = np.ascontiguousarray(values, dtype=np.float64)
        rank = values.ndim - 1
        expected = (grid.n_nodes,) + (grid.dim,) * rank
        if values.shape != expected:
            raise ShapeMismatch(f"expected field shape {expected}, got {values.shape}")
        if rank > 3:
            raise ShapeMismatch(f"rank {rank} fields are not supported")
        if not np.all(np.isfinite(values)):
            raise ShapeMismatch("field contains non-finite values")
        symmetries = tuple(tuple(g) for g in symmetries)
        values = _symmetrize(values, symmetries)
        values.flags.writeable = False
        return cls(grid=grid, rank=rank, values=values, symmetries=symmetries)

    @property
    def dim(self) -> int:
        return self.grid.dim


@dataclass(frozen=True)
class ConnectionField:
    """Torsion-free connection coefficients G^k_{ij}, stored [node, k, i, j].

    Symmetry in the two lower slots (i, j) is exact.
    """

    grid: Grid
    coeffs: np.ndarray

    @classmethod
    def create(cls, grid, coeffs):
        coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
        expected = (grid.n_nodes, grid.dim, grid.dim, grid.dim)
        if coeffs.shape != expected:
            raise ShapeMismatch(f"expected connection shape {expected}, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ShapeMismatch("connection contains non-finite values")
        coeffs = _symmetrize(coeffs, ((1, 2),))
        coeffs.flags.writeable = False
        return cls(grid=grid, coeffs=coeffs)


def invert_metric(g: TensorField) -> TensorField:
    """Per-node inverse of an SPD metric field, symmetrized.

    Raises SingularMetric (with node index and condition estimate) if any
    node fails the positive-definiteness or conditioning check.
    """
    if g.rank != 2:
        raise ShapeMismatch(f"metric must be rank 2, got rank {g.rank}")
    vals = g.values
    eigs = np.linalg.eigvalsh(vals)
    lo, hi = eigs[:, 0], eigs[:, -1]
    bad = (lo <= 0) | (hi > MAX_METRIC_CONDITION * np.maximum(lo, np.finfo(float).tiny))
    if np.any(bad):
        node = int(np.argmax(bad))
        cond = float(hi[node] / lo[node]) if lo[node] > 0 else math.inf
        raise SingularMetric(node, cond)
    inv = np.linalg.inv(vals)
    return TensorField.create(g.grid, inv, symmetries=((0, 1),))


def sqrt_det_metric(g: TensorField) -> TensorField:
    """Per-node sqrt(det g) as a rank-0 field. The metric must be SPD."""
    invert_metric(g)  # reuse the PD / conditioning check
    det = np.linalg.det(g.values)
    return TensorField.create(g.grid, np.sqrt(det))


def christoffel_lc(g: TensorField, grid: Grid | None = None) -> ConnectionField:
    """Levi-Civita connection of g via central differences.

    G^k_{ij} = (1/2) g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij}), periodic.
    """
    grid = grid or g.grid
    ginv = invert_metric(g).values
    dg = np.stack([grid.diff_central(g.values, a) for a in range(grid.dim)], axis=1)
    # dg[n, i, j, l] = d_i g_{jl}
    bracket = dg + np.transpose(dg, (0, 2, 1, 3)) - np.transpose(dg, (0, 3, 2, 1))
    # bracket[n, i, j, l] = d_i g_{jl} + d_j g_{il} - d_l g_{ij}
    coeffs = 0.5 * np.einsum("nkl,nijl->nkij", ginv, bracket)
    return ConnectionField.create(grid, coeffs)


def difference_tensor(g_inv: TensorField, C: TensorField) -> TensorField:
    """Raise the last index of the cubic tensor: K^k_{ij} = g^{kl} C_{ijl}.

    Stored [node, k, i, j], symmetric in (i, j).
    """
    if g_inv.rank != 2 or C.rank != 3:
        raise ShapeMismatch("difference_tensor expects a rank-2 inverse metric and a rank-3 tensor")
    if g_inv.grid is not C.grid and g_inv.grid != C.grid:
        raise ShapeMismatch("fields live on different grids")
    K = np.einsum("nkl,nijl->nkij", g_inv.values, C.values)
    return TensorField.create(g_inv.grid, K, symmetries=((1, 2),))


def alpha_connection_pair(lc: ConnectionField, K: TensorField, alpha: float = 1.0):
    """Dual pair around Levi-Civita: G = LC - (a/2)K, G~ = LC + (a/2)K.

    With the default alpha = 1 the pair difference is K itself, i.e. the
    index-raised cubic tensor; alpha = 0 collapses both onto Levi-Civita.
    """
    if K.values.shape != lc.coeffs.shape:
        raise ShapeMismatch("difference tensor and connection shapes disagree")
    half = (0.5 * alpha) * K.values
    gamma = ConnectionField.create(lc.grid, lc.coeffs - half)
    gamma_dual = ConnectionField.create(lc.grid, lc.coeffs + half)
    return gamma, gamma_dual


def density_field(g: TensorField, f: TensorField) -> TensorField:
    """Volume density rho = exp(-f) * sqrt(det g), strictly positive."""
    if f.rank != 0:
        raise ShapeMismatch("f must be a scalar field")
    sdg = sqrt_det_metric(g)
    rho = np.exp(-f.values) * sdg.values
    return TensorField.create(g.grid, rho)


@dataclass(frozen=True)
class ManifoldData:
    """One coherent snapshot of a metric-and-dual-pair structure with density.

    Holds (g, g^{-1}, sqrt det g, C, K, dual connection pair, Levi-Civita,
    f, rho) on a single grid.  All arrays are immutable after construction.
    """

    grid: Grid
    g: TensorField
    g_inv: TensorField
    sqrt_det_g: TensorField
    C: TensorField
    K: TensorField
    levi_civita: ConnectionField
    gamma: ConnectionField
    gamma_dual: ConnectionField
    f: TensorField
    rho: TensorField
    alpha: float

    @property
    def dim(self) -> int:
        return self.grid.dim

    def validate(self, roundoff_tol: float = ROUNDOFF_TOL) -> dict:
        """Check the construction invariants; returns the residuals.

        Raises ShapeMismatch if any invariant is violated. The derived
        connection identities are checked at roundoff level; see module
        notes on why simultaneous bit-exactness is not attainable.
        """
        n = self.grid.n_nodes
        eye = np.eye(self.dim)
        prod_res = float(np.abs(np.einsum("nij,njk->nik", self.g.values, self.g_inv.values) - eye).max())
        rho_expect = np.exp(-self.f.values) * self.sqrt_det_g.values
        rho_res = float(np.abs(self.rho.values - rho_expect).max())
        scale = max(1.0, float(np.abs(self.levi_civita.coeffs).max()))
        pair_res = float(np.abs(
            (self.gamma_dual.coeffs - self.gamma.coeffs) - self.alpha * self.K.values
        ).max())
        mid_res = float(np.abs(
            0.5 * (self.gamma.coeffs + self.gamma_dual.coeffs) - self.levi_civita.coeffs
        ).max())
        residuals = {
            "metric_inverse": prod_res,
            "density_product": rho_res,
            "pair_difference": pair_res,
            "pair_midpoint": mid_res,
            "rho_min": float(self.rho.values.min()),
        }
        if prod_res > METRIC_INVERSE_TOL:
            raise ShapeMismatch(f"g * g_inv deviates from identity by {prod_res:.3e}")
        if rho_res != 0.0:
            raise ShapeMismatch("rho is not the stored exp(-f) sqrt(det g)")
        if pair_res > roundoff_tol * scale:
            raise ShapeMismatch(f"dual-pair difference deviates from alpha*K by {pair_res:.3e}")
        if mid_res > roundoff_tol * scale:
            raise ShapeMismatch(f"dual-pair midpoint deviates from Levi-Civita by {mid_res:.3e}")
        if residuals["rho_min"] <= 0.0:
            raise ShapeMismatch("density is not strictly positive")
        assert self.C.values.shape == (n, self.dim, self.dim, self.dim)
        return residuals


def build_manifold(grid: Grid, g_values, C_values, f_values, alpha: float = 1.0,
                   validate: bool = True) -> ManifoldData:
    """Assemble ManifoldData from raw (g, C, f) samples on a grid."""
    g = TensorField.create(grid, g_values, symmetries=((0, 1),))
    C = TensorField.create(grid, C_values, symmetries=((0, 1, 2),))
    f = TensorField.create(grid, np.asarray(f_values, dtype=np.float64).reshape(grid.n_nodes))
    g_inv = invert_metric(g)
    sdg = sqrt_det_metric(g)
    rho = TensorField.create(grid, np.exp(-f.values) * sdg.values)
    K = difference_tensor(g_inv, C)
    lc = christoffel_lc(g, grid)
    gamma, gamma_dual = alpha_connection_pair(lc, K, alpha)
    md = ManifoldData(
        grid=grid, g=g, g_inv=g_inv, sqrt_det_g=sdg, C=C, K=K,
        levi_civita=lc, gamma=gamma, gamma_dual=gamma_dual,
        f=f, rho=rho, alpha=float(alpha),
    )
    if validate:
        md.validate()
    return md


# ---------------------------------------------------------------------------
# Synthetic chart presets: smooth periodic (g, C, f) with known closed forms.
# These cover flat, curved C = 0 and fully generic C != 0, f != 0 cases.
# The 2D presets keep g diagonal so the staggered weak form stays second
# order (off-diagonal metric blocks are assembled but only first-order
# accurate; see operators module notes).
# ---------------------------------------------------------------------------

def _flat(theta):
    n, m = theta.shape
    g = np.tile(np.eye(m), (n, 1, 1))
    C = np.zeros((n, m, m, m))
    f = np.zeros(n)
    return g, C, f


def _sin_metric_1d(theta):
    th = theta[:, 0]
    g = (2.0 + np.sin(th)).reshape(-1, 1, 1)
    C = np.zeros((len(th), 1, 1, 1))
    f = np.zeros(len(th))
    return g, C, f


def _curved_1d(theta):
    th = theta[:, 0]
    g = (2.0 + np.sin(th)).reshape(-1, 1, 1)
    C = (0.3 + 0.2 * np.cos(th)).reshape(-1, 1, 1, 1)
    f = 0.4 * np.cos(th)
    return g, C, f


def _polar_like_2d(theta):
    t1 = theta[:, 0]
    n = len(t1)
    r = 1.5 + 0.5 * np.sin(t1)
    g = np.zeros((n, 2, 2))
    g[:, 0, 0] = 1.0
    g[:, 1, 1] = r ** 2
    C = np.zeros((n, 2, 2, 2))
    f = np.zeros(n)
    return g, C, f


def _curved_2d(theta):
    t1, t2 = theta[:, 0], theta[:, 1]
    n = len(t1)
    g = np.zeros((n, 2, 2))
    g[:, 0, 0] = 2.0 + 0.5 * np.sin(t1) * np.cos(t2)
    g[:, 1, 1] = 1.5 + 0.3 * np.cos(t1 + t2)
    C = np.zeros((n, 2, 2, 2))
    C[:, 0, 0, 0] = 0.4 * np.cos(t1)
    C[:, 1, 1, 1] = 0.3 * np.sin(t2)
    f = 0.3 * np.sin(t1) + 0.2 * np.cos(t2)
    return g, C, f


SYNTHETIC_PRESETS = {
    "flat1d": (1, _flat),
    "flat2d": (2, _flat),
    "sin_metric_1d": (1, _sin_metric_1d),
    "curved1d": (1, _curved_1d),
    "polar_like_2d": (2, _polar_like_2d),
    "curved2d": (2, _curved_2d),
}


def synthetic_manifold(preset: str, points, alpha: float = 1.0) -> ManifoldData:
    """Build a preset manifold on a 2*pi-periodic chart with the given points."""
    if preset not in SYNTHETIC_PRESETS:
        raise ShapeMismatch(f"unknown preset {preset!r}; have {sorted(SYNTHETIC_PRESETS)}")
    dim, fn = SYNTHETIC_PRESETS[preset]
    points = tuple(int(p) for p in (points if np.iterable(points) else [points] * dim))
    if len(points) != dim:
        raise ShapeMismatch(f"preset {preset!r} is {dim}-dimensional, got points {points}")
    grid = Grid(points=points, periods=(2.0 * math.pi,) * dim)
    g, C, f = fn(grid.coords())
    return build_manifold(grid, g, C, f, alpha=alpha)
