"""Discrete covariant derivative, weighted divergence, adjoint and the
vector Laplacian in weak (Galerkin, exactly symmetric) and strong (stencil)
forms.

Flattening conventions (fixed, used by every sparse operator here):
  * vector fields:      flat[n*m + k]            (node-major, then component)
  * (1,1)-tensor fields: flat[n*m*m + i*m + k]   (node-major, then (i, k))
where i is the derivative slot and k the component slot.

Two difference schemes coexist on purpose:
  * the exposed pointwise covariant derivative and every strong-form stencil
    use second-order central differences at the nodes;
  * the weak pipeline (mass matrices, assembled Laplacian, weak adjoint) uses
    forward differences whose values live at axis midpoints, with the mass
    coefficients averaged onto those midpoints.  This makes the assembled
    operator second-order consistent with the strong stencil while its flat
    spectrum is exactly (4/h^2) sin^2(pi k / N) per axis.

The weak operator is the authoritative one: it is symmetric by construction
(and bit-exactly after symmetrized assembly) and positive semidefinite, which
is what the spectral layer needs.  The strong stencil exists as an
independent cross-check and cheap pointwise apply.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import accel
from .errors import InternalInconsistency, ShapeMismatch
from .geometry import ManifoldData

# Relative floor below which the PD check on mass blocks fails.
MASS_PD_FLOOR = 1e-14


@dataclass(frozen=True)
class DiscreteOperator:
    """Sparse matrix with a description tag.

    Layouts follow the module conventions above; rows/cols are documented by
    the tag of the producing function.  All stored entries are finite.
    """

    matrix: sp.csr_matrix
    tag: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix.data)):
            raise ShapeMismatch(f"operator {self.tag!r} has non-finite entries")

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, flat_values: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ flat_values)

    def to_coo_triples(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


@dataclass(frozen=True)
class InnerProductData:
    """Discrete rho-weighted L2 structure.

    b_blocks[n] = w * rho(n) * g(n) is the vector-field mass block at node n.
    m_blocks[n] realizes w * rho * (g^{-1} (x) g) on (1,1)-fields with the
    (i, k) slot layout; its coefficients are averaged onto the forward-
    difference midpoints (axis midpoint for the diagonal (i, i) slots, cell
    corner for mixed (i, j) slots) so the weak Laplacian stays second order.
    Both are symmetric positive definite.
    """

    b_blocks: np.ndarray  # (N, m, m)
    m_blocks: np.ndarray  # (N, m^2, m^2)

    @property
    def n_nodes(self):
        return self.b_blocks.shape[0]

    @property
    def dim(self):
        return self.b_blocks.shape[1]

    def b_matrix(self) -> sp.csr_matrix:
        n, m = self.n_nodes, self.dim
        return sp.bsr_matrix(
            (self.b_blocks, np.arange(n), np.arange(n + 1)), shape=(n * m, n * m)
        ).tocsr()

    def m_matrix(self) -> sp.csr_matrix:
        n = self.n_nodes
        b = self.m_blocks.shape[1]
        return sp.bsr_matrix(
            (self.m_blocks, np.arange(n), np.arange(n + 1)), shape=(n * b, n * b)
        ).tocsr()

    def vector_inner(self, X: np.ndarray, Y: np.ndarray) -> float:
        """<X, Y>_B with X, Y of shape (N, m)."""
        return float(np.einsum("nk,nkl,nl->", X, self.b_blocks, Y))

    def mixed_inner(self, W: np.ndarray, V: np.ndarray) -> float:
        """<W, V>_M with W, V of shape (N, m, m) in (i, k) layout."""
        n, m = self.n_nodes, self.dim
        wf = W.reshape(n, m * m)
        vf = V.reshape(n, m * m)
        return float(np.einsum("na,nab,nb->", wf, self.m_blocks, vf))

    def b_solve(self, Y: np.ndarray) -> np.ndarray:
        """Solve B Z = Y per node, Y of shape (N, m)."""
        return np.linalg.solve(self.b_blocks, Y[..., None])[..., 0]


def inner_product_data(md: ManifoldData) -> InnerProductData:
    grid = md.grid
    n, m = grid.n_nodes, grid.dim
    w = grid.weight
    b_blocks = w * md.rho.values[:, None, None] * md.g.values
    c4 = np.einsum("n,nij,nkl->nijkl", md.rho.values, md.g_inv.values, md.g.values)
    blocks = np.empty((n, m, m, m, m))
    for i in range(m):
        for j in range(i, m):
            cij = np.ascontiguousarray(c4[:, i, j])
            si = grid.shift(cij, i, +1)
            if i == j:
                avg = 0.5 * (cij + si)
            else:
                sj = grid.shift(cij, j, +1)
                sij = grid.shift(si, j, +1)
                avg = 0.25 * (cij + si + sj + sij)
            blocks[:, i, j] = avg
            if j > i:
                # mirror keeps the (i,k)<->(j,l) block symmetry bitwise
                blocks[:, j, i] = np.transpose(avg, (0, 2, 1))
    m_blocks = (w * np.transpose(blocks, (0, 1, 3, 2, 4))).reshape(n, m * m, m * m)
    _check_pd(b_blocks, "B")
    _check_pd(m_blocks, "M")
    return InnerProductData(b_blocks=b_blocks, m_blocks=m_blocks)


def _check_pd(blocks, name):
    eigs = np.linalg.eigvalsh(blocks)
    lo = eigs[:, 0].min()
    scale = np.abs(eigs).max()
    if lo <= MASS_PD_FLOOR * scale:
        raise ShapeMismatch(f"mass matrix {name} is not positive definite (min eig {lo:.3e})")


# ---------------------------------------------------------------------------
# covariant derivative operators
# ---------------------------------------------------------------------------


def _connection(md, which):
    if which == "primal":
        return md.gamma.coeffs
    if which == "dual":
        return md.gamma_dual.coeffs
    if which == "levi_civita":
        return md.levi_civita.coeffs
    raise ShapeMismatch(f"unknown connection {which!r}")


def covariant_derivative(md: ManifoldData, which: str = "primal",
                         scheme: str = "central") -> DiscreteOperator:
    """Sparse operator taking a vector field to its (1,1) covariant derivative.

    (nabla_i X)^k = d_i X^k + G^k_{il} X^l with the primal or dual connection.
    scheme "central" evaluates at the nodes (second order); "staggered" uses
    forward differences with the connection term averaged over the two cell
    ends, which is the form used inside the weak Laplacian.
    """
    grid = md.grid
    n, m = grid.n_nodes, grid.dim
    gam = _connection(md, which)
    h = np.asarray(grid.spacing)
    nid = np.arange(n)
    k_ar = np.arange(m)
    rows_base = nid[:, None, None] * (m * m) + k_ar[None, :, None] * m + k_ar[None, None, :]
    # rows_base[n, i, k]
    plus = np.stack([grid.neighbor_index(a, +1) for a in range(m)], axis=1)   # (n, m)
    minus = np.stack([grid.neighbor_index(a, -1) for a in range(m)], axis=1)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r.ravel())
        cols.append(np.broadcast_to(c, r.shape).ravel())
        vals.append(np.broadcast_to(v, r.shape).ravel())

    # connection rows/cols: row (n, i, k) couples to X^l at a node, (n,i,k,l)
    rows_conn = np.broadcast_to(
        nid[:, None, None, None] * (m * m) + k_ar[None, :, None, None] * m
        + k_ar[None, None, :, None], (n, m, m, m))
    cols_here = np.broadcast_to(
        nid[:, None, None, None] * m + k_ar[None, None, None, :], (n, m, m, m))
    gam_ikl = np.transpose(gam, (0, 2, 1, 3))  # [n, i, k, l] = G^k_{il}

    if scheme == "central":
        inv2h = 1.0 / (2.0 * h)
        add(rows_base, plus[:, :, None] * m + k_ar[None, None, :], inv2h[None, :, None])
        add(rows_base, minus[:, :, None] * m + k_ar[None, None, :], -inv2h[None, :, None])
        add(rows_conn, cols_here, gam_ikl)
    elif scheme == "staggered":
        invh = 1.0 / h
        add(rows_base, plus[:, :, None] * m + k_ar[None, None, :], invh[None, :, None])
        add(rows_base, nid[:, None, None] * m + k_ar[None, None, :], -invh[None, :, None])
        add(rows_conn, cols_here, 0.5 * gam_ikl)
        gam_plus = np.stack([gam_ikl[plus[:, i], i] for i in range(m)], axis=1)  # (n, i, k, l)
        cols_plus = np.broadcast_to(plus[:, :, None, None] * m + k_ar[None, None, None, :],
                                    (n, m, m, m))
        add(rows_conn, cols_plus, 0.5 * gam_plus)
    else:
        raise ShapeMismatch(f"unknown scheme {scheme!r}")

    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * m * m, n * m),
    ).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return DiscreteOperator(matrix=mat, tag=f"covariant-derivative-{which}-{scheme}")


def covariant_derivative_apply(md: ManifoldData, X: np.ndarray, which="primal") -> np.ndarray:
    """Central-difference covariant derivative as arrays, (N, m) -> (N, m, m)."""
    grid = md.grid
    gam = _connection(md, which)
    dX = np.stack([grid.diff_central(X, a) for a in range(grid.dim)], axis=1)  # (n, i, k)
    return dX + np.einsum("nkil,nl->nik", gam, X)


# ---------------------------------------------------------------------------
# weighted divergence and friends
# ---------------------------------------------------------------------------


def divergence_f(md: ManifoldData, X: np.ndarray) -> np.ndarray:
    """Weighted divergence (1/rho) d_i(rho X^i), central differences.

    The discrete operator is the exact negative adjoint of the canonical
    pairing with d under the rho-weighted node quadrature, so its weighted
    integral vanishes to machine precision.
    """
    grid = md.grid
    rho = md.rho.values
    acc = np.zeros(grid.n_nodes)
    for a in range(grid.dim):
        acc += grid.diff_central(rho * X[:, a], a)
    return acc / rho


def divergence_riemannian(md: ManifoldData, X: np.ndarray) -> np.ndarray:
    """Unweighted divergence (1/sqrt det g) d_i(sqrt det g X^i)."""
    grid = md.grid
    s = md.sqrt_det_g.values
    acc = np.zeros(grid.n_nodes)
    for a in range(grid.dim):
        acc += grid.diff_central(s * X[:, a], a)
    return acc / s


def directional_derivative(grid, scalar: np.ndarray, X: np.ndarray) -> np.ndarray:
    """X^i d_i(scalar), central differences."""
    acc = np.zeros(grid.n_nodes)
    for a in range(grid.dim):
        acc += X[:, a] * grid.diff_central(scalar, a)
    return acc


def weighted_integral(md: ManifoldData, scalar: np.ndarray) -> float:
    """Node quadrature of a scalar against the density."""
    return float(np.sum(scalar * md.rho.values) * md.grid.weight)


# ---------------------------------------------------------------------------
# adjoint of the covariant derivative
# ---------------------------------------------------------------------------


def apply_adjoint(md: ManifoldData, W: np.ndarray, ipd: InnerProductData | None = None,
                  method: str = "weak") -> np.ndarray:
    """Adjoint of the covariant derivative applied to a (1,1)-field (N, m, m).

    method "weak" evaluates B^{-1} D^T M W with the same staggered derivative
    and mass blocks as the assembled Laplacian; the pairing
    <DX, W>_M = <X, adj W>_B then holds to roundoff.  method "strong"
    evaluates the pointwise formula  -dual_cov_deriv(V) - div_f drift  with
    V^{j,k} = g^{ij} W_i^k, whose pairing residual vanishes at second order
    under grid refinement.
    """
    grid = md.grid
    n, m = grid.n_nodes, grid.dim
    if W.shape != (n, m, m):
        raise ShapeMismatch(f"expected (1,1)-field of shape {(n, m, m)}, got {W.shape}")
    if ipd is None:
        ipd = inner_product_data(md)
    if method == "weak":
        dop = covariant_derivative(md, "primal", scheme="staggered")
        rhs = dop.matrix.T @ (ipd.m_matrix() @ W.reshape(n * m * m))
        return ipd.b_solve(np.asarray(rhs).reshape(n, m))
    if method == "strong":
        V = np.einsum("nij,nik->njk", md.g_inv.values, W)
        rho = md.rho.values
        out = np.zeros((n, m))
        gam_d = md.gamma_dual.coeffs
        for j in range(m):
            out += grid.diff_central(V[:, j, :], j)
            out += (grid.diff_central(rho, j) / rho)[:, None] * V[:, j, :]
        out += np.einsum("nkjl,njl->nk", gam_d, V)
        return -out
    raise ShapeMismatch(f"unknown adjoint method {method!r}")


# ---------------------------------------------------------------------------
# the vector Laplacian
# ---------------------------------------------------------------------------


def assemble_weak_laplacian(md: ManifoldData, ipd: InnerProductData | None = None) -> DiscreteOperator:
    """Assemble L = D^T M D, symmetrized so L = L^T holds bit-exactly.

    The generalized eigenproblem is (L, B) with B from inner_product_data;
    L is positive semidefinite by construction.
    """
    if ipd is None:
        ipd = inner_product_data(md)
    dop = covariant_derivative(md, "primal", scheme="staggered")
    raw = dop.matrix.T @ (ipd.m_matrix() @ dop.matrix)
    sym = (raw + raw.T) * 0.5
    sym = sym.tocsr()
    sym.sum_duplicates()
    sym.sort_indices()
    return DiscreteOperator(matrix=sym, tag="weak-laplacian")


def _strong_form_a(md, X, use_numba=None):
    grid = md.grid
    U = covariant_derivative_apply(md, X, which="primal")      # (n, i, k)
    V = np.einsum("nij,nik->njk", md.g_inv.values, U)          # (n, j, k)
    rho = md.rho.values
    drift = np.stack(
        [grid.diff_central(rho, j) / rho for j in range(grid.dim)], axis=1)
    idx_plus = np.stack([grid.neighbor_index(a, +1) for a in range(grid.dim)], axis=1)
    idx_minus = np.stack([grid.neighbor_index(a, -1) for a in range(grid.dim)], axis=1)
    inv2h = 1.0 / (2.0 * np.asarray(grid.spacing))
    return accel.strong_apply_core(V, md.gamma_dual.coeffs, drift,
                                   idx_plus, idx_minus, inv2h, use_numba=use_numba)


def _strong_form_c(md, X):
    # trace-of-mixed-Hessian form with the explicit half-difference-tensor
    # and metric-gradient-of-f terms; algebraically equal to form A in the
    # continuum, discretely apart by O(h^2)
    grid = md.grid
    m = grid.dim
    ginv = md.g_inv.values
    U = covariant_derivative_apply(md, X, which="primal")
    gam_d = md.gamma_dual.coeffs
    dU = np.stack([grid.diff_central(U, j) for j in range(m)], axis=1)  # (n, j, i, k)
    hess = dU + np.einsum("nkjl,nil->njik", gam_d, U) \
        - np.einsum("naij,nak->njik", gam_d, U)
    tr_hess = np.einsum("nij,njik->nk", ginv, hess)
    k_pair = md.gamma_dual.coeffs - md.gamma.coeffs
    k_hat = np.einsum("nij,naij->na", ginv, k_pair)
    df = np.stack([grid.diff_central(md.f.values, j) for j in range(m)], axis=1)
    return (-tr_hess
            - 0.5 * np.einsum("na,nak->nk", k_hat, U)
            + np.einsum("nij,nj,nik->nk", ginv, df, U))


def apply_strong_laplacian(md: ManifoldData, X: np.ndarray, check: bool = True,
                           consistency_rtol: float | None = None,
                           use_numba=None) -> np.ndarray:
    """Pointwise vector Laplacian via central-difference stencils.

    Evaluates the divergence-style form
        -sum_j [ dual_cov_deriv_j(V_j) + div_f(e_j) V_j ],   V_j = g^{ij} nabla_i X,
    and, when check is true, the trace-of-Hessian form with the explicit
    -(1/2) K^i nabla_i X  and  +g^{ij} d_j f nabla_i X  terms.  The two are
    algebraically identical, so a disagreement beyond the O(h^2) budget means
    a formula-transcription bug and raises InternalInconsistency.

    The budget presumes fields that extend smoothly across the periodic
    seam; on charts wrapping non-periodic closed forms the gap is dominated
    by the seam, so pass check=False (or a custom tolerance) there.
    """
    grid = md.grid
    if X.shape != (grid.n_nodes, grid.dim):
        raise ShapeMismatch(f"expected vector field of shape {(grid.n_nodes, grid.dim)}")
    out = _strong_form_a(md, X, use_numba=use_numba)
    if check:
        alt = _strong_form_c(md, X)
        scale = max(float(np.abs(out).max()), float(np.abs(alt).max()), 1e-30)
        rel = float(np.abs(out - alt).max()) / scale
        if consistency_rtol is None:
            # a transcription bug shows up as an O(1) gap independent of h;
            # honest discretization gaps scale like (field roughness) * h^2
            h_max = max(grid.spacing)
            consistency_rtol = min(0.5, max(1e-9, 1000.0 * h_max * h_max))
        if rel > consistency_rtol:
            raise InternalInconsistency(
                f"strong-form cross-check failed: relative gap {rel:.3e} "
                f"exceeds {consistency_rtol:.3e}")
    return out


def connection_laplacian_riemannian(md: ManifoldData, X: np.ndarray) -> np.ndarray:
    """Independent rough-Laplacian stencil built from Levi-Civita alone.

    -g^{ij} (nabla^g_j nabla^g_i X - LC^a_{ij} nabla^g_a X); with zero cubic
    tensor and constant density the strong vector Laplacian reduces to this
    at second order.
    """
    grid = md.grid
    m = grid.dim
    lc = md.levi_civita.coeffs
    ginv = md.g_inv.values
    dX = np.stack([grid.diff_central(X, a) for a in range(m)], axis=1)
    U = dX + np.einsum("nkil,nl->nik", lc, X)
    dU = np.stack([grid.diff_central(U, j) for j in range(m)], axis=1)
    hess = dU + np.einsum("nkjl,nil->njik", lc, U) - np.einsum("naij,nak->njik", lc, U)
    return -np.einsum("nij,njik->nk", ginv, hess)


