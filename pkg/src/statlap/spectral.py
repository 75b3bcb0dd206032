"""Generalized eigendecomposition of the weak Laplacian pair (L, B), the
heat semigroup, heat-kernel blocks and the vector diffusion distance.

Eigenvalue convention: the operator is positive semidefinite, eigenvalues
are reported ascending and clamped to zero below CLAMP_TOL, and the heat
semigroup is exp(-t L) in the generalized sense.  A zero bottom eigenvalue
is legitimate (parallel fields, constant-density flat charts) and kept.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse.linalg as spla

from . import accel
from .errors import ConvergenceFailure, FormMismatch, ShapeMismatch, TruncationWarning
from .geometry import ManifoldData
from .operators import DiscreteOperator, InnerProductData

# |eigenvalue| below this is treated as an exact zero mode.
CLAMP_TOL = 1e-10
# Relative gap under which neighbouring eigenvalues count as one degenerate
# cluster (bases inside a cluster are fixed by a seeded canonicalization).
CLUSTER_RTOL = 1e-8
# Default spectral-truncation tolerance for heat evaluations.
TRUNCATION_TOL = 1e-12


@dataclass(frozen=True)
class SpectralDecomposition:
    """B-orthonormal generalized eigenpairs of the weak Laplacian.

    fields has shape (k, n_nodes, dim); eigenvalues are ascending, clamped
    at zero-mode level; full_dim is the total number of degrees of freedom,
    so k == full_dim means the basis is complete and heat evaluations are
    truncation-free.
    """

    eigenvalues: np.ndarray
    fields: np.ndarray
    b_blocks: np.ndarray
    full_dim: int
    bortho_residual: float
    eig_residual: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    @property
    def is_complete(self) -> bool:
        return self.k == self.full_dim

    def coefficients(self, X: np.ndarray) -> np.ndarray:
        """B-inner products of every eigenfield with X, shape (k,)."""
        return np.einsum("qnk,nkl,nl->q", self.fields, self.b_blocks, X)

    def tail_bound(self, t: float) -> float:
        """exp(-lambda_max t) if truncated, else 0 (complete basis)."""
        if self.is_complete:
            return 0.0
        return float(np.exp(-self.eigenvalues[-1] * t))


@dataclass(frozen=True)
class HeatKernelBlock:
    """d x d matrix of the heat kernel between two tangent spaces."""

    x: int
    y: int
    t: float
    matrix: np.ndarray
    tail_bound: float


def _cluster_slices(vals, cluster_rtol):
    scale = max(float(np.abs(vals).max()), 1.0)
    edges = [0]
    for i in range(1, len(vals)):
        if vals[i] - vals[i - 1] > cluster_rtol * scale:
            edges.append(i)
    edges.append(len(vals))
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _canonicalize(vals, vecs, Bmat, seed, cluster_rtol):
    """Fix the basis inside each degenerate cluster deterministically.

    Projects a seeded random block onto the cluster and takes the sign-fixed
    QR rotation; the result is independent of the incoming basis.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    probe = rng.normal(size=(vecs.shape[0], vecs.shape[1]))
    bprobe = Bmat @ probe
    out = vecs.copy()
    for sl in _cluster_slices(vals, cluster_rtol):
        c = sl.stop - sl.start
        block = out[:, sl]
        P = block.T @ bprobe[:, :c]
        Q, R = np.linalg.qr(P)
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        out[:, sl] = block @ (Q * signs[None, :])
    return out


def eigendecompose(L: DiscreteOperator, ipd: InnerProductData, k: int,
                   tol: float = 0.0, seed: int = 0, dense_cutoff: int = 2048,
                   cluster_rtol: float = CLUSTER_RTOL,
                   maxiter: int | None = None, clamp: bool = True) -> SpectralDecomposition:
    """k smallest generalized eigenpairs of (L, B), B-orthonormal.

    Small problems (dof <= dense_cutoff) use a full dense solve, which also
    supports k equal to the full dimension; larger ones use shift-invert
    Lanczos with a seeded start vector.  Degenerate clusters get a
    deterministic, seed-fixed orthonormal basis.

    Raises ConvergenceFailure if the iterative solver hits its cap.
    """
    Lmat = L.matrix if isinstance(L, DiscreteOperator) else L
    Bmat = ipd.b_matrix()
    dof = Lmat.shape[0]
    if not (1 <= k <= dof):
        raise ShapeMismatch(f"need 1 <= k <= {dof}, got {k}")
    if dof <= dense_cutoff:
        vals, vecs = scipy.linalg.eigh(Lmat.toarray(), Bmat.toarray())
        vals, vecs = vals[:k], vecs[:, :k]
    else:
        if k >= dof:
            raise ShapeMismatch("iterative path needs k < matrix dimension")
        diag_ratio = Lmat.diagonal().sum() / Bmat.diagonal().sum()
        sigma = -1e-3 * abs(diag_ratio) - 1e-12
        v0 = np.random.Generator(np.random.Philox(key=int(seed) + 1)).normal(size=dof)
        try:
            vals, vecs = spla.eigsh(Lmat, k=k, M=Bmat, sigma=sigma, which="LM",
                                    v0=v0, tol=tol, maxiter=maxiter)
        except spla.ArpackNoConvergence as exc:
            got = len(exc.eigenvalues)
            raise ConvergenceFailure(
                f"eigensolver converged only {got}/{k} pairs", residual=got) from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
    vecs = _canonicalize(vals, vecs, Bmat, seed, cluster_rtol)
    vals = vals.copy()
    if clamp:
        vals[np.abs(vals) < CLAMP_TOL] = 0.0

    gram = vecs.T @ (Bmat @ vecs)
    bortho = float(np.abs(gram - np.eye(k)).max())
    resid_vec = Lmat @ vecs - (Bmat @ vecs) * vals[None, :]
    scale = max(float(np.abs(vals).max()), 1.0)
    eig_res = float(
        (np.linalg.norm(resid_vec, axis=0)
         / (scale * np.linalg.norm(Bmat @ vecs, axis=0))).max())

    n = ipd.n_nodes
    m = ipd.dim
    fields = np.ascontiguousarray(vecs.T.reshape(k, n, m))
    return SpectralDecomposition(
        eigenvalues=vals, fields=fields, b_blocks=ipd.b_blocks,
        full_dim=dof, bortho_residual=bortho, eig_residual=eig_res)


def decomposition_for_time(L, ipd, t, trunc_tol: float = TRUNCATION_TOL,
                           seed: int = 0, dense_cutoff: int = 2048,
                           k_start: int = 32) -> SpectralDecomposition:
    """Decomposition truncated by the heat-tail rule.

    The rank grows until exp(-lambda_k t) < trunc_tol or the full dimension
    is reached; with the dense path this means computing everything once and
    trimming (degenerate clusters are never split).
    """
    Lmat = L.matrix if isinstance(L, DiscreteOperator) else L
    dof = Lmat.shape[0]
    if dof <= dense_cutoff:
        full = eigendecompose(L, ipd, dof, seed=seed, dense_cutoff=dense_cutoff)
        if t <= 0:
            return full
        keep = int(np.searchsorted(-np.exp(-full.eigenvalues * t), -trunc_tol))
        keep = max(keep, 1)
        if keep >= dof:
            return full
        keep = _close_cluster(full.eigenvalues, keep)
        if keep >= dof:
            return full
        return SpectralDecomposition(
            eigenvalues=full.eigenvalues[:keep], fields=full.fields[:keep],
            b_blocks=full.b_blocks, full_dim=dof,
            bortho_residual=full.bortho_residual, eig_residual=full.eig_residual)
    k = min(k_start, dof - 1)
    while True:
        dec = eigendecompose(L, ipd, k, seed=seed, dense_cutoff=dense_cutoff)
        if t > 0 and np.exp(-dec.eigenvalues[-1] * t) < trunc_tol:
            return dec
        if k >= dof - 1:
            warnings.warn(
                f"truncation tail {dec.tail_bound(t):.3e} exceeds {trunc_tol:.1e} "
                f"at the iterative-solver rank cap", TruncationWarning)
            return dec
        k = min(2 * k, dof - 1)


def _close_cluster(vals, k, cluster_rtol=CLUSTER_RTOL):
    """Smallest k' >= k that does not split a degenerate cluster."""
    scale = max(float(np.abs(vals).max()), 1.0)
    while k < len(vals) and vals[k] - vals[k - 1] <= cluster_rtol * scale:
        k += 1
    return k


def _check_tail(spec_dec, t, trunc_tol):
    tail = spec_dec.tail_bound(t)
    if tail > trunc_tol:
        warnings.warn(
            f"heat evaluation truncated with tail bound {tail:.3e} > {trunc_tol:.1e}",
            TruncationWarning)
    return tail


def heat_apply(spec_dec: SpectralDecomposition, t: float, X: np.ndarray,
               trunc_tol: float = TRUNCATION_TOL) -> np.ndarray:
    """Apply the heat semigroup at time t >= 0 to a vector field (N, m)."""
    if t < 0:
        raise ShapeMismatch("heat time must be nonnegative")
    _check_tail(spec_dec, t, trunc_tol)
    coeff = spec_dec.coefficients(X) * np.exp(-spec_dec.eigenvalues * t)
    return np.einsum("q,qnk->nk", coeff, spec_dec.fields)


def heat_kernel_block(spec_dec: SpectralDecomposition, md: ManifoldData, t: float,
                      x: int, y: int, trunc_tol: float = TRUNCATION_TOL) -> HeatKernelBlock:
    """Heat-kernel block p_t(x, y): a d x d matrix mapping tangent vectors
    at node y to tangent vectors at node x, built from the eigenfield
    expansion with the index lowered by g at y."""
    if t <= 0:
        raise ShapeMismatch("kernel blocks need t > 0")
    tail = _check_tail(spec_dec, t, trunc_tol)
    w = np.exp(-spec_dec.eigenvalues * t)
    fx = spec_dec.fields[:, x, :]
    fy_low = spec_dec.fields[:, y, :] @ md.g.values[y]
    matrix = np.einsum("q,qk,ql->kl", w, fx, fy_low)
    return HeatKernelBlock(x=int(x), y=int(y), t=float(t), matrix=matrix, tail_bound=tail)


def _hs_norm_sq(md, x, y, block):
    """Squared Hilbert-Schmidt norm of a block T_yM -> T_xM, g-weighted."""
    return float(np.einsum("kl,ka,lb,ab->", md.g.values[x], block, block, md.g_inv.values[y]))


def eigenfield_gram_at_nodes(spec_dec: SpectralDecomposition, md: ManifoldData) -> np.ndarray:
    """S[n, p, q] = g_n(X_p, X_q) for all nodes, shape (N, k, k)."""
    return np.einsum("pnk,nkl,qnl->npq", spec_dec.fields, md.g.values, spec_dec.fields)


def vector_diffusion_distance(spec_dec: SpectralDecomposition, md: ManifoldData,
                              t: float, x: int, y: int,
                              form_tol: float = 1e-8) -> float:
    """Diffusion distance between nodes from heat-kernel blocks.

    Evaluates both the Hilbert-Schmidt trace combination
        ||p_t(x,x)||^2 + ||p_t(y,y)||^2 - 2 ||p_t(x,y)||^2
    and the equivalent double sum over eigenpairs
        sum_{p,q} e^{-(l_p+l_q)t} [g_x(X_p,X_q) - g_y(X_p,X_q)]^2
    and insists they agree; a gap beyond form_tol means an implementation
    bug and raises FormMismatch.  Returns the square root of the clamped
    combination.
    """
    if t <= 0:
        raise ShapeMismatch("diffusion distance needs t > 0")
    if x == y:
        return 0.0
    pxx = heat_kernel_block(spec_dec, md, t, x, x).matrix
    pyy = heat_kernel_block(spec_dec, md, t, y, y).matrix
    pxy = heat_kernel_block(spec_dec, md, t, x, y).matrix
    trace_form = (_hs_norm_sq(md, x, x, pxx) + _hs_norm_sq(md, y, y, pyy)
                  - 2.0 * _hs_norm_sq(md, x, y, pxy))

    w = np.exp(-spec_dec.eigenvalues * t)
    fx = spec_dec.fields[:, x, :]
    fy = spec_dec.fields[:, y, :]
    sx = fx @ md.g.values[x] @ fx.T
    sy = fy @ md.g.values[y] @ fy.T
    diff = (sx - sy) * w[:, None] * w[None, :]
    double_sum = float(np.einsum("pq,pq->", diff, sx - sy))
    # equivalently sum e^{-(l_p+l_q)t} (sx - sy)_{pq}^2

    scale = max(abs(trace_form), abs(double_sum), 1.0)
    if abs(trace_form - double_sum) > form_tol * scale:
        raise FormMismatch(
            f"trace form {trace_form:.6e} and double-sum form {double_sum:.6e} disagree")
    return float(np.sqrt(max(double_sum, 0.0)))


def vdd_matrix(spec_dec: SpectralDecomposition, md: ManifoldData, t: float,
               use_numba=None) -> np.ndarray:
    """All-pairs diffusion-distance matrix at time t, shape (N, N).

    Each node embeds as the exponentially weighted eigenfield Gram matrix;
    distances are Frobenius distances between embeddings, which reproduces
    the double-sum form pairwise.
    """
    if t <= 0:
        raise ShapeMismatch("diffusion distance needs t > 0")
    S = eigenfield_gram_at_nodes(spec_dec, md)
    w = np.exp(-0.5 * spec_dec.eigenvalues * t)
    phi = (S * w[None, :, None] * w[None, None, :]).reshape(S.shape[0], -1)
    sq = accel.pairwise_sqdist(phi, use_numba=use_numba)
    return np.sqrt(np.maximum(sq, 0.0))
