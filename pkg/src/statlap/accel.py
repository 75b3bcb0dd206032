"""Hot numeric kernels: numba-jitted versions with pure-numpy fallbacks.

The jitted path is used when numba imports cleanly and the environment
variable STATLAP_NO_NUMBA is unset/empty; both paths produce the same values
up to summation-order roundoff. benchmarks/bench_accel.py compares them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False


def numba_active() -> bool:
    return _HAVE_NUMBA and not os.environ.get("STATLAP_NO_NUMBA")


def set_threads(n: int) -> None:
    """Cap numba worker threads; results never depend on the thread count."""
    if _HAVE_NUMBA and n > 0:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# fused stencil for the pointwise vector Laplacian:
#   out[n,k] = -sum_j [ (V[ip,j,k]-V[im,j,k])*inv2h_j
#                       + Gd[n,k,j,l] V[n,j,l] + drift[n,j] V[n,j,k] ]
# ---------------------------------------------------------------------------


def _strong_core_numpy(V, Gd, drift, idx_plus, idx_minus, inv2h):
    n_nodes, m, _ = V.shape
    out = np.zeros((n_nodes, m))
    for j in range(m):
        Vj = V[:, j, :]
        out += (Vj[idx_plus[:, j]] - Vj[idx_minus[:, j]]) * inv2h[j]
    out += np.einsum("nkjl,njl->nk", Gd, V)
    out += np.einsum("nj,njk->nk", drift, V)
    return -out


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _strong_core_numba(V, Gd, drift, idx_plus, idx_minus, inv2h):  # pragma: no cover
        n_nodes, m, _ = V.shape
        out = np.empty((n_nodes, m))
        for n in prange(n_nodes):
            for k in range(m):
                acc = 0.0
                for j in range(m):
                    ip = idx_plus[n, j]
                    im = idx_minus[n, j]
                    acc += (V[ip, j, k] - V[im, j, k]) * inv2h[j]
                    acc += drift[n, j] * V[n, j, k]
                    for l in range(m):
                        acc += Gd[n, k, j, l] * V[n, j, l]
                out[n, k] = -acc
        return out


def strong_apply_core(V, Gd, drift, idx_plus, idx_minus, inv2h, use_numba=None):
    """Dispatch the fused Laplacian stencil to the jitted or numpy path."""
    args = (
        np.ascontiguousarray(V),
        np.ascontiguousarray(Gd),
        np.ascontiguousarray(drift),
        np.ascontiguousarray(idx_plus),
        np.ascontiguousarray(idx_minus),
        np.ascontiguousarray(inv2h),
    )
    if use_numba is None:
        use_numba = numba_active()
    if use_numba and _HAVE_NUMBA:
        return _strong_core_numba(*args)
    return _strong_core_numpy(*args)


# ---------------------------------------------------------------------------
# all-pairs squared distances between embedding rows: the inner loop of the
# diffusion-distance matrix. Exact zero diagonal, bitwise-symmetric output.
# ---------------------------------------------------------------------------


def _pairwise_sqdist_numpy(phi, target_elems=2 ** 24):
    n, f = phi.shape
    out = np.zeros((n, n))
    # block both pair dimensions so the difference tensor stays bounded
    block = max(1, min(n, int(np.sqrt(target_elems / max(f, 1)))))
    for r0 in range(0, n, block):
        r1 = min(r0 + block, n)
        for c0 in range(r0, n, block):
            c1 = min(c0 + block, n)
            diff = phi[r0:r1, None, :] - phi[None, c0:c1, :]
            sq = np.einsum("ijk,ijk->ij", diff, diff)
            out[r0:r1, c0:c1] = sq
            out[c0:c1, r0:r1] = sq.T
    np.fill_diagonal(out, 0.0)
    return out


if _HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _pairwise_sqdist_numba(phi):  # pragma: no cover
        n, f = phi.shape
        out = np.zeros((n, n))
        for i in prange(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(f):
                    d = phi[i, k] - phi[j, k]
                    acc += d * d
                out[i, j] = acc
                out[j, i] = acc
        return out


def pairwise_sqdist(phi, use_numba=None):
    """Squared Euclidean distances between all row pairs of phi."""
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if use_numba is None:
        use_numba = numba_active()
    if use_numba and _HAVE_NUMBA:
        return _pairwise_sqdist_numba(phi)
    return _pairwise_sqdist_numpy(phi)
