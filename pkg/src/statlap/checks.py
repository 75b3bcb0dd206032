"""The runnable invariant suite: every operator/spectral/kernel identity is
evaluated numerically and reported as (name, residual, tolerance, pass).

Checks come in two kinds.  Exact checks compare a residual against a fixed
tolerance.  Order checks measure the same residual on the configured grid
and on a once-refined grid (spacing halved) and require the ratio to be
4.0 within 25 percent, the signature of second-order convergence; when
refinement is unavailable (fields loaded from files) they degrade to
informational entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormMismatch, StatlapError
from .geometry import ManifoldData
from .kernels import (
    kernel_gram,
    kernel_value,
    posterior_field,
    uniform_prior,
)
from .operators import (
    apply_adjoint,
    apply_strong_laplacian,
    assemble_weak_laplacian,
    connection_laplacian_riemannian,
    covariant_derivative,
    directional_derivative,
    divergence_f,
    divergence_riemannian,
    inner_product_data,
    weighted_integral,
)
from .spectral import (
    eigendecompose,
    heat_kernel_block,
    vdd_matrix,
    vector_diffusion_distance,
)

RATIO_TARGET = 4.0
RATIO_SLACK = 1.0  # 25 percent


@dataclass
class CheckResult:
    name: str
    residual: float
    tolerance: float | None
    passed: bool
    ratio: float | None = None
    detail: str = ""

    def to_dict(self):
        return {
            "name": self.name,
            "residual": float(self.residual),
            "tolerance": None if self.tolerance is None else float(self.tolerance),
            "ratio": None if self.ratio is None else float(self.ratio),
            "passed": bool(self.passed),
            "detail": self.detail,
        }


def probe_vector_field(grid, seed=0):
    """Smooth periodic low-frequency vector field adapted to the chart."""
    rng = np.random.default_rng(seed)
    amps = rng.normal(size=(grid.dim, grid.dim, 2, 2))
    th = grid.coords()
    out = np.zeros((grid.n_nodes, grid.dim))
    for k in range(grid.dim):
        acc = np.full(grid.n_nodes, amps[k, 0, 0, 0])
        for a in range(grid.dim):
            phase = 2 * np.pi * (th[:, a] - grid.origin[a]) / grid.periods[a]
            for freq in (1, 2):
                acc = acc + amps[k, a, freq - 1, 0] * np.sin(freq * phase) \
                    + amps[k, a, freq - 1, 1] * np.cos(freq * phase)
        out[:, k] = acc
    return out


def probe_scalar_field(grid, seed=1):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(grid.dim, 2))
    th = grid.coords()
    out = np.full(grid.n_nodes, 0.3)
    for ax in range(grid.dim):
        phase = 2 * np.pi * (th[:, ax] - grid.origin[ax]) / grid.periods[ax]
        out = out + a[ax, 0] * np.sin(phase) + a[ax, 1] * np.cos(2 * phase)
    return out


def _ratio_check(name, residual_fn, source, tolerance=None, detail=""):
    r_coarse = residual_fn(source.build(1))
    if not source.refinable:
        return CheckResult(name=name, residual=r_coarse, tolerance=tolerance,
                           passed=True, detail=detail + " (no refinement available)")
    r_fine = residual_fn(source.build(2))
    if max(r_coarse, r_fine) < 1e-12:
        return CheckResult(name=name, residual=r_fine, tolerance=tolerance,
                           passed=True, detail=detail + " (identically satisfied)")
    ratio = r_coarse / r_fine if r_fine > 0 else np.inf
    if source.smooth:
        passed = abs(ratio - RATIO_TARGET) <= RATIO_SLACK
        return CheckResult(name=name, residual=r_fine, tolerance=tolerance,
                           passed=passed, ratio=ratio, detail=detail)
    # charts wrapping non-periodic closed forms carry a seam; the order is
    # reported but not enforced there
    return CheckResult(name=name, residual=r_fine, tolerance=tolerance,
                       passed=True, ratio=ratio,
                       detail=detail + " (seamed chart: ratio informational)")


@dataclass
class ManifoldSource:
    """Builds the configured manifold, optionally at a refined resolution.

    smooth marks charts whose (g, C, f) extend periodically without a seam;
    convergence-order checks are enforced only there.
    """

    builder: object  # callable factor -> ManifoldData
    refinable: bool = True
    model: object = None
    smooth: bool = True
    _cache: dict = field(default_factory=dict)

    def build(self, factor=1) -> ManifoldData:
        if factor not in self._cache:
            self._cache[factor] = self.builder(factor)
        return self._cache[factor]


def operator_checks(source: ManifoldSource, seed=0, n_pairs=20):
    md = source.build(1)
    grid = md.grid
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    checks = []

    inv = md.validate()
    checks.append(CheckResult(
        name="manifold_construction_invariants",
        residual=max(inv["metric_inverse"], inv["pair_difference"], inv["pair_midpoint"]),
        tolerance=1e-12, passed=True,
        detail="metric inverse, pair difference and midpoint residuals"))

    diff = (L.matrix - L.matrix.T).tocsr()
    sym_res = 0.0 if diff.nnz == 0 else float(np.abs(diff.data).max())
    checks.append(CheckResult(
        name="weighted_l2_symmetry_bitexact", residual=sym_res, tolerance=0.0,
        passed=sym_res == 0.0, detail="max |L - L^T| over all entries"))

    bottom = eigendecompose(L, ipd, 1, seed=seed, clamp=False)
    lam0_raw = float(bottom.eigenvalues[0])
    checks.append(CheckResult(
        name="laplacian_psd_margin", residual=lam0_raw, tolerance=-1e-10,
        passed=lam0_raw >= -1e-10, detail="smallest raw generalized eigenvalue"))

    rng = np.random.default_rng(seed + 1)
    dop = covariant_derivative(md, "primal", scheme="staggered")
    worst = 0.0
    n, m = grid.n_nodes, grid.dim
    for _ in range(n_pairs):
        X = rng.normal(size=(n, m))
        W = rng.normal(size=(n, m, m))
        DX = dop.apply(X.reshape(-1)).reshape(n, m, m)
        lhs = ipd.mixed_inner(DX, W)
        rhs = ipd.vector_inner(X, apply_adjoint(md, W, ipd, method="weak"))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    checks.append(CheckResult(
        name="adjoint_pairing_weak", residual=worst, tolerance=1e-10,
        passed=worst <= 1e-10,
        detail=f"max relative pairing residual over {n_pairs} random field pairs"))

    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for _ in range(3):
        X = rng.normal(size=(n, m))
        total = abs(weighted_integral(md, divergence_f(md, X)))
        worst = max(worst, total / max(1.0, float(np.abs(X).max())))
    checks.append(CheckResult(
        name="total_weighted_divergence_vanishes", residual=worst, tolerance=1e-12,
        passed=worst <= 1e-12, detail="|integral of div_f(X) rho| for random X"))

    def drift_residual(md_):
        X = probe_vector_field(md_.grid, seed=seed + 3)
        lhs = divergence_f(md_, X)
        rhs = divergence_riemannian(md_, X) - directional_derivative(md_.grid, md_.f.values, X)
        return float(np.abs(lhs - rhs).max())

    checks.append(_ratio_check(
        "divergence_drift_identity_order", drift_residual, source,
        detail="div_f(X) - div(X) + Xf residual, second-order"))

    def product_residual(md_):
        X = probe_vector_field(md_.grid, seed=seed + 4)
        hscal = probe_scalar_field(md_.grid, seed=seed + 5)
        lhs = divergence_f(md_, hscal[:, None] * X)
        rhs = hscal * divergence_f(md_, X) + directional_derivative(md_.grid, hscal, X)
        return float(np.abs(lhs - rhs).max())

    checks.append(_ratio_check(
        "divergence_product_identity_order", product_residual, source,
        detail="div_f(hX) - h div_f(X) - Xh residual, second-order"))

    def weak_strong_residual(md_):
        X = probe_vector_field(md_.grid, seed=seed + 6)
        ipd_ = inner_product_data(md_)
        L_ = assemble_weak_laplacian(md_, ipd_)
        weak = ipd_.b_solve(
            L_.apply(X.reshape(-1)).reshape(md_.grid.n_nodes, md_.grid.dim))
        # the O(h^2) internal tripwire presumes a seam-free chart
        strong = apply_strong_laplacian(md_, X, check=source.smooth)
        return float(np.abs(weak - strong).max() / np.abs(X).max())

    checks.append(_ratio_check(
        "weak_strong_consistency_order", weak_strong_residual, source,
        detail="|B^-1 L X - strong(X)| / |X|, second-order"))

    if np.abs(md.C.values).max() == 0.0 and np.ptp(md.f.values) == 0.0:
        def reduction_residual(md_):
            X = probe_vector_field(md_.grid, seed=seed + 7)
            return float(np.abs(apply_strong_laplacian(md_, X, check=source.smooth)
                                - connection_laplacian_riemannian(md_, X)).max())

        checks.append(_ratio_check(
            "riemannian_reduction_order", reduction_residual, source,
            detail="strong form vs Levi-Civita rough Laplacian, second-order"))

    # replacing f by f + const must leave the operator action unchanged
    from .geometry import build_manifold
    md_shift = build_manifold(grid, md.g.values, md.C.values,
                              md.f.values + 1.7, alpha=md.alpha)
    X = probe_vector_field(grid, seed=seed + 8)
    ipd_s = inner_product_data(md_shift)
    L_s = assemble_weak_laplacian(md_shift, ipd_s)
    y0 = ipd.b_solve(L.apply(X.reshape(-1)).reshape(n, m))
    y1 = ipd_s.b_solve(L_s.apply(X.reshape(-1)).reshape(n, m))
    res_weak = float(np.abs(y0 - y1).max() / max(1.0, np.abs(y0).max()))
    s0 = apply_strong_laplacian(md, X, check=source.smooth)
    s1 = apply_strong_laplacian(md_shift, X, check=source.smooth)
    res_strong = float(np.abs(s0 - s1).max() / max(1.0, np.abs(s0).max()))
    res = max(res_weak, res_strong)
    checks.append(CheckResult(
        name="density_gauge_invariance", residual=res, tolerance=1e-12,
        passed=res <= 1e-12, detail="f -> f + const leaves both operator forms unchanged"))

    return checks, ipd, L


def spectral_checks(source: ManifoldSource, ipd, L, k, seed=0, t=0.5,
                    n_pairs=12, n_triples=200):
    md = source.build(1)
    dof = L.matrix.shape[0]
    k = min(k, dof)
    dec = eigendecompose(L, ipd, k, seed=seed)
    checks = []

    checks.append(CheckResult(
        name="eigenbasis_b_orthonormal", residual=dec.bortho_residual,
        tolerance=1e-8, passed=dec.bortho_residual <= 1e-8,
        detail=f"max |X^T B X - I| over {k} pairs"))
    checks.append(CheckResult(
        name="eigenpair_residuals", residual=dec.eig_residual,
        tolerance=1e-8, passed=dec.eig_residual <= 1e-8,
        detail="max relative |L X - lambda B X|"))
    lam_min = float(dec.eigenvalues.min())
    checks.append(CheckResult(
        name="spectrum_nonnegative_after_clamp", residual=lam_min, tolerance=0.0,
        passed=lam_min >= 0.0, detail="smallest clamped eigenvalue"))

    flat = (np.abs(md.C.values).max() == 0.0 and np.ptp(md.f.values) == 0.0
            and np.abs(md.g.values - np.eye(md.dim)).max() == 0.0)
    if flat and (dec.is_complete or dof <= 2048):
        dec_full = dec if dec.is_complete else eigendecompose(L, ipd, dof, seed=seed)
        grid = md.grid
        per_axis = [(4.0 / h ** 2) * np.sin(np.pi * np.arange(npts) / npts) ** 2
                    for h, npts in zip(grid.spacing, grid.points)]
        mesh = np.meshgrid(*per_axis, indexing="ij")
        expected = np.sort(np.repeat(sum(mesh).ravel(), md.dim))
        res = float(np.abs(np.sort(dec_full.eigenvalues) - expected).max())
        tol = 1e-8 if md.dim == 1 else 1e-7
        checks.append(CheckResult(
            name="flat_torus_spectrum_formula", residual=res, tolerance=tol,
            passed=res <= tol, detail="eigenvalues vs per-axis sine formula"))
    if flat and source.refinable and md.dim == 1:
        # low discrete eigenvalues approach the continuum squares at O(h^2)
        continuum = (2.0 * np.pi / md.grid.periods[0]) ** 2
        errs = []
        for factor in (1, 2):
            md_f = source.build(factor)
            ipd_f = inner_product_data(md_f)
            L_f = assemble_weak_laplacian(md_f, ipd_f)
            dec_f = eigendecompose(L_f, ipd_f, 3, seed=seed)
            errs.append(abs(float(dec_f.eigenvalues[1]) - continuum))
        ratio = errs[0] / errs[1] if errs[1] > 0 else np.inf
        checks.append(CheckResult(
            name="low_spectrum_continuum_order", residual=errs[1], tolerance=None,
            passed=abs(ratio - RATIO_TARGET) <= RATIO_SLACK, ratio=ratio,
            detail="first nonzero eigenvalue vs continuum value, second-order"))

    rng = np.random.default_rng(seed + 10)
    worst_gap = 0.0
    failed = False
    for _ in range(n_pairs):
        x, y = (int(v) for v in rng.integers(0, md.grid.n_nodes, size=2))
        if x == y:
            continue
        try:
            vector_diffusion_distance(dec, md, t, x, y, form_tol=1e-8)
            # recompute the two forms to report the numeric gap
            pxx = heat_kernel_block(dec, md, t, x, x).matrix
            pyy = heat_kernel_block(dec, md, t, y, y).matrix
            pxy = heat_kernel_block(dec, md, t, x, y).matrix
            def hs2(a, b, blk):
                return float(np.einsum("kl,ka,lb,ab->", md.g.values[a], blk, blk,
                                       md.g_inv.values[b]))
            tr = hs2(x, x, pxx) + hs2(y, y, pyy) - 2 * hs2(x, y, pxy)
            w = np.exp(-dec.eigenvalues * t)
            fx, fy = dec.fields[:, x, :], dec.fields[:, y, :]
            sx = fx @ md.g.values[x] @ fx.T
            sy = fy @ md.g.values[y] @ fy.T
            ds = float(np.einsum("pq,pq->", (sx - sy) * w[:, None] * w[None, :], sx - sy))
            worst_gap = max(worst_gap, abs(tr - ds) / max(abs(tr), abs(ds), 1.0))
            failed = False
        except FormMismatch:
            failed = True
            worst_gap = np.inf
            break
    checks.append(CheckResult(
        name="diffusion_distance_form_agreement", residual=worst_gap, tolerance=1e-8,
        passed=(not failed) and worst_gap <= 1e-8,
        detail="trace form vs double-sum form on sampled node pairs"))

    D = vdd_matrix(dec, md, t)
    sym_res = float(np.abs(D - D.T).max())
    diag_res = float(np.abs(np.diag(D)).max())
    rng = np.random.default_rng(seed + 11)
    tri_worst = -np.inf
    nn = md.grid.n_nodes
    for _ in range(n_triples):
        x, y, z = rng.integers(0, nn, size=3)
        tri_worst = max(tri_worst, D[x, z] - D[x, y] - D[y, z])
    res = max(sym_res, diag_res, tri_worst)
    checks.append(CheckResult(
        name="diffusion_distance_metric_axioms", residual=res, tolerance=1e-9,
        passed=res <= 1e-9,
        detail=f"symmetry, zero diagonal, triangle slack over {n_triples} triples"))

    rng = np.random.default_rng(seed + 12)
    worst = -np.inf
    for _ in range(6):
        x, y = (int(v) for v in rng.integers(0, nn, size=2))
        blk = heat_kernel_block(dec, md, t, x, y).matrix
        hs = float(np.sqrt(np.einsum("kl,ka,lb,ab->", md.g.values[x], blk, blk,
                                     md.g_inv.values[y])))
        fx, fy = dec.fields[:, x, :], dec.fields[:, y, :]
        nx = np.sqrt(np.einsum("qk,kl,ql->q", fx, md.g.values[x], fx))
        ny = np.sqrt(np.einsum("qk,kl,ql->q", fy, md.g.values[y], fy))
        bound = float(np.sum(np.exp(-dec.eigenvalues * t) * nx * ny))
        worst = max(worst, hs - bound)
    checks.append(CheckResult(
        name="heat_block_decay_bound", residual=worst, tolerance=1e-12,
        passed=worst <= 1e-12,
        detail="HS norm of kernel blocks vs eigenfield-norm bound"))

    return checks, dec


def kernel_checks(source: ManifoldSource, dec, model, seed=0, t=0.1, n_samples=8):
    md = source.build(1)
    prior = uniform_prior(md)
    checks = []
    rng = np.random.default_rng(seed + 20)
    theta0 = md.grid.coords().mean(axis=0)
    samples = [float(v) for v in model.sample(theta0, seed=seed + 21, n=n_samples)]

    worst = 0.0
    for x in samples[: min(4, len(samples))]:
        pf = posterior_field(model, prior, x, md)
        worst = max(worst, abs(pf.integral(md) - 1.0))
    checks.append(CheckResult(
        name="posterior_normalization", residual=worst, tolerance=1e-10,
        passed=worst <= 1e-10, detail="rho-weighted posterior mass minus one"))

    gram = kernel_gram(samples, t, dec, md, model, prior)
    sym = float(np.abs(gram.matrix - gram.matrix.T).max())
    mineig = gram.min_eigenvalue()
    checks.append(CheckResult(
        name="kernel_gram_symmetry", residual=sym, tolerance=1e-12,
        passed=sym <= 1e-12, detail=f"Gram over {n_samples} sampled observations"))
    checks.append(CheckResult(
        name="kernel_gram_psd_margin", residual=mineig, tolerance=-1e-10,
        passed=mineig >= -1e-10, detail="smallest Gram eigenvalue"))

    x0, x1 = samples[0], samples[-1]
    try:
        kernel_value(x0, x1, max(t, 1e-3), dec, md, model, prior,
                     check_double_integral=True, form_tol=1e-7)
        gap_ok, gap = True, 0.0
    except FormMismatch:
        gap_ok, gap = False, np.inf
    checks.append(CheckResult(
        name="kernel_form_agreement", residual=gap, tolerance=1e-7,
        passed=gap_ok, detail="single-integral vs double-integral kernel value"))

    g = gram.matrix

    def dist(i, j):
        return float(np.sqrt(max(g[i, i] + g[j, j] - 2 * g[i, j], 0.0)))

    worst = -np.inf
    ns = len(samples)
    for _ in range(100):
        i, j, l = rng.integers(0, ns, size=3)
        worst = max(worst, dist(i, l) - dist(i, j) - dist(j, l))
    worst = max(worst, abs(dist(0, ns - 1) - dist(ns - 1, 0)))
    checks.append(CheckResult(
        name="kernel_distance_axioms", residual=worst, tolerance=1e-9,
        passed=worst <= 1e-9, detail="symmetry and triangle slack on sampled triples"))
    return checks


def run_all_checks(source: ManifoldSource, seed=0, spectral_k=48, vdd_t=0.5,
                   kernel_t=0.1, with_kernels=True):
    """Full suite; returns (list of CheckResult, SpectralDecomposition)."""
    checks, ipd, L = operator_checks(source, seed=seed)
    spec_checks, dec = spectral_checks(source, ipd, L, spectral_k, seed=seed, t=vdd_t)
    checks.extend(spec_checks)
    if with_kernels and source.model is not None and hasattr(source.model, "sample"):
        try:
            checks.extend(kernel_checks(source, dec, source.model, seed=seed, t=kernel_t))
        except StatlapError as exc:
            checks.append(CheckResult(
                name="kernel_suite", residual=np.inf, tolerance=0.0, passed=False,
                detail=f"kernel checks aborted: {exc}"))
    return checks, dec
