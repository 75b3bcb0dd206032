"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines; every tolerance is fixed here, nothing is calibrated at runtime.
"""

import json

import numpy as np
import pytest
from scipy.linalg import eigh

from statlap.checks import probe_scalar_field, probe_vector_field
from statlap.cli import run_pipeline
from statlap.geometry import build_manifold, synthetic_manifold
from statlap.kernels import (
    kernel_gram,
    kernel_value,
    posterior_field,
    posterior_gradient,
    uniform_prior,
)
from statlap.models import ac_tensor_mc, eval_closed_form, fisher_mc, get_model, model_grid
from statlap.operators import (
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
from statlap.spectral import (
    eigendecompose,
    heat_kernel_block,
    vdd_matrix,
    vector_diffusion_distance,
)


def _criterion(number, description, ok):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {description}")
    assert ok, f"criterion {number} failed: {description}"


def model_manifold(name, center, period, points, fixed=None):
    model = get_model(name, **(fixed or {}))
    grid = model_grid(center, period, points)
    g, C = eval_closed_form(model, grid)
    return build_manifold(grid, g.values, C.values, np.zeros(grid.n_nodes))


@pytest.fixture(scope="module")
def catalog():
    """Every configuration family: flat, curved, and all model charts."""
    return {
        "flat1d": synthetic_manifold("flat1d", 64),
        "flat2d": synthetic_manifold("flat2d", (16, 16)),
        "sin1d": synthetic_manifold("sin_metric_1d", 32),
        "curved1d": synthetic_manifold("curved1d", 32),
        "polar2d": synthetic_manifold("polar_like_2d", (12, 12)),
        "curved2d": synthetic_manifold("curved2d", (12, 12)),
        "bernoulli": model_manifold("bernoulli", 0.5, 0.8, 64),
        "gausloc": model_manifold("gaussian_location", 0.0, 8.0, 64),
        "gaussian2d": model_manifold("gaussian", (0.0, 1.5), (4.0, 1.5), (16, 16)),
        "categorical2d": model_manifold("categorical", (0.3, 0.3), (0.3, 0.3), (12, 12),
                                        fixed={"d": 2}),
    }


@pytest.fixture(scope="module")
def systems(catalog):
    out = {}
    for name, md in catalog.items():
        ipd = inner_product_data(md)
        out[name] = (md, ipd, assemble_weak_laplacian(md, ipd))
    return out


def test_criterion_1_bitexact_symmetry(systems):
    worst = 0.0
    for name, (_, _, L) in systems.items():
        diff = (L.matrix - L.matrix.T).tocsr()
        res = 0.0 if diff.nnz == 0 else float(np.abs(diff.data).max())
        worst = max(worst, res)
    _criterion(1, f"L = L^T bit-exactly on all {len(systems)} catalog configurations "
                  f"(max residual {worst:.1e})", worst == 0.0)


def test_criterion_2_psd(systems):
    worst = np.inf
    for name, (md, ipd, L) in systems.items():
        lam0 = float(eigendecompose(L, ipd, 1, clamp=False).eigenvalues[0])
        worst = min(worst, lam0)
    _criterion(2, f"smallest generalized eigenvalue >= -1e-10 everywhere "
                  f"(min {worst:.3e})", worst >= -1e-10)


def test_criterion_3_divergence_lemma_suite():
    md = synthetic_manifold("curved2d", (12, 12))
    rng = np.random.default_rng(0)
    worst_total = 0.0
    for _ in range(5):
        X = rng.normal(size=(md.grid.n_nodes, 2))
        total = abs(weighted_integral(md, divergence_f(md, X)))
        worst_total = max(worst_total, total / max(1.0, float(np.abs(X).max())))
    ok3 = worst_total <= 1e-12

    def residuals(n):
        m = synthetic_manifold("curved1d", n)
        X = probe_vector_field(m.grid, seed=1)
        h = probe_scalar_field(m.grid, seed=2)
        drift = np.abs(divergence_f(m, X) - divergence_riemannian(m, X)
                       + directional_derivative(m.grid, m.f.values, X)).max()
        prod = np.abs(divergence_f(m, h[:, None] * X) - h * divergence_f(m, X)
                      - directional_derivative(m.grid, h, X)).max()
        return drift, prod

    coarse, fine = residuals(24), residuals(48)
    ratios = (coarse[0] / fine[0], coarse[1] / fine[1])
    ok12 = all(abs(r - 4.0) <= 1.0 for r in ratios)
    _criterion(3, f"total divergence {worst_total:.1e} <= 1e-12; "
                  f"identity ratios {ratios[0]:.2f}, {ratios[1]:.2f} in 4.0 +/- 25%",
               ok3 and ok12)


def test_criterion_4_adjoint_pairing(systems):
    md, ipd, _ = systems["curved2d"]
    dop = covariant_derivative(md, "primal", scheme="staggered")
    rng = np.random.default_rng(3)
    n, m = md.grid.n_nodes, md.grid.dim
    worst = 0.0
    for _ in range(20):
        X = rng.normal(size=(n, m))
        W = rng.normal(size=(n, m, m))
        DX = dop.apply(X.reshape(-1)).reshape(n, m, m)
        lhs = ipd.mixed_inner(DX, W)
        rhs = ipd.vector_inner(X, apply_adjoint(md, W, ipd, method="weak"))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-30))
    _criterion(4, f"weak adjoint pairing residual {worst:.2e} <= 1e-10 "
                  f"over 20 random pairs", worst <= 1e-10)


def test_criterion_5_flat_torus_spectra(systems):
    md, ipd, L = systems["flat1d"]
    lam = eigh(L.matrix.toarray(), ipd.b_matrix().toarray(), eigvals_only=True)
    h = md.grid.spacing[0]
    expected = np.sort((4 / h ** 2) * np.sin(np.pi * np.arange(64) / 64) ** 2)
    res1 = float(np.abs(np.sort(lam) - expected).max())

    md2, ipd2, L2 = systems["flat2d"]
    lam2 = eigh(L2.matrix.toarray(), ipd2.b_matrix().toarray(), eigvals_only=True)
    axes = [(4.0 / h ** 2) * np.sin(np.pi * np.arange(npts) / npts) ** 2
            for h, npts in zip(md2.grid.spacing, md2.grid.points)]
    mesh = np.meshgrid(*axes, indexing="ij")
    expected2 = np.sort(np.repeat(sum(mesh).ravel(), 2))
    res2 = float(np.abs(np.sort(lam2) - expected2).max())
    _criterion(5, f"flat spectra match the sine formula (1D {res1:.1e} <= 1e-8, "
                  f"2D {res2:.1e} <= 1e-7)", res1 <= 1e-8 and res2 <= 1e-7)


def test_criterion_6_riemannian_reduction():
    errs = []
    for n in (24, 48):
        md = synthetic_manifold("sin_metric_1d", n)
        X = probe_vector_field(md.grid, seed=4)
        errs.append(float(np.abs(apply_strong_laplacian(md, X)
                                 - connection_laplacian_riemannian(md, X)).max()))
    ratio = errs[0] / errs[1]
    _criterion(6, f"zero-cubic-tensor reduction to the rough Laplacian, "
                  f"ratio {ratio:.2f} in 4.0 +/- 25%", abs(ratio - 4.0) <= 1.0)


def test_criterion_7_weak_strong_consistency():
    ratios = []
    for preset, sizes in (("curved1d", (32, 64)), ("curved2d", ((12, 12), (24, 24)))):
        errs = []
        for pts in sizes:
            md = synthetic_manifold(preset, pts)
            X = probe_vector_field(md.grid, seed=5)
            ipd = inner_product_data(md)
            L = assemble_weak_laplacian(md, ipd)
            weak = ipd.b_solve(L.apply(X.reshape(-1)).reshape(md.grid.n_nodes, md.grid.dim))
            errs.append(float(np.abs(weak - apply_strong_laplacian(md, X)).max()
                              / np.abs(X).max()))
        ratios.append(errs[0] / errs[1])
    ok = all(abs(r - 4.0) <= 1.0 for r in ratios)
    _criterion(7, f"weak/strong consistency ratios {ratios[0]:.2f}, {ratios[1]:.2f} "
                  f"in 4.0 +/- 25% on curved manifolds", ok)


def test_criterion_8_mc_vs_closed_form():
    cases = {
        "bernoulli": (get_model("bernoulli"),
                      [np.array([p]) for p in (0.15, 0.25, 0.33, 0.4, 0.5,
                                               0.58, 0.66, 0.75, 0.85, 0.9)]),
        "gaussian": (get_model("gaussian"),
                     [np.array(t) for t in ((0.0, 1.0), (1.0, 0.7), (-0.5, 2.0),
                                            (2.0, 1.5), (0.3, 0.4), (-1.2, 1.1),
                                            (0.8, 0.9), (1.5, 2.2), (-2.0, 0.6),
                                            (0.0, 3.0))]),
    }
    ok = True
    for name, (model, thetas) in cases.items():
        for j, theta in enumerate(thetas):
            fish = fisher_mc(model, theta, n=20_000, seed=1000 + j)
            ok &= bool(np.all(np.abs(fish.value - model.closed_form_g(theta[None])[0])
                              <= 4 * fish.stderr + 1e-12))
            ac = ac_tensor_mc(model, theta, n=20_000, seed=2000 + j)
            ok &= bool(np.all(np.abs(ac.value - model.closed_form_C(theta[None])[0])
                              <= 4 * ac.stderr + 1e-12))
    _criterion(8, "metric and cubic-tensor MC estimates within 4 stderr of closed "
                  "forms at 10 fixed (seed, theta) points per model", ok)


def test_criterion_9_diffusion_distance(systems):
    md, ipd, L = systems["curved1d"]
    dec = eigendecompose(L, ipd, md.grid.n_nodes)
    t = 0.3
    rng = np.random.default_rng(6)
    worst_gap = 0.0
    for _ in range(25):
        x, y = (int(v) for v in rng.integers(0, md.grid.n_nodes, size=2))
        if x == y:
            continue
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
        vector_diffusion_distance(dec, md, t, x, y, form_tol=1e-8)

    D = vdd_matrix(dec, md, t)
    sym = float(np.abs(D - D.T).max())
    diag = float(np.abs(np.diag(D)).max())
    tri = -np.inf
    for _ in range(200):
        x, y, z = rng.integers(0, md.grid.n_nodes, size=3)
        tri = max(tri, D[x, z] - D[x, y] - D[y, z])
    ok = worst_gap <= 1e-8 and sym == 0.0 and diag == 0.0 and tri <= 1e-9
    _criterion(9, f"trace/double-sum gap {worst_gap:.1e} <= 1e-8; metric axioms "
                  f"over 200 triples (triangle slack {tri:.1e} <= 1e-9)", ok)


def test_criterion_10_kernel_gram(systems):
    ok = True
    details = []
    for name, theta0 in (("bernoulli", np.array([0.4])),
                         ("gaussian2d", np.array([0.2, 1.4]))):
        md, ipd, L = systems[name]
        model = get_model("bernoulli") if name == "bernoulli" else get_model("gaussian")
        dec = eigendecompose(L, ipd, md.grid.n_nodes * md.grid.dim)
        prior = uniform_prior(md)
        samples = [float(v) for v in model.sample(theta0, seed=11, n=20)]
        for t in (0.01, 0.1, 1.0):
            gram = kernel_gram(samples, t, dec, md, model, prior)
            mineig = gram.min_eigenvalue()
            ok &= mineig >= -1e-10
            details.append(f"{name}@t={t}: {mineig:.1e}")
        gx = posterior_gradient(posterior_field(model, prior, samples[0], md), md)
        gy = posterior_gradient(posterior_field(model, prior, samples[1], md), md)
        direct = float(np.einsum("nk,n,nkl,nl->", gx,
                                 md.rho.values * md.grid.weight, md.g.values, gy))
        via = kernel_value(samples[0], samples[1], 0.0, dec, md, model, prior)
        ok &= abs(via - direct) <= 1e-7 * max(abs(direct), 1.0)
    _criterion(10, "20-sample Gram PSD margins >= -1e-10 at t in {0.01, 0.1, 1} and "
                   "t -> 0 kernel equals the direct gradient inner product", ok)


def test_criterion_11_reproducibility(tmp_path):
    cfg = {
        "model": {"name": "bernoulli",
                  "chart": {"center": [0.5], "period": [0.8], "points": [32]}},
        "tasks": ["spectrum", "vdd-matrix", "kernel-gram", "verify"],
        "vdd": {"t": 0.05},
        "kernel": {"t": 0.1, "samples": [0, 1, 1, 0]},
        "seed": 9,
    }
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    run_pipeline(json.loads(json.dumps(cfg)), str(out1))
    run_pipeline(json.loads(json.dumps(cfg)), str(out2))
    same = (out1 / "report.json").read_bytes() == (out2 / "report.json").read_bytes()
    _criterion(11, "two runs with identical config and seed produce byte-identical "
                   "report.json", same)
