import numpy as np
import pytest

from statlap.errors import (
    FormMismatch,
    ShapeMismatch,
    UnderResolvedPosterior,
    ZeroEvidence,
)
from statlap.geometry import Grid, build_manifold
from statlap.kernels import (
    GramMatrix,
    PosteriorField,
    kernel_distance,
    kernel_gram,
    kernel_value,
    normalize_prior,
    posterior_field,
    posterior_gradient,
    uniform_prior,
)
from statlap.models import get_model, model_grid, eval_closed_form
from statlap.operators import assemble_weak_laplacian, inner_product_data
from statlap.spectral import eigendecompose


def bernoulli_system(n=64):
    model = get_model("bernoulli")
    grid = model_grid(center=0.5, period=0.8, points=n)
    g, C = eval_closed_form(model, grid)
    md = build_manifold(grid, g.values, C.values, np.zeros(grid.n_nodes))
    ipd = inner_product_data(md)
    L = assemble_weak_laplacian(md, ipd)
    dec = eigendecompose(L, ipd, grid.n_nodes)
    return model, md, dec


@pytest.fixture(scope="module")
def bern():
    return bernoulli_system()


class FlatLikelihood:
    """Dummy model whose likelihood does not depend on the parameter."""

    param_dim = 1

    def validate_theta(self, theta):
        return np.atleast_2d(theta)

    def loglik(self, x, theta):
        return np.zeros(np.asarray(theta).shape[:-1])


class TestPosteriorField:
    def test_uniform_prior_flat_likelihood_gives_unit_posterior(self):
        # chart with unit total density mass, so the uniform prior is 1
        n = 16
        grid = Grid(points=(n,), periods=(2 * np.pi,))
        f = np.full(n, np.log(2 * np.pi))
        md = build_manifold(grid, np.ones((n, 1, 1)), np.zeros((n, 1, 1, 1)), f)
        prior = uniform_prior(md)
        assert np.abs(prior - 1.0).max() < 1e-12
        pf = posterior_field(FlatLikelihood(), prior, 0.0, md)
        assert np.abs(pf.values - 1.0).max() < 1e-12

    def test_posterior_integrates_to_one(self, bern):
        model, md, _ = bern
        prior = uniform_prior(md)
        for x in (0.0, 1.0):
            pf = posterior_field(model, prior, x, md)
            assert abs(pf.integral(md) - 1.0) < 1e-10
            assert pf.values.min() >= 0.0

    def test_conjugate_shaped_prior_map_is_analytic(self, bern):
        # prior ~ p^(a-1) (1-p)^(b-1) relative to rho; the posterior after
        # observing x has its maximum at (x + a - 1) / (a + b - 1)
        model, md, _ = bern
        a, b = 3.0, 2.0
        p = md.grid.coords()[:, 0]
        prior = normalize_prior(p ** (a - 1) * (1 - p) ** (b - 1), md)
        pf = posterior_field(model, prior, 1.0, md)
        node = int(np.argmax(pf.values))
        target = (1.0 + a - 1.0) / (a + b - 1.0)
        assert abs(p[node] - target) <= md.grid.spacing[0]

    def test_zero_evidence_raises(self):
        model = get_model("gaussian_location")
        grid = model_grid(center=0.0, period=8.0, points=32)
        g, C = eval_closed_form(model, grid)
        md = build_manifold(grid, g.values, C.values, np.zeros(grid.n_nodes))
        prior = uniform_prior(md)
        with pytest.raises(ZeroEvidence):
            posterior_field(model, prior, 80.0, md)

    def test_under_resolved_posterior_raises(self, bern):
        model, md, _ = bern
        spike = np.zeros(md.grid.n_nodes)
        spike[30:32] = 1.0
        prior = normalize_prior(spike, md)
        with pytest.raises(UnderResolvedPosterior):
            posterior_field(model, prior, 1.0, md)

    def test_unnormalized_prior_rejected(self, bern):
        model, md, _ = bern
        with pytest.raises(ShapeMismatch):
            posterior_field(model, np.ones(md.grid.n_nodes) * 3.0, 1.0, md)


class TestPosteriorGradient:
    def test_constant_posterior_has_zero_gradient(self):
        n = 16
        grid = Grid(points=(n,), periods=(2 * np.pi,))
        md = build_manifold(grid, np.ones((n, 1, 1)), np.zeros((n, 1, 1, 1)), np.zeros(n))
        pf = PosteriorField(x=0.0, values=np.ones(n), normalizer=1.0)
        assert np.abs(posterior_gradient(pf, md)).max() == 0.0

    def test_flat_metric_raise_is_coordinate_gradient(self):
        n = 32
        grid = Grid(points=(n,), periods=(2 * np.pi,))
        md = build_manifold(grid, np.ones((n, 1, 1)), np.zeros((n, 1, 1, 1)), np.zeros(n))
        th = grid.coords()[:, 0]
        pf = PosteriorField(x=0.0, values=np.sin(th), normalizer=1.0)
        grad = posterior_gradient(pf, md)
        coord = grid.diff_central(np.sin(th), 0)
        assert np.array_equal(grad[:, 0], coord)

    def test_scalar_metric_scales_gradient(self):
        n = 32
        grid = Grid(points=(n,), periods=(2 * np.pi,))
        md = build_manifold(grid, np.full((n, 1, 1), 4.0), np.zeros((n, 1, 1, 1)), np.zeros(n))
        th = grid.coords()[:, 0]
        pf = PosteriorField(x=0.0, values=np.sin(th), normalizer=1.0)
        grad = posterior_gradient(pf, md)
        coord = grid.diff_central(np.sin(th), 0)
        assert np.abs(grad[:, 0] - 0.25 * coord).max() < 1e-15


class TestKernelValue:
    def test_symmetry(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        k01 = kernel_value(0.0, 1.0, 0.1, dec, md, model, prior)
        k10 = kernel_value(1.0, 0.0, 0.1, dec, md, model, prior)
        assert abs(k01 - k10) <= 1e-10 * max(abs(k01), 1.0)

    def test_diagonal_nonnegative(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        for x in (0.0, 1.0):
            assert kernel_value(x, x, 0.5, dec, md, model, prior) >= 0.0

    def test_t_zero_equals_plain_gradient_inner_product(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        gx = posterior_gradient(posterior_field(model, prior, 1.0, md), md)
        gy = posterior_gradient(posterior_field(model, prior, 0.0, md), md)
        direct = float(np.einsum("nk,n,nkl,nl->", gx,
                                 md.rho.values * md.grid.weight, md.g.values, gy))
        via_kernel = kernel_value(1.0, 0.0, 0.0, dec, md, model, prior)
        assert abs(via_kernel - direct) <= 1e-7 * max(abs(direct), 1.0)

    def test_single_and_double_integral_forms_agree(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        v = kernel_value(1.0, 0.0, 0.2, dec, md, model, prior,
                         check_double_integral=True)
        assert np.isfinite(v)

    def test_form_guard_trips_on_zero_tolerance(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        with pytest.raises(FormMismatch):
            kernel_value(1.0, 0.0, 0.2, dec, md, model, prior,
                         check_double_integral=True, form_tol=0.0)


class TestGramAndDistance:
    def test_gram_matches_kernel_values(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        samples = [0.0, 1.0, 1.0, 0.0]
        gram = kernel_gram(samples, 0.1, dec, md, model, prior)
        for i, xi in enumerate(samples):
            for j, xj in enumerate(samples):
                direct = kernel_value(xi, xj, 0.1, dec, md, model, prior)
                assert abs(gram.matrix[i, j] - direct) <= 1e-10 * max(abs(direct), 1.0)

    def test_gram_psd_and_symmetric(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        xs = get_model("bernoulli").sample(np.array([0.4]), seed=3, n=20)
        for t in (0.01, 0.1, 1.0):
            gram = kernel_gram(list(xs), t, dec, md, model, prior)
            assert np.array_equal(gram.matrix, gram.matrix.T)
            assert gram.min_eigenvalue() >= -1e-10

    def test_duplicate_samples_identical_rows(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        gram = kernel_gram([1.0, 1.0, 0.0], 0.1, dec, md, model, prior)
        assert np.array_equal(gram.matrix[0], gram.matrix[1])

    def test_one_by_one_gram(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        gram = kernel_gram([1.0], 0.3, dec, md, model, prior)
        assert gram.matrix.shape == (1, 1)
        assert gram.matrix[0, 0] >= 0.0

    def test_distance_axioms(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        assert kernel_distance(1.0, 1.0, 0.1, dec, md, model, prior) == 0.0
        dxy = kernel_distance(1.0, 0.0, 0.1, dec, md, model, prior)
        dyx = kernel_distance(0.0, 1.0, 0.1, dec, md, model, prior)
        assert abs(dxy - dyx) <= 1e-12 * max(dxy, 1.0)

    def test_triangle_inequality_over_triples(self, bern):
        model, md, dec = bern
        prior = uniform_prior(md)
        samples = [0.0, 1.0]
        gram = kernel_gram(samples * 2, 0.1, dec, md, model, prior)
        g = gram.matrix
        def dist(i, j):
            return np.sqrt(max(g[i, i] + g[j, j] - 2 * g[i, j], 0.0))
        rng = np.random.default_rng(0)
        for _ in range(100):
            i, j, k = rng.integers(0, 4, size=3)
            assert dist(i, k) <= dist(i, j) + dist(j, k) + 1e-9
