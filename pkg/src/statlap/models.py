"""Parametric statistical families: log-likelihoods, exact samplers and
closed-form metric / cubic tensors, plus Monte-Carlo estimators of both.

Sampling uses a counter-based generator (Philox keyed by the seed), so the
s-th draw is a pure function of (seed, s) and estimates reproduce bit-exactly
regardless of how the sample batch is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import NoClosedForm, ParameterOutOfRange, ShapeMismatch
from .geometry import Grid, TensorField, _symmetrize

# Interior margin for probability-type parameters.
PROB_MARGIN = 1e-6
# Lower bound for scale-type parameters.
SCALE_MIN = 1e-6


def _uniforms(seed: int, n: int) -> np.ndarray:
    u = np.random.Generator(np.random.Philox(key=int(seed))).random(int(n))
    # ndtri(0) is -inf; the clip is a 2^-53 event and keeps transforms finite
    return np.maximum(u, 2.0 ** -53)


@dataclass(frozen=True)
class MCEstimate:
    """Monte-Carlo tensor estimate with per-component standard errors."""

    value: np.ndarray
    stderr: np.ndarray
    n_samples: int
    seed: int


class StatModel:
    """Base class for parametric families.

    Subclasses implement loglik / loglik_grad with numpy broadcasting over
    both the sample argument and the trailing parameter axis, an exact
    sampler, and (when available) closed-form g and C.

    chart_fields_smooth marks models whose closed-form fields extend
    periodically without a seam when wrapped on a chart (constant fields);
    most families are seamed and convergence-order checks are informational
    on their charts.
    """

    name = "abstract"
    param_dim = 0
    sample_space = ("abstract",)
    has_closed_form = False
    chart_fields_smooth = False

    def loglik(self, x, theta):
        raise NotImplementedError

    def loglik_grad(self, x, theta):
        raise NotImplementedError

    def sample(self, theta, seed, n):
        raise NotImplementedError

    def closed_form_g(self, theta):
        raise NoClosedForm(f"{self.name} has no closed-form metric")

    def closed_form_C(self, theta):
        raise NoClosedForm(f"{self.name} has no closed-form cubic tensor")

    def validate_theta(self, theta):
        """Raise ParameterOutOfRange unless every row is in the valid region."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if theta.shape[-1] != self.param_dim:
            raise ShapeMismatch(
                f"{self.name} expects {self.param_dim} parameters, got shape {theta.shape}")
        self._validate(theta)
        return theta

    def _validate(self, theta):
        raise NotImplementedError


class Bernoulli(StatModel):
    """Coin-flip family, parameter p = P(x = 1), sample space {0, 1}."""

    name = "bernoulli"
    param_dim = 1
    sample_space = ("finite", (0, 1))
    has_closed_form = True

    def _validate(self, theta):
        p = theta[..., 0]
        if np.any(p < PROB_MARGIN) or np.any(p > 1 - PROB_MARGIN):
            raise ParameterOutOfRange(f"bernoulli p must lie in [{PROB_MARGIN}, {1 - PROB_MARGIN}]")

    def loglik(self, x, theta):
        p = np.asarray(theta)[..., 0]
        x = np.asarray(x, dtype=np.float64)
        return x * np.log(p) + (1 - x) * np.log1p(-p)

    def loglik_grad(self, x, theta):
        p = np.asarray(theta)[..., 0]
        x = np.asarray(x, dtype=np.float64)
        return ((x - p) / (p * (1 - p)))[..., None]

    def sample(self, theta, seed, n):
        p = float(np.asarray(theta).reshape(-1)[0])
        return (_uniforms(seed, n) < p).astype(np.float64)

    def closed_form_g(self, theta):
        p = theta[..., 0]
        return (1.0 / (p * (1 - p)))[..., None, None]

    def closed_form_C(self, theta):
        p = theta[..., 0]
        return ((1 - 2 * p) / (p * (1 - p)) ** 2)[..., None, None, None]


class GaussianLocation(StatModel):
    """Normal family with unit variance; the location is the only parameter."""

    name = "gaussian_location"
    param_dim = 1
    sample_space = ("real",)
    has_closed_form = True
    chart_fields_smooth = True  # constant fields, no seam

    def _validate(self, theta):
        pass

    def loglik(self, x, theta):
        mu = np.asarray(theta)[..., 0]
        x = np.asarray(x, dtype=np.float64)
        return -0.5 * (x - mu) ** 2 - 0.5 * np.log(2 * np.pi)

    def loglik_grad(self, x, theta):
        mu = np.asarray(theta)[..., 0]
        x = np.asarray(x, dtype=np.float64)
        return (x - mu)[..., None]

    def sample(self, theta, seed, n):
        mu = float(np.asarray(theta).reshape(-1)[0])
        return mu + ndtri(_uniforms(seed, n))

    def closed_form_g(self, theta):
        return np.ones(theta.shape[:-1] + (1, 1))

    def closed_form_C(self, theta):
        return np.zeros(theta.shape[:-1] + (1, 1, 1))


class GaussianMeanScale(StatModel):
    """Normal family with parameters (mu, sigma)."""

    name = "gaussian"
    param_dim = 2
    sample_space = ("real",)
    has_closed_form = True

    def _validate(self, theta):
        if np.any(theta[..., 1] < SCALE_MIN):
            raise ParameterOutOfRange(f"gaussian sigma must be >= {SCALE_MIN}")

    def loglik(self, x, theta):
        theta = np.asarray(theta)
        mu, sigma = theta[..., 0], theta[..., 1]
        x = np.asarray(x, dtype=np.float64)
        return -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)

    def loglik_grad(self, x, theta):
        theta = np.asarray(theta)
        mu, sigma = theta[..., 0], theta[..., 1]
        x = np.asarray(x, dtype=np.float64)
        z = (x - mu) / sigma
        return np.stack([z / sigma, (z ** 2 - 1.0) / sigma], axis=-1)

    def sample(self, theta, seed, n):
        mu, sigma = (float(v) for v in np.asarray(theta).reshape(-1))
        return mu + sigma * ndtri(_uniforms(seed, n))

    def closed_form_g(self, theta):
        sigma = theta[..., 1]
        g = np.zeros(theta.shape[:-1] + (2, 2))
        g[..., 0, 0] = 1.0 / sigma ** 2
        g[..., 1, 1] = 2.0 / sigma ** 2
        return g

    def closed_form_C(self, theta):
        # standard-normal moments give C_mms = 2/s^3 (all orderings) and
        # C_sss = 8/s^3, the mu-odd components vanish
        sigma = theta[..., 1]
        C = np.zeros(theta.shape[:-1] + (2, 2, 2))
        for idx in ((0, 0, 1), (0, 1, 0), (1, 0, 0)):
            C[(..., *idx)] = 2.0 / sigma ** 3
        C[..., 1, 1, 1] = 8.0 / sigma ** 3
        return C


class Categorical(StatModel):
    """Finite family on {0..d}; parameters are p_1..p_d, p_0 the remainder."""

    name = "categorical"
    sample_space = ("finite", None)
    has_closed_form = True

    def __init__(self, d=2):
        self.param_dim = int(d)
        self.sample_space = ("finite", tuple(range(d + 1)))

    def _validate(self, theta):
        p0 = 1.0 - theta.sum(axis=-1)
        if np.any(theta < PROB_MARGIN) or np.any(p0 < PROB_MARGIN):
            raise ParameterOutOfRange("categorical probabilities must stay interior")

    def _full_probs(self, theta):
        theta = np.asarray(theta)
        p0 = 1.0 - theta.sum(axis=-1, keepdims=True)
        return np.concatenate([p0, theta], axis=-1)

    def loglik(self, x, theta):
        probs = self._full_probs(theta)
        x = np.asarray(x, dtype=np.int64)
        bshape = np.broadcast_shapes(x.shape, probs.shape[:-1])
        probs = np.broadcast_to(probs, bshape + probs.shape[-1:])
        x = np.broadcast_to(x, bshape)
        picked = np.take_along_axis(probs, x[..., None], axis=-1)[..., 0]
        return np.log(picked)

    def loglik_grad(self, x, theta):
        theta = np.asarray(theta)
        p0 = 1.0 - theta.sum(axis=-1)
        x = np.asarray(x, dtype=np.int64)
        bshape = np.broadcast_shapes(x.shape, theta.shape[:-1])
        d = self.param_dim
        grad = np.zeros(bshape + (d,))
        xb = np.broadcast_to(x, bshape)
        thb = np.broadcast_to(theta, bshape + (d,))
        p0b = np.broadcast_to(p0, bshape)
        for i in range(d):
            grad[..., i] = (xb == i + 1) / thb[..., i] - (xb == 0) / p0b
        return grad

    def sample(self, theta, seed, n):
        probs = self._full_probs(np.asarray(theta).reshape(-1))
        edges = np.cumsum(probs)
        return np.searchsorted(edges, _uniforms(seed, n), side="right").astype(np.float64)

    def closed_form_g(self, theta):
        p0 = 1.0 - theta.sum(axis=-1)
        d = self.param_dim
        g = np.zeros(theta.shape[:-1] + (d, d))
        g += (1.0 / p0)[..., None, None]
        for i in range(d):
            g[..., i, i] += 1.0 / theta[..., i]
        return g

    def closed_form_C(self, theta):
        p0 = 1.0 - theta.sum(axis=-1)
        d = self.param_dim
        C = np.zeros(theta.shape[:-1] + (d, d, d))
        C -= (1.0 / p0 ** 2)[..., None, None, None]
        for i in range(d):
            C[..., i, i, i] += 1.0 / theta[..., i] ** 2
        return C


_CATALOG = {
    "bernoulli": Bernoulli,
    "gaussian_location": GaussianLocation,
    "gaussian": GaussianMeanScale,
    "categorical": Categorical,
}


def get_model(name: str, **fixed_params) -> StatModel:
    """Instantiate a catalog model by name."""
    if name not in _CATALOG:
        raise ShapeMismatch(f"unknown model {name!r}; have {sorted(_CATALOG)}")
    return _CATALOG[name](**fixed_params)


def model_grid(center, period, points) -> Grid:
    """Chart grid for a model: [center - period/2, center + period/2) per axis."""
    center = np.atleast_1d(np.asarray(center, dtype=np.float64))
    period = np.atleast_1d(np.asarray(period, dtype=np.float64))
    points = np.atleast_1d(np.asarray(points, dtype=np.int64))
    origin = tuple(c - p / 2 for c, p in zip(center, period))
    return Grid(points=tuple(int(n) for n in points),
                periods=tuple(float(p) for p in period), origin=origin)


def eval_closed_form(model: StatModel, grid: Grid):
    """Sample closed-form (g, C) on the grid nodes.

    Raises NoClosedForm for models without closed forms and
    ParameterOutOfRange if the chart leaves the valid region.
    """
    if not model.has_closed_form:
        raise NoClosedForm(f"{model.name} has no closed form")
    theta = model.validate_theta(grid.coords())
    if grid.dim != model.param_dim:
        raise ShapeMismatch(f"grid dim {grid.dim} != model parameter dim {model.param_dim}")
    g = TensorField.create(grid, model.closed_form_g(theta), symmetries=((0, 1),))
    C = TensorField.create(grid, model.closed_form_C(theta), symmetries=((0, 1, 2),))
    return g, C


def _mc_moment(model, theta, n, seed, order):
    if n < 100:
        raise ShapeMismatch("need n >= 100 samples")
    theta = model.validate_theta(theta)[0]
    xs = model.sample(theta, seed, n)
    grads = model.loglik_grad(xs, theta[None, :])  # (n, d)
    if order == 2:
        prods = np.einsum("si,sj->sij", grads, grads)
        sym = ((0, 1),)
    else:
        prods = np.einsum("si,sj,sk->sijk", grads, grads, grads)
        sym = ((0, 1, 2),)
    value = prods.mean(axis=0)
    stderr = prods.std(axis=0, ddof=1) / np.sqrt(n)
    # products of identical scalar factors are already fully symmetric; the
    # explicit symmetrization keeps the declared contract exact
    value = _symmetrize(value[None], sym)[0]
    stderr = _symmetrize(stderr[None], sym)[0]
    return MCEstimate(value=value, stderr=stderr, n_samples=int(n), seed=int(seed))


def fisher_mc(model: StatModel, theta, n: int, seed: int) -> MCEstimate:
    """Monte-Carlo metric estimate: mean over exact draws of grad outer grad."""
    return _mc_moment(model, theta, n, seed, order=2)


def ac_tensor_mc(model: StatModel, theta, n: int, seed: int) -> MCEstimate:
    """Monte-Carlo cubic-tensor estimate: mean of the triple gradient product."""
    return _mc_moment(model, theta, n, seed, order=3)


def loglik_grad_field(model: StatModel, x, grid: Grid) -> TensorField:
    """Node-sampled score covector d_i loglik(x | theta) over the chart."""
    theta = model.validate_theta(grid.coords())
    if grid.dim != model.param_dim:
        raise ShapeMismatch(f"grid dim {grid.dim} != model parameter dim {model.param_dim}")
    return TensorField.create(grid, model.loglik_grad(x, theta))
