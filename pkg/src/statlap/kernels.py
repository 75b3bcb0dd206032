"""Sample-space kernels from posterior gradients and the heat semigroup.

Given a parametric model on a chart that carries the metric-and-density
structure, each observation x induces a posterior density f(theta | x)
relative to the volume density rho.  The raised posterior gradients are
vector fields on the chart; smoothing one of them with the heat semigroup
and pairing under the rho-weighted metric inner product defines a kernel
K_t on pairs of observations and from it a distance on the sample space.

The prior is a single density *relative to rho* (it must rho-integrate to
one), used in both the posterior numerator and the evidence; this is the
only convention under which the posterior normalizes exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormMismatch, ShapeMismatch, UnderResolvedPosterior, ZeroEvidence
from .geometry import ManifoldData
from .models import StatModel
from .spectral import SpectralDecomposition, heat_apply

# Posterior nodes below this fraction of the peak do not count as support.
SUPPORT_LEVEL = 1e-3
# Minimum number of distinct support nodes required along every axis.
SUPPORT_MIN_NODES = 8
# Evidence below this is treated as numerically zero.
EVIDENCE_FLOOR = 1e-300

PRIOR_NORMALIZATION_TOL = 1e-10


@dataclass(frozen=True)
class PosteriorField:
    """Posterior density (relative to rho) for one observation."""

    x: float
    values: np.ndarray
    normalizer: float

    def integral(self, md: ManifoldData) -> float:
        return float(np.sum(self.values * md.rho.values) * md.grid.weight)


@dataclass(frozen=True)
class GramMatrix:
    """Kernel matrix over a list of observations at a fixed heat time."""

    sample_ids: tuple
    samples: tuple
    t: float
    matrix: np.ndarray

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


def uniform_prior(md: ManifoldData) -> np.ndarray:
    """Constant prior density relative to rho, normalized to unit mass."""
    total = float(np.sum(md.rho.values) * md.grid.weight)
    return np.full(md.grid.n_nodes, 1.0 / total)


def normalize_prior(values: np.ndarray, md: ManifoldData) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < 0):
        raise ShapeMismatch("prior density must be nonnegative")
    total = float(np.sum(values * md.rho.values) * md.grid.weight)
    if total < EVIDENCE_FLOOR:
        raise ZeroEvidence("prior has vanishing mass")
    return values / total


def _check_support(values, grid, min_nodes):
    mask = values >= SUPPORT_LEVEL * values.max()
    idx = np.argwhere(mask.reshape(grid.points))
    for axis in range(grid.dim):
        count = len(np.unique(idx[:, axis]))
        if count < min_nodes:
            raise UnderResolvedPosterior(
                f"posterior support spans only {count} nodes along axis {axis}; "
                f"need at least {min_nodes} (refine the chart)")


def posterior_field(model: StatModel, prior: np.ndarray, x, md: ManifoldData,
                    support_min_nodes: int = SUPPORT_MIN_NODES) -> PosteriorField:
    """Posterior density on the chart for observation x.

    prior must be a density relative to rho with unit weighted mass; the
    evidence is the rho-weighted node quadrature of likelihood * prior.
    """
    grid = md.grid
    prior = np.asarray(prior, dtype=np.float64)
    if prior.shape != (grid.n_nodes,):
        raise ShapeMismatch(f"prior must have shape {(grid.n_nodes,)}")
    if np.any(prior < 0):
        raise ShapeMismatch("prior density must be nonnegative")
    mass = float(np.sum(prior * md.rho.values) * grid.weight)
    if abs(mass - 1.0) > PRIOR_NORMALIZATION_TOL:
        raise ShapeMismatch(f"prior must rho-integrate to 1, got {mass!r}")
    theta = model.validate_theta(grid.coords())
    like = np.exp(model.loglik(x, theta))
    numer = like * prior
    evidence = float(np.sum(numer * md.rho.values) * grid.weight)
    if evidence < EVIDENCE_FLOOR:
        raise ZeroEvidence(f"evidence for observation {x!r} underflowed")
    values = numer / evidence
    if support_min_nodes:
        _check_support(values, grid, support_min_nodes)
    return PosteriorField(x=x, values=values, normalizer=evidence)


def posterior_gradient(pf: PosteriorField, md: ManifoldData) -> np.ndarray:
    """Raised gradient of the posterior: (grad f)^i = g^{ij} d_j f, (N, m)."""
    grid = md.grid
    df = np.stack([grid.diff_central(pf.values, a) for a in range(grid.dim)], axis=1)
    return np.einsum("nij,nj->ni", md.g_inv.values, df)


def _gradient_for(model, prior, x, md, support_min_nodes=SUPPORT_MIN_NODES):
    pf = posterior_field(model, prior, x, md, support_min_nodes=support_min_nodes)
    return posterior_gradient(pf, md)


def kernel_value(x, x2, t: float, spec_dec: SpectralDecomposition, md: ManifoldData,
                 model: StatModel, prior: np.ndarray,
                 check_double_integral: bool = False,
                 form_tol: float = 1e-7) -> float:
    """K_t(x, x2): rho-weighted metric pairing of one posterior gradient with
    the heat-smoothed gradient of the other.

    t = 0 is allowed and means no smoothing (identity semigroup); with a
    complete eigenbasis it reproduces the plain gradient inner product.
    When check_double_integral is set, the same number is recomputed through
    heat-kernel blocks and a double node quadrature; disagreement beyond
    form_tol raises FormMismatch.
    """
    gx = _gradient_for(model, prior, x, md)
    gy = _gradient_for(model, prior, x2, md)
    smoothed = heat_apply(spec_dec, t, gy)
    b = md.rho.values[:, None, None] * md.g.values * md.grid.weight
    value = float(np.einsum("nk,nkl,nl->", gx, b, smoothed))
    if check_double_integral:
        if t <= 0:
            raise ShapeMismatch("the double-integral route needs t > 0")
        n = md.grid.n_nodes
        w = md.grid.weight
        rho = md.rho.values
        wq = np.exp(-spec_dec.eigenvalues * t)
        gx_low = np.einsum("nkl,nl->nk", md.g.values, gx)
        fy_low = np.einsum("qnk,nkl->qnl", spec_dec.fields, md.g.values)
        # assemble kernel-block rows explicitly and run both quadratures;
        # kept quadratic on purpose, this is the oracle route
        acc = 0.0
        for th in range(n):
            p_row = np.einsum("q,qk,qml->kml", wq, spec_dec.fields[:, th, :], fy_low)
            smoothed = np.einsum("kml,ml,m->k", p_row, gy, rho) * w
            acc += w * rho[th] * float(gx_low[th] @ smoothed)
        if abs(acc - value) > form_tol * max(abs(acc), abs(value), 1.0):
            raise FormMismatch(
                f"single-integral {value:.6e} and double-integral {acc:.6e} forms disagree")
    return value


def kernel_gram(samples, t: float, spec_dec: SpectralDecomposition, md: ManifoldData,
                model: StatModel, prior: np.ndarray, sample_ids=None) -> GramMatrix:
    """Full kernel matrix over the samples; symmetric by averaged assembly.

    Built from the spectral coefficients of the posterior gradients, so the
    matrix is a weighted Gram matrix and positive semidefinite up to
    roundoff.
    """
    samples = list(samples)
    if len(samples) < 1:
        raise ShapeMismatch("need at least one sample")
    if sample_ids is None:
        sample_ids = tuple(str(i) for i in range(len(samples)))
    coeffs = np.stack([
        spec_dec.coefficients(_gradient_for(model, prior, x, md)) for x in samples
    ])  # (n_samples, k)
    weighted = coeffs * np.exp(-spec_dec.eigenvalues * t)[None, :]
    raw = weighted @ coeffs.T
    matrix = (raw + raw.T) * 0.5
    return GramMatrix(sample_ids=tuple(sample_ids), samples=tuple(samples),
                      t=float(t), matrix=matrix)


def kernel_distance(x, y, t: float, spec_dec: SpectralDecomposition, md: ManifoldData,
                    model: StatModel, prior: np.ndarray) -> float:
    """Kernel-induced distance sqrt(K(x,x) + K(y,y) - 2 K(x,y)), clamped."""
    gram = kernel_gram([x, y], t, spec_dec, md, model, prior)
    m = gram.matrix
    return float(np.sqrt(max(m[0, 0] + m[1, 1] - 2.0 * m[0, 1], 0.0)))
