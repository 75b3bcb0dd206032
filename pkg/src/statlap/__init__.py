"""Vector Laplacian, heat kernels and diffusion distances on statistical
manifolds with density, on periodic rectangular charts."""

from .errors import (
    ConfigError,
    ConvergenceFailure,
    FormMismatch,
    InternalInconsistency,
    NoClosedForm,
    ParameterOutOfRange,
    ShapeMismatch,
    SingularMetric,
    StatlapError,
    TruncationWarning,
    UnderResolvedPosterior,
    ZeroEvidence,
)
from .geometry import (
    ConnectionField,
    Grid,
    ManifoldData,
    SYNTHETIC_PRESETS,
    TensorField,
    alpha_connection_pair,
    build_manifold,
    christoffel_lc,
    density_field,
    difference_tensor,
    invert_metric,
    synthetic_manifold,
)
from .kernels import (
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
from .models import (
    MCEstimate,
    StatModel,
    ac_tensor_mc,
    eval_closed_form,
    fisher_mc,
    get_model,
    loglik_grad_field,
    model_grid,
)
from .operators import (
    DiscreteOperator,
    InnerProductData,
    apply_adjoint,
    apply_strong_laplacian,
    assemble_weak_laplacian,
    connection_laplacian_riemannian,
    covariant_derivative,
    covariant_derivative_apply,
    divergence_f,
    divergence_riemannian,
    inner_product_data,
    weighted_integral,
)
from .spectral import (
    HeatKernelBlock,
    SpectralDecomposition,
    decomposition_for_time,
    eigendecompose,
    heat_apply,
    heat_kernel_block,
    vdd_matrix,
    vector_diffusion_distance,
)

__version__ = "0.1.0"
