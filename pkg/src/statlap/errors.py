"""Exception and warning types shared across the package."""


class StatlapError(Exception):
    """Base class for all package-specific errors."""


class SingularMetric(StatlapError):
    """Metric failed the positive-definiteness / conditioning check at a node."""

    def __init__(self, node, cond_estimate, message=None):
        self.node = node
        self.cond_estimate = cond_estimate
        super().__init__(
            message
            or f"metric not usable at node {node} (condition estimate {cond_estimate:.3e})"
        )


class ShapeMismatch(StatlapError):
    """Tensor ranks, dimensions or grids of the operands disagree."""


class NoClosedForm(StatlapError):
    """The model does not provide closed-form metric / cubic tensor expressions."""


class ParameterOutOfRange(StatlapError):
    """A parameter value lies outside the model's valid region."""


class ConvergenceFailure(StatlapError):
    """Iterative eigensolver did not converge within its iteration cap."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class FormMismatch(StatlapError):
    """Two algebraically equivalent evaluation routes disagreed beyond tolerance."""


class InternalInconsistency(StatlapError):
    """Cross-check between two discretizations of the same operator failed."""


class ZeroEvidence(StatlapError):
    """Posterior normalization constant underflowed to (numerically) zero."""


class UnderResolvedPosterior(StatlapError):
    """Posterior support covers too few grid nodes for reliable gradients."""


class ConfigError(StatlapError):
    """Run configuration is malformed or fails schema validation."""


class TruncationWarning(UserWarning):
    """Spectral truncation tail bound exceeds the requested tolerance."""
