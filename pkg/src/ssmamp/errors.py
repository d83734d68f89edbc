"""Exception types raised across the package."""


class SSMampError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(SSMampError, ValueError):
    pass


class SingularLBanded(SSMampError, ValueError):
    """L-banded matrix with repeated (or zero trailing) diagonal entries."""


class MissingPrev(SSMampError, ValueError):
    """Singular covariance at t > 1 with no previous damping vector to extend."""


class SingularKKT(SSMampError, ValueError):
    pass


class InvalidSpec(SSMampError, ValueError):
    pass


class NonpositiveVariance(SSMampError, ValueError):
    pass


class DivergenceAtOne(SSMampError, ValueError):
    """Denoiser divergence too close to 1 for the orthogonalization to exist."""


class NonFiniteIterate(SSMampError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigMismatch(SSMampError, ValueError):
    pass


class ConfigError(SSMampError, ValueError):
    pass
