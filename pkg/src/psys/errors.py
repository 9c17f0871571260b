"""Exception hierarchy."""


class PsysError(Exception):
    """Base class for all package errors."""


class ModelError(PsysError, ValueError):
    """Invalid process model (e.g. a covariance block that is not PSD)."""


class DegenerateCovarianceError(ModelError):
    """Factorization of a covariance failed even after jitter escalation."""


class UnsupportedModelError(PsysError):
    """Operation needs a closed-form (Gaussian) model."""


class MeasureError(PsysError, ValueError):
    """Invalid intensity measure or box."""


class SignedMeasureError(MeasureError):
    """Simulation was requested for a signed measure."""


class EnvelopeError(MeasureError):
    """Rejection sampler acceptance rate is too small to be useful."""


class GridTooSmallError(PsysError, ValueError):
    """Grid leaves no valid interior after the kernel margin is removed."""


class ConfigError(PsysError, ValueError):
    """Scenario file does not match the schema."""
