"""Exception types shared across the package."""


class KernelFlowError(Exception):
    """Base class for all package errors."""


class DomainError(KernelFlowError):
    """Input outside the mathematical domain (e.g. a non-PSD kernel)."""


class UnsupportedOrderError(KernelFlowError):
    """Requested derivative order is not implemented for this activation."""


class FlowError(KernelFlowError):
    """An integrator produced an invalid state (e.g. PSD loss)."""


class ConfigError(KernelFlowError):
    """Invalid configuration file or option combination."""


class DataError(KernelFlowError):
    """Required measured data is missing or on an incompatible grid."""


class UnavailableError(KernelFlowError):
    """Requested estimator was not tracked (e.g. heavy mode off)."""


class NumericError(KernelFlowError):
    """Non-finite values encountered during simulation."""
