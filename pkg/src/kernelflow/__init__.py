"""Finite-width residual-network kernel statistics.

Exact Monte-Carlo simulation of pre-activation residual ensembles at
initialization, deterministic integration of the background/covariance/mean
kernel flow hierarchy, and the validation diagnostics comparing the two.
"""

__version__ = "0.1.0"

from .activations import Activation, get_activation
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    FlowError,
    KernelFlowError,
    NumericError,
    UnavailableError,
    UnsupportedOrderError,
)
from .gaussian_ops import (
    chi,
    d2q_contract,
    e2,
    e2_general,
    omega,
    q_map,
    sigma_source,
)
from .quadrature import QuadratureRule
from .rng import SeedPolicy
from .simulate import (
    EnsembleAccumulator,
    EnsembleEstimates,
    NetworkConfig,
    run_ensemble,
    simulate_member,
)
from .flows import (
    FlowTrajectory,
    IntegratorConfig,
    build_flow_ops,
    flow_k0,
    flow_k1_eft,
    flow_k1_u1ex,
    flow_v4,
    k1_integral_form,
    response_propagator,
    v4_integral_form,
)
from .diagnostics import (
    ResidualReport,
    SweepSpec,
    bridge_check,
    compare_sigma_sources,
    hierarchy_residual,
    residual_rv4,
    run_sweep,
    u1_sources,
)

__all__ = [
    "Activation",
    "ConfigError",
    "DataError",
    "DomainError",
    "EnsembleAccumulator",
    "EnsembleEstimates",
    "FlowError",
    "FlowTrajectory",
    "IntegratorConfig",
    "KernelFlowError",
    "NetworkConfig",
    "NumericError",
    "QuadratureRule",
    "ResidualReport",
    "SeedPolicy",
    "SweepSpec",
    "UnavailableError",
    "UnsupportedOrderError",
    "bridge_check",
    "build_flow_ops",
    "chi",
    "compare_sigma_sources",
    "d2q_contract",
    "e2",
    "e2_general",
    "flow_k0",
    "flow_k1_eft",
    "flow_k1_u1ex",
    "flow_v4",
    "get_activation",
    "hierarchy_residual",
    "k1_integral_form",
    "omega",
    "q_map",
    "residual_rv4",
    "response_propagator",
    "run_ensemble",
    "run_sweep",
    "sigma_source",
    "simulate_member",
    "u1_sources",
    "v4_integral_form",
]
