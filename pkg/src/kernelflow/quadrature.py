"""Gauss-Hermite quadrature for 1D and 2D Gaussian expectations.

All bivariate expectations reduce to the 2x2 marginal of the kernel; the
marginal is Cholesky-factored and integrated on a tensor-product grid.
E_{N(0,1)}[f(Z)] = pi^{-1/2} * sum_i w_i f(sqrt(2) x_i) with (x_i, w_i) the
physicists' Hermite nodes/weights.

The default order is 320.  For tanh the integrands have poles at
+-i*pi/2, so the Gauss-Hermite error only decays like
exp(-c * sqrt(order) / sqrt(variance)); order 320 keeps every moment table
(activation derivatives up to order 4, kernel variances up to ~7) converged
to ~1e-6 or better, which the derivative-operator oracles require.  Nodes
and weights come from scipy, whose asymptotic method stays accurate at high
order where the companion-matrix route underflows.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_hermite

from .activations import Activation
from .errors import DomainError

DEFAULT_ORDER = 320
DEFAULT_RHO_MAX = 1.0 - 1e-9

_SQRT_PI = np.sqrt(np.pi)

# Variances below this (relative to the largest diagonal) are treated as an
# exactly degenerate direction.
_VAR_FLOOR = 1e-300


class ClampCounter:
    """Monotone, thread-safe counter for near-degenerate correlation clamps."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def bump(self, k: int = 1) -> None:
        with self._lock:
            self._count += k

    @property
    def count(self) -> int:
        with self._lock:
            return self._count


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Hermite rule for standard Gaussian expectations.

    ``order`` points integrate polynomials up to degree 2*order-1 exactly.
    Correlations with |rho| > rho_max are clamped and counted instead of
    switching to a separate 1D limit formula.
    """

    order: int = DEFAULT_ORDER
    rho_max: float = DEFAULT_RHO_MAX
    nodes: np.ndarray = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)
    clamps: ClampCounter = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        x, w = roots_hermite(self.order)
        object.__setattr__(self, "nodes", np.sqrt(2.0) * x)
        object.__setattr__(self, "weights", w / _SQRT_PI)
        object.__setattr__(self, "clamps", ClampCounter())

    def expect_1d(self, f, var: float) -> float:
        """E[f(z)] for z ~ N(0, var)."""
        if var < 0:
            raise DomainError(f"negative variance {var} in 1D expectation")
        z = np.sqrt(var) * self.nodes
        return float(self.weights @ f(z))

    def moment_table_1d(self, act: Activation, var: float, max_order: int) -> np.ndarray:
        """Table T[p, q] = E[act^(p)(z) act^(q)(z)], z ~ N(0, var), p,q <= max_order."""
        if var < 0:
            raise DomainError(f"negative variance {var} in 1D moment table")
        z = np.sqrt(max(var, 0.0)) * self.nodes
        d = act.deriv_stack(z, max_order)
        return (d * self.weights) @ d.T

    def moment_table_2d(
        self,
        act: Activation,
        vaa: float,
        vbb: float,
        cab: float,
        max_order: int,
    ) -> np.ndarray:
        """Table T[p, q] = E[act^(p)(z_a) act^(q)(z_b)] for the 2x2 marginal.

        The marginal [[vaa, cab], [cab, vbb]] must be PSD up to round-off;
        a correlation magnitude above rho_max is clamped (counted) so that a
        single code path covers duplicated inputs at zero bias.
        """
        if vaa < 0 or vbb < 0:
            raise DomainError(f"negative diagonal in 2x2 marginal: ({vaa}, {vbb})")
        scale = max(vaa, vbb, _VAR_FLOOR)
        if vaa <= _VAR_FLOOR * scale or vbb <= _VAR_FLOOR * scale:
            # Degenerate direction: the corresponding coordinate is exactly 0.
            cab = 0.0
        else:
            denom = np.sqrt(vaa * vbb)
            rho = cab / denom
            if abs(rho) > 1.0 + 1e-8:
                raise DomainError(
                    f"non-PSD 2x2 marginal: |rho| = {abs(rho):.12g} > 1"
                )
            if abs(rho) > self.rho_max:
                cab = np.sign(cab) * self.rho_max * denom
                self.clamps.bump()
        la = np.sqrt(vaa)
        lba = cab / la if la > 0 else 0.0
        lbb_sq = vbb - lba * lba
        if lbb_sq < -1e-12 * scale:
            raise DomainError(f"non-PSD 2x2 marginal (Cholesky residual {lbb_sq})")
        lbb = np.sqrt(max(lbb_sq, 0.0))

        za = la * self.nodes  # (m,)
        zb = lba * self.nodes[:, None] + lbb * self.nodes[None, :]  # (m, m)
        da = act.deriv_stack(za, max_order)  # (k, m)
        db = act.deriv_stack(zb, max_order)  # (k, m, m)
        # Contract the inner node axis first; cheaper than a full einsum.
        dbw = db @ self.weights  # (k, m)
        return (da * self.weights) @ dbw.T
