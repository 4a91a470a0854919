"""Smooth activations with analytic derivatives up to order 4.

Fourth derivatives are needed by the iterated integration-by-parts rule
behind the Hessian contraction; everything is expressed through tanh/sech^2
or the Gaussian kernel so the formulas stay stable for large arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf as _erf

from .errors import UnsupportedOrderError

MAX_DERIVATIVE_ORDER = 4

# Integer codes shared with the compiled simulation kernels.
ACT_TANH = 0
ACT_ERF = 1
ACT_LINEAR = 2

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)


def _tanh_from_t(t: np.ndarray, order: int) -> np.ndarray:
    u = 1.0 - t * t
    if order == 0:
        return t
    if order == 1:
        return u
    if order == 2:
        return -2.0 * t * u
    if order == 3:
        return u * (6.0 * t * t - 2.0)
    if order == 4:
        return t * u * (16.0 - 24.0 * t * t)
    raise UnsupportedOrderError(f"tanh derivative order {order} not implemented")


def _tanh_derivs(x: np.ndarray, order: int) -> np.ndarray:
    return _tanh_from_t(np.tanh(x), order)


def _erf_derivs(x: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return _erf(x)
    g = _TWO_OVER_SQRT_PI * np.exp(-x * x)
    if order == 1:
        return g
    if order == 2:
        return -2.0 * x * g
    if order == 3:
        return (4.0 * x * x - 2.0) * g
    if order == 4:
        return (12.0 * x - 8.0 * x**3) * g
    raise UnsupportedOrderError(f"erf derivative order {order} not implemented")


def _erf_stack(x: np.ndarray, max_order: int) -> np.ndarray:
    out = np.empty((max_order + 1,) + x.shape)
    out[0] = _erf(x)
    if max_order >= 1:
        g = _TWO_OVER_SQRT_PI * np.exp(-x * x)
        polys = (None, 1.0, -2.0 * x, 4.0 * x * x - 2.0, 12.0 * x - 8.0 * x**3)
        for k in range(1, max_order + 1):
            out[k] = g if k == 1 else polys[k] * g
    return out


def _linear_derivs(x: np.ndarray, order: int) -> np.ndarray:
    if order == 0:
        return np.asarray(x, dtype=float)
    if order == 1:
        return np.ones_like(np.asarray(x, dtype=float))
    if order <= MAX_DERIVATIVE_ORDER:
        return np.zeros_like(np.asarray(x, dtype=float))
    raise UnsupportedOrderError(f"linear derivative order {order} not implemented")


@dataclass(frozen=True)
class Activation:
    """An activation together with its derivatives.

    ``deriv(x, k)`` returns the k-th derivative, k = 0..4; ``k = 0`` is the
    activation itself.
    """

    name: str
    code: int
    _deriv: Callable[[np.ndarray, int], np.ndarray] = field(repr=False)

    def __call__(self, x):
        return self._deriv(np.asarray(x, dtype=float), 0)

    def deriv(self, x, order: int = 1):
        if not 0 <= order <= MAX_DERIVATIVE_ORDER:
            raise UnsupportedOrderError(
                f"{self.name}: derivative order {order} outside 0..{MAX_DERIVATIVE_ORDER}"
            )
        return self._deriv(np.asarray(x, dtype=float), order)

    def deriv_stack(self, x, max_order: int) -> np.ndarray:
        """All derivatives 0..max_order stacked on a new leading axis.

        Shares the transcendental evaluation across orders; the quadrature
        tables are built from this.
        """
        if not 0 <= max_order <= MAX_DERIVATIVE_ORDER:
            raise UnsupportedOrderError(
                f"{self.name}: derivative order {max_order} outside 0..{MAX_DERIVATIVE_ORDER}"
            )
        x = np.asarray(x, dtype=float)
        if self.code == ACT_TANH:
            t = np.tanh(x)
            return np.stack([_tanh_from_t(t, k) for k in range(max_order + 1)])
        if self.code == ACT_ERF:
            return _erf_stack(x, max_order)
        return np.stack([self._deriv(x, k) for k in range(max_order + 1)])


TANH = Activation("tanh", ACT_TANH, _tanh_derivs)
ERF = Activation("erf", ACT_ERF, _erf_derivs)
LINEAR = Activation("linear", ACT_LINEAR, _linear_derivs)

_BY_NAME = {a.name: a for a in (TANH, ERF, LINEAR)}


def get_activation(name: str) -> Activation:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnsupportedOrderError(
            f"unknown activation {name!r}; choose from {sorted(_BY_NAME)}"
        ) from None
