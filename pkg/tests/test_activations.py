"""Activation derivative checks against central finite differences."""

import numpy as np
import pytest

from kernelflow.activations import ERF, LINEAR, TANH, get_activation
from kernelflow.errors import UnsupportedOrderError

ACTS = (TANH, ERF, LINEAR)
TEST_POINTS = np.array([-3.0, -1.3, -0.4, 0.0, 0.2, 0.9, 2.1, 4.0])


@pytest.mark.parametrize("act", ACTS, ids=lambda a: a.name)
@pytest.mark.parametrize("order", [1, 2, 3, 4])
def test_derivative_matches_finite_difference(act, order):
    h = 1e-5
    lower = act.deriv(TEST_POINTS - h, order - 1)
    upper = act.deriv(TEST_POINTS + h, order - 1)
    fd = (upper - lower) / (2 * h)
    analytic = act.deriv(TEST_POINTS, order)
    scale = np.abs(analytic).max() + np.abs(fd).max() + 1e-12
    assert np.abs(analytic - fd).max() / scale < 1e-8


def test_known_values():
    assert TANH(0.0) == 0.0
    assert TANH.deriv(0.0, 1) == 1.0
    assert TANH.deriv(0.0, 2) == 0.0
    np.testing.assert_allclose(ERF.deriv(0.0, 1), 2 / np.sqrt(np.pi), rtol=1e-15)
    x = np.linspace(-2, 2, 7)
    np.testing.assert_array_equal(LINEAR(x), x)
    np.testing.assert_array_equal(LINEAR.deriv(x, 3), np.zeros_like(x))


def test_deriv_stack_consistent():
    x = TEST_POINTS
    for act in ACTS:
        stack = act.deriv_stack(x, 4)
        for k in range(5):
            np.testing.assert_array_equal(stack[k], act.deriv(x, k))


def test_unsupported_orders():
    with pytest.raises(UnsupportedOrderError):
        TANH.deriv(0.5, 5)
    with pytest.raises(UnsupportedOrderError):
        get_activation("relu")


def test_lookup_by_name():
    assert get_activation("erf") is ERF
