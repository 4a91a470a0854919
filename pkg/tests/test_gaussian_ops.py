"""Gaussian-expectation operators against their independent oracles."""

import numpy as np
import pytest

from kernelflow.activations import ERF, LINEAR, TANH
from kernelflow.errors import DomainError, UnsupportedOrderError
from kernelflow.gaussian_ops import (
    chi,
    check_kernel,
    d2q_contract,
    e2,
    e2_general,
    omega,
    q_map,
    sigma_source,
)
from kernelflow.pairspace import pair_index, pair_list
from kernelflow.quadrature import QuadratureRule

from oracles import chi_fd, d2q_fd, random_psd_kernels

QUAD = QuadratureRule()
PAPER_K0 = 0.7 * 2.0 * np.eye(4) + 0.3 * 2.0 * np.ones((4, 4))
CW = 2.0

# exact (adaptive-quadrature verified) second moment of tanh at variance 2
E2_TANH_VAR2 = 0.5199757456639486


class TestE2:
    def test_linear_identity(self):
        for k in random_psd_kernels(5, 4, seed=0):
            np.testing.assert_allclose(e2(k, LINEAR, QUAD), k, rtol=0, atol=1e-12)

    def test_tanh_diagonal_value(self):
        k = np.array([[2.0]])
        assert abs(e2(k, TANH, QUAD)[0, 0] - E2_TANH_VAR2) < 1e-12

    def test_zero_kernel(self):
        np.testing.assert_array_equal(e2(np.zeros((3, 3)), TANH, QUAD), np.zeros((3, 3)))

    def test_symmetric_psd_output(self):
        for k in random_psd_kernels(8, 5, seed=1):
            out = e2(k, TANH, QUAD)
            np.testing.assert_array_equal(out, out.T)
            lam = np.linalg.eigvalsh(out)
            assert lam.min() >= -1e-8

    def test_non_psd_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        with pytest.raises(DomainError):
            e2(bad, TANH, QUAD)


class TestQMap:
    def test_linear_closed_form(self):
        k = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_allclose(q_map(k, 2.0, 0.0, LINEAR, QUAD), 2.0 * k, atol=1e-12)

    def test_tanh_diagonal(self):
        q = q_map(PAPER_K0, 2.0, 0.0, TANH, QUAD)
        assert abs(q[0, 0] - 2.0 * E2_TANH_VAR2) < 1e-12

    def test_zero_weight_variance(self):
        k = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_array_equal(
            q_map(k, 0.0, 1.7, TANH, QUAD), 1.7 * np.ones((2, 2))
        )


class TestE2General:
    def test_reduces_to_e2(self):
        k = PAPER_K0
        base = e2(k, TANH, QUAD)
        for a in range(4):
            for b in range(4):
                assert abs(e2_general(k, 0, 0, a, b, TANH, QUAD) - base[a, b]) < 1e-12

    def test_linear_first_derivatives(self):
        k = PAPER_K0
        assert e2_general(k, 1, 1, 0, 1, LINEAR, QUAD) == pytest.approx(1.0, abs=1e-12)

    def test_against_monte_carlo(self):
        # E[sigma''(z_a) sigma(z_b)] at a correlated 2x2 marginal
        vaa = vbb = 2.0
        cab = 0.6
        val = e2_general(
            np.array([[vaa, cab], [cab, vbb]]), 2, 0, 0, 1, TANH, QUAD
        )
        rng = np.random.default_rng(42)
        m = 10_000_000
        za = rng.normal(size=m) * np.sqrt(vaa)
        zb = cab / vaa * za + rng.normal(size=m) * np.sqrt(vbb - cab**2 / vaa)
        samples = TANH.deriv(za, 2) * np.tanh(zb)
        mc = samples.mean()
        se = samples.std() / np.sqrt(m)
        assert abs(val - mc) < 4 * se

    def test_unsupported_order(self):
        with pytest.raises(UnsupportedOrderError):
            e2_general(PAPER_K0, 3, 2, 0, 1, TANH, QUAD)


class TestChi:
    def test_linear_is_scaled_identity(self):
        c = chi(PAPER_K0, CW, LINEAR, QUAD)
        np.testing.assert_allclose(c, CW * np.eye(10), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("act", [TANH, ERF], ids=lambda a: a.name)
    def test_matches_finite_differences(self, act):
        kernels = random_psd_kernels(10, 3, seed=7) + [PAPER_K0[:3, :3]]
        for k in kernels:
            c = chi(k, CW, act, QUAD)
            c_fd = chi_fd(k, CW, act, QUAD)
            assert np.abs(c - c_fd).max() / np.abs(c).max() < 1e-6

    def test_paper_kernel_against_fd(self):
        c = chi(PAPER_K0, CW, TANH, QUAD)
        c_fd = chi_fd(PAPER_K0, CW, TANH, QUAD)
        assert np.abs(c - c_fd).max() / np.abs(c).max() < 1e-6

    def test_locality_pattern(self):
        c = chi(PAPER_K0, CW, TANH, QUAD)
        idx = pair_index(4)
        pl = pair_list(4)
        for i, (a, b) in enumerate(pl):
            allowed = {idx[a, a], idx[a, b], idx[b, b]}
            for j in range(len(pl)):
                if j not in allowed:
                    assert c[i, j] == 0.0


class TestD2Q:
    def test_linear_vanishes(self):
        v = omega(PAPER_K0)
        out = d2q_contract(PAPER_K0, v, CW, LINEAR, QUAD)
        np.testing.assert_array_equal(out, np.zeros((4, 4)))

    def test_zero_operator(self):
        out = d2q_contract(PAPER_K0, np.zeros((10, 10)), CW, TANH, QUAD)
        np.testing.assert_array_equal(out, np.zeros((4, 4)))

    @pytest.mark.parametrize("act", [TANH, ERF], ids=lambda a: a.name)
    def test_matches_richardson_fd(self, act):
        for k in random_psd_kernels(6, 3, seed=17):
            v = omega(k)
            ours = d2q_contract(k, v, CW, act, QUAD)
            ref = d2q_fd(k, v, CW, act, QUAD)
            assert np.abs(ours - ref).max() / np.abs(ours).max() < 1e-4

    def test_wishart_contraction_on_paper_kernel(self):
        v = omega(PAPER_K0)
        ours = d2q_contract(PAPER_K0, v, CW, TANH, QUAD)
        ref = d2q_fd(PAPER_K0, v, CW, TANH, QUAD)
        assert np.abs(ours - ref).max() / np.abs(ours).max() < 1e-4

    def test_asymmetric_operator_warns_and_symmetrizes(self):
        v = omega(PAPER_K0)
        v_skew = v.copy()
        v_skew[0, 1] += 0.5
        with pytest.warns(RuntimeWarning):
            out = d2q_contract(PAPER_K0, v_skew, CW, TANH, QUAD)
        sym = d2q_contract(PAPER_K0, 0.5 * (v_skew + v_skew.T), CW, TANH, QUAD)
        np.testing.assert_allclose(out, sym, rtol=1e-14)


class TestSigmaSource:
    def test_exact_value_at_initial_kernel(self):
        # 4 * C_W * K_00 * E2_00 with the adaptive-quadrature second moment
        sig = sigma_source(PAPER_K0, CW, 0.0, TANH, QUAD)
        assert abs(sig[0, 0] - 16.0 * E2_TANH_VAR2) < 1e-11

    def test_linear_closed_form(self):
        k = np.array([[2.0, 0.1], [0.1, 1.0]])
        sig = sigma_source(k, 2.0, 0.5, LINEAR, QUAD)
        q = 0.5 + 2.0 * k
        assert sig[0, 0] == pytest.approx(4 * k[0, 0] * q[0, 0], rel=1e-12)

    def test_symmetric_psd(self):
        for k in random_psd_kernels(6, 4, seed=23):
            sig = sigma_source(k, CW, 0.1, TANH, QUAD)
            np.testing.assert_allclose(sig, sig.T, atol=1e-12)
            lam = np.linalg.eigvalsh(0.5 * (sig + sig.T))
            assert lam.min() >= -1e-8 * lam.max()


def test_check_kernel_symmetrizes():
    k = np.array([[1.0, 0.2], [0.2 + 1e-13, 1.0]])
    out = check_kernel(k)
    np.testing.assert_array_equal(out, out.T)
    with pytest.raises(DomainError):
        check_kernel(np.array([[1.0, 0.0], [0.0, -0.5]]))
