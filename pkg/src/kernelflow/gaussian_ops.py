"""Kernel-space Gaussian operators.

Given a PSD kernel K over the input points, this module evaluates

* ``e2``            -- E[sigma(z_a) sigma(z_b)] under N(0, K),
* ``q_map``         -- C_b + C_W * e2(K),
* ``chi``           -- the first Frechet derivative of q_map on pair space,
* ``d2q_contract``  -- the second Frechet derivative contracted with a pair
  operator,
* ``sigma_source``  -- the four-term kernel/drift product sourcing the
  fluctuation covariance,
* ``omega``         -- the Wishart pair operator.

Every entry depends only on a 2x2 (or 1x1) marginal of K.  Derivatives are
computed by Gaussian integration by parts (Price's theorem): differentiating
an expectation with respect to an off-diagonal covariance entry inserts the
mixed second derivative of the integrand, and a diagonal entry inserts half
the pure second derivative.  Because the integrand sigma(z_a) sigma(z_b)
involves only two coordinates, rows of the derivative operators vanish
outside {c, d} subset {a, b}.  Finite differences are kept out of the
production path and appear only as test oracles.
"""

from __future__ import annotations

import warnings

import numpy as np

from .activations import Activation
from .errors import DomainError, UnsupportedOrderError
from .pairspace import (
    from_pairvec,
    omega,
    pair_count,
    pair_index,
    pair_list,
    to_pairvec,
    wishart_pair_product,
)
from .quadrature import QuadratureRule

__all__ = [
    "check_kernel",
    "e2",
    "q_map",
    "e2_general",
    "chi",
    "d2q_contract",
    "sigma_source",
    "omega",
    "KernelTables",
]

DEFAULT_PSD_TOL = 1e-10


def check_kernel(k: np.ndarray, tol_psd: float = DEFAULT_PSD_TOL) -> np.ndarray:
    """Symmetrize and validate a kernel matrix.

    The PSD tolerance is relative to the trace, guarding against round-off
    accumulated by the flows without masking genuine integrator bugs.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise DomainError(f"kernel must be square, got shape {k.shape}")
    sym = 0.5 * (k + k.T)
    if np.any(np.diag(sym) < 0):
        raise DomainError("kernel has a negative diagonal entry")
    scale = max(float(np.trace(sym)), np.finfo(float).tiny)
    lam_min = float(np.linalg.eigvalsh(sym)[0])
    if lam_min < -tol_psd * scale:
        raise DomainError(
            f"kernel is not PSD: min eigenvalue {lam_min:.3e} < -{tol_psd:.0e} * trace"
        )
    return sym


class KernelTables:
    """Per-kernel cache of 1D/2D activation moment tables.

    Building the tables once per kernel lets the flows evaluate e2, chi and
    the Hessian contraction from a single quadrature pass.
    """

    def __init__(
        self,
        k: np.ndarray,
        act: Activation,
        quad: QuadratureRule,
        max_order: int,
        tol_psd: float = DEFAULT_PSD_TOL,
    ):
        self.k = check_kernel(k, tol_psd)
        self.n = self.k.shape[0]
        self.act = act
        self.quad = quad
        self.max_order = max_order
        self._diag: dict[int, np.ndarray] = {}
        self._off: dict[tuple[int, int], np.ndarray] = {}

    def table_1d(self, a: int) -> np.ndarray:
        t = self._diag.get(a)
        if t is None:
            t = self.quad.moment_table_1d(self.act, self.k[a, a], self.max_order)
            self._diag[a] = t
        return t

    def table_2d(self, a: int, b: int) -> np.ndarray:
        if a == b:
            return self.table_1d(a)
        if a > b:
            return self.table_2d(b, a).T
        t = self._off.get((a, b))
        if t is None:
            t = self.quad.moment_table_2d(
                self.act, self.k[a, a], self.k[b, b], self.k[a, b], self.max_order
            )
            self._off[(a, b)] = t
        return t

    # -- assembled operators ------------------------------------------------

    def e2(self) -> np.ndarray:
        out = np.empty((self.n, self.n))
        for a in range(self.n):
            out[a, a] = self.table_1d(a)[0, 0]
            for b in range(a + 1, self.n):
                out[a, b] = out[b, a] = self.table_2d(a, b)[0, 0]
        return out

    def q(self, cw: float, cb: float) -> np.ndarray:
        return cb + cw * self.e2()

    def chi(self, cw: float) -> np.ndarray:
        """First derivative of q_map as a dense operator on pair space."""
        if self.max_order < 2:
            raise UnsupportedOrderError("chi needs moment tables of order >= 2")
        p = pair_count(self.n)
        idx = pair_index(self.n)
        out = np.zeros((p, p))
        for a in range(self.n):
            t1 = self.table_1d(a)
            out[idx[a, a], idx[a, a]] = cw * (t1[1, 1] + t1[0, 2])
            for b in range(a + 1, self.n):
                t = self.table_2d(a, b)
                row = idx[a, b]
                out[row, idx[a, b]] = cw * t[1, 1]
                out[row, idx[a, a]] = 0.5 * cw * t[2, 0]
                out[row, idx[b, b]] = 0.5 * cw * t[0, 2]
        return out

    def d2q_tensor(self, cw: float) -> np.ndarray:
        """Hessian of q_map as a (P, P, P) tensor: row pair x two derivative pairs.

        Entry [r, A, B] is the second partial of the row-r entry of q_map with
        respect to the unordered pairs A and B; rows vanish outside the
        locality pattern {c, d} subset {a, b}.
        """
        if self.max_order < 4:
            raise UnsupportedOrderError("d2q_tensor needs moment tables of order >= 4")
        p = pair_count(self.n)
        idx = pair_index(self.n)
        out = np.zeros((p, p, p))
        for a in range(self.n):
            t1 = self.table_1d(a)
            iaa = idx[a, a]
            out[iaa, iaa, iaa] = cw * (1.5 * t1[2, 2] + 2.0 * t1[1, 3] + 0.5 * t1[0, 4])
            for b in range(a + 1, self.n):
                t = self.table_2d(a, b)
                r = idx[a, b]
                jaa, jbb = idx[a, a], idx[b, b]
                out[r, r, r] = cw * t[2, 2]
                out[r, jaa, jaa] = cw * 0.25 * t[4, 0]
                out[r, jbb, jbb] = cw * 0.25 * t[0, 4]
                out[r, jaa, r] = out[r, r, jaa] = cw * 0.5 * t[3, 1]
                out[r, jbb, r] = out[r, r, jbb] = cw * 0.5 * t[1, 3]
                out[r, jaa, jbb] = out[r, jbb, jaa] = cw * 0.25 * t[2, 2]
        return out

    def d2q_contract(self, v: np.ndarray, cw: float) -> np.ndarray:
        """Hessian of q_map contracted with the pair operator v.

        The contraction sums over both pair slots independently, which is what
        produces the combinatorial 1/2 factors of the symmetrized convention;
        the overall 1/2 of the one-loop source term is applied by callers.
        """
        v = np.asarray(v, dtype=float)
        p = pair_count(self.n)
        if v.shape != (p, p):
            raise DomainError(f"pair operator must have shape ({p}, {p}), got {v.shape}")
        if not np.allclose(v, v.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(v).max())):
            warnings.warn(
                "d2q_contract received an asymmetric pair operator; "
                "contracting with its symmetric part",
                RuntimeWarning,
                stacklevel=2,
            )
        v = 0.5 * (v + v.T)
        vec = np.einsum("rab,ab->r", self.d2q_tensor(cw), v)
        return from_pairvec(vec, self.n)


def e2(k: np.ndarray, act: Activation, quad: QuadratureRule) -> np.ndarray:
    """E[sigma(z_a) sigma(z_b)] under N(0, K), entrywise over the 2x2 marginals."""
    return KernelTables(k, act, quad, max_order=0).e2()


def q_map(
    k: np.ndarray, cw: float, cb: float, act: Activation, quad: QuadratureRule
) -> np.ndarray:
    return cb + cw * e2(k, act, quad)


def e2_general(
    k: np.ndarray,
    p: int,
    q: int,
    a: int,
    b: int,
    act: Activation,
    quad: QuadratureRule,
) -> float:
    """E[sigma^(p)(z_a) sigma^(q)(z_b)] under N(0, K)."""
    if p < 0 or q < 0 or p + q > 4:
        raise UnsupportedOrderError(
            f"derivative orders (p, q) = ({p}, {q}) unsupported; need p, q >= 0, p + q <= 4"
        )
    tables = KernelTables(k, act, quad, max_order=max(p, q))
    return float(tables.table_2d(a, b)[p, q])


def chi(k: np.ndarray, cw: float, act: Activation, quad: QuadratureRule) -> np.ndarray:
    """Susceptibility operator on pair space; apply to a pair vector for chi_K[v]."""
    return KernelTables(k, act, quad, max_order=2).chi(cw)


def d2q_contract(
    k: np.ndarray, v: np.ndarray, cw: float, act: Activation, quad: QuadratureRule
) -> np.ndarray:
    return KernelTables(k, act, quad, max_order=4).d2q_contract(v, cw)


def sigma_source(
    k: np.ndarray, cw: float, cb: float, act: Activation, quad: QuadratureRule
) -> np.ndarray:
    """Noise-source pair operator Sigma_{(ab),(cd)} = K_ac Q_bd + 3 permutations."""
    kk = check_kernel(k)
    return wishart_pair_product(kk, q_map(kk, cw, cb, act, quad))


def apply_pair_operator(op: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Apply a P x P pair operator to a symmetric matrix, returning a matrix."""
    return from_pairvec(op @ to_pairvec(kernel), kernel.shape[0])
