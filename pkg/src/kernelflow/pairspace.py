"""The symmetric-pair index space.

A symmetric N x N object is flattened to the P = N(N+1)/2 unordered pairs
(a, b) with a <= b; operators on kernels (susceptibility, fluctuation
covariance, noise source) live on this space as dense P x P arrays.
Partial derivatives with respect to an off-diagonal entry use the
symmetrized convention: the perturbation bumps K_ab and K_ba together, and
sums over pair indices count each unordered pair once.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


def pair_count(n_points: int) -> int:
    return n_points * (n_points + 1) // 2


@lru_cache(maxsize=None)
def pair_list(n_points: int) -> np.ndarray:
    """Array of shape (P, 2): the unordered pairs (a, b), a <= b, in canonical order."""
    pairs = [(a, b) for a in range(n_points) for b in range(a, n_points)]
    return np.array(pairs, dtype=np.int64)


@lru_cache(maxsize=None)
def pair_index(n_points: int) -> np.ndarray:
    """(N, N) lookup: linear offset of the unordered pair {a, b}."""
    idx = np.empty((n_points, n_points), dtype=np.int64)
    for k, (a, b) in enumerate(pair_list(n_points)):
        idx[a, b] = k
        idx[b, a] = k
    return idx


def to_pairvec(k: np.ndarray) -> np.ndarray:
    """Flatten a symmetric matrix to its P upper-triangle values."""
    n = k.shape[0]
    pl = pair_list(n)
    return np.asarray(k)[pl[:, 0], pl[:, 1]].astype(float)


def from_pairvec(v: np.ndarray, n_points: int) -> np.ndarray:
    """Inverse of :func:`to_pairvec`."""
    out = np.zeros((n_points, n_points))
    pl = pair_list(n_points)
    out[pl[:, 0], pl[:, 1]] = v
    out[pl[:, 1], pl[:, 0]] = v
    return out


def wishart_pair_product(k: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Pair operator M_{(ab),(cd)} = K_ac Q_bd + K_ad Q_bc + K_bc Q_ad + K_bd Q_ac."""
    k = np.asarray(k, dtype=float)
    q = np.asarray(q, dtype=float)
    pl = pair_list(k.shape[0])
    a, b = pl[:, 0], pl[:, 1]
    c, d = a[None, :], b[None, :]
    a, b = a[:, None], b[:, None]
    return k[a, c] * q[b, d] + k[a, d] * q[b, c] + k[b, c] * q[a, d] + k[b, d] * q[a, c]


def omega(k: np.ndarray) -> np.ndarray:
    """Conditional-Wishart pair operator: Omega_{(ab),(cd)} = K_ac K_bd + K_ad K_bc.

    Shares the assembly routine with the noise source (with Q replaced by K
    the four-term product halves into the two-term Wishart covariance).
    """
    return 0.5 * wishart_pair_product(k, k)
