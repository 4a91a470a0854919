"""Counter-based random streams (Philox-4x64-10).

Every (member, layer, role) triple owns a disjoint counter block of the
Philox keyed family, so streams are independent and reproducible no matter
how the ensemble is scheduled across threads or processes.  The same
integer recurrence is implemented twice: vectorized numpy here (the
fallback backend and the test reference) and scalar in the compiled
kernels.  Outputs are verified bit-for-bit against ``numpy.random.Philox``.

Counter layout (little word first):

    word 0: draw tick within the stream (4 values per tick)
    word 1: ensemble member index
    word 2: (layer << 3) | role
    word 3: constant stream salt

Key: (master_seed, KEY_SALT).

Normals come from the Box-Muller transform of 53-bit uniforms; one tick
yields four normals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
PHILOX_M1 = np.uint64(0xCA5A826395121157)
PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
PHILOX_ROUNDS = 10

KEY_SALT = np.uint64(0x6B65726E666C6F77)
COUNTER_SALT = np.uint64(0x01)

# Role channels inside a layer.
ROLE_INIT = 0
ROLE_INCREMENT = 1
ROLE_WEIGHTS = 2
ROLE_BIASES = 3

_MASK32 = np.uint64(0xFFFFFFFF)
_INV53 = float(2.0**-53)


def _mulhilo(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full 64x64 -> 128 bit product via 32-bit limbs, (lo, hi)."""
    lo = a * b
    a_lo = a & _MASK32
    a_hi = a >> np.uint64(32)
    b_lo = b & _MASK32
    b_hi = b >> np.uint64(32)
    t = a_hi * b_lo + ((a_lo * b_lo) >> np.uint64(32))
    w1 = t & _MASK32
    w2 = t >> np.uint64(32)
    t2 = a_lo * b_hi + w1
    hi = a_hi * b_hi + w2 + (t2 >> np.uint64(32))
    return lo, hi


def _key_schedule(key0: np.uint64, key1: np.uint64) -> np.ndarray:
    """(rounds, 2) uint64 key schedule, computed without wraparound warnings."""
    mask = (1 << 64) - 1
    k0, k1 = int(key0), int(key1)
    w0, w1 = int(PHILOX_W0), int(PHILOX_W1)
    ks = [(k0 + r * w0 & mask, k1 + r * w1 & mask) for r in range(PHILOX_ROUNDS)]
    return np.array(ks, dtype=np.uint64)


def philox4x64(counter: np.ndarray, key0: np.uint64, key1: np.uint64) -> np.ndarray:
    """Philox-4x64-10 block function, vectorized over leading axes.

    ``counter`` has shape (..., 4), dtype uint64; returns the same shape.
    Matches ``numpy.random.Philox`` output blocks (numpy advances its counter
    once before the first block it emits).
    """
    c0 = counter[..., 0].copy()
    c1 = counter[..., 1].copy()
    c2 = counter[..., 2].copy()
    c3 = counter[..., 3].copy()
    ks = _key_schedule(key0, key1)
    for r in range(PHILOX_ROUNDS):
        lo0, hi0 = _mulhilo(PHILOX_M0, c0)
        lo1, hi1 = _mulhilo(PHILOX_M1, c2)
        c0 = hi1 ^ c1 ^ ks[r, 0]
        c1 = lo1
        c2 = hi0 ^ c3 ^ ks[r, 1]
        c3 = lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def uniforms_from_bits(bits: np.ndarray) -> np.ndarray:
    """Map raw 64-bit words to doubles strictly inside (0, 1).

    Oring in the lowest mantissa bit keeps both endpoints excluded without
    any float rounding (53-bit integers are exactly representable).
    """
    return ((bits >> np.uint64(11)) | np.uint64(1)).astype(np.float64) * _INV53


def normals_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Box-Muller on consecutive pairs; input length must be even.

    The sine is recovered from the cosine (sign split at pi), matching the
    compiled kernels instruction for instruction.
    """
    u = u.reshape(-1, 2)
    r = np.sqrt(-2.0 * np.log(u[:, 0]))
    theta = (2.0 * np.pi) * u[:, 1]
    c = np.cos(theta)
    s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    s[theta > np.pi] *= -1.0
    out = np.empty(u.shape[0] * 2)
    out[0::2] = r * c
    out[1::2] = r * s
    return out


@dataclass(frozen=True)
class SeedPolicy:
    """Derives the per-(member, layer, role) Philox streams from one seed."""

    master_seed: int

    @property
    def key0(self) -> np.uint64:
        return np.uint64(self.master_seed & 0xFFFFFFFFFFFFFFFF)

    @property
    def key1(self) -> np.uint64:
        return KEY_SALT

    @staticmethod
    def layer_role_word(layer: int, role: int) -> int:
        return (layer << 3) | role

    def raw_block(self, member: int, layer: int, role: int, n_ticks: int) -> np.ndarray:
        """(n_ticks, 4) uint64 outputs of the stream's first n_ticks counters."""
        counter = np.zeros((n_ticks, 4), dtype=np.uint64)
        counter[:, 0] = np.arange(n_ticks, dtype=np.uint64)
        counter[:, 1] = np.uint64(member)
        counter[:, 2] = np.uint64(self.layer_role_word(layer, role))
        counter[:, 3] = COUNTER_SALT
        return philox4x64(counter, self.key0, self.key1)

    def uniforms(self, member: int, layer: int, role: int, count: int) -> np.ndarray:
        n_ticks = (count + 3) // 4
        bits = self.raw_block(member, layer, role, n_ticks).reshape(-1)
        return uniforms_from_bits(bits[:count])

    def normals(self, member: int, layer: int, role: int, count: int) -> np.ndarray:
        """``count`` standard normals from the (member, layer, role) stream."""
        n_ticks = (count + 3) // 4
        bits = self.raw_block(member, layer, role, n_ticks).reshape(-1)
        return normals_from_uniforms(uniforms_from_bits(bits))[:count]
