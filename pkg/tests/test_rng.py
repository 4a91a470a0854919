"""Counter-based random streams: exactness, independence, reproducibility."""

import numpy as np
import pytest

from kernelflow.rng import (
    ROLE_INCREMENT,
    ROLE_INIT,
    SeedPolicy,
    normals_from_uniforms,
    philox4x64,
    uniforms_from_bits,
)


def test_block_function_matches_numpy_philox():
    """Our block function reproduces numpy's Philox-4x64-10 bit for bit.

    numpy advances its counter once before emitting the first block, so its
    raw stream starting at counter c equals our blocks at c+1, c+2, ...
    """
    ctr = np.array([123456789, 987654321, 42, 7], dtype=np.uint64)
    key = np.array([0xDEADBEEF12345678, 0x6B65726E666C6F77], dtype=np.uint64)
    ref = np.random.Philox(counter=ctr, key=key).random_raw(20)
    counters = np.stack([
        ctr + np.array([i + 1, 0, 0, 0], dtype=np.uint64) for i in range(5)
    ])
    mine = philox4x64(counters, key[0], key[1]).reshape(-1)
    np.testing.assert_array_equal(ref, mine)


def test_streams_disjoint_across_member_layer_role():
    sp = SeedPolicy(1234)
    a = sp.raw_block(0, 0, ROLE_INIT, 64).reshape(-1)
    b = sp.raw_block(1, 0, ROLE_INIT, 64).reshape(-1)
    c = sp.raw_block(0, 1, ROLE_INIT, 64).reshape(-1)
    d = sp.raw_block(0, 0, ROLE_INCREMENT, 64).reshape(-1)
    for x, y in ((a, b), (a, c), (a, d), (b, c), (b, d), (c, d)):
        assert not np.any(x == y)  # PRF outputs collide with prob ~2^-64


def test_streams_reproducible():
    sp = SeedPolicy(99)
    z1 = sp.normals(17, 5, ROLE_INCREMENT, 1001)
    z2 = sp.normals(17, 5, ROLE_INCREMENT, 1001)
    np.testing.assert_array_equal(z1, z2)
    assert len(z1) == 1001


def test_uniforms_strictly_inside_unit_interval():
    bits = np.array([0, 2**64 - 1, 12345], dtype=np.uint64)
    u = uniforms_from_bits(bits)
    assert np.all(u > 0.0) and np.all(u < 1.0)


def test_normal_moments():
    sp = SeedPolicy(2024)
    z = sp.normals(0, 0, ROLE_INIT, 400_000)
    assert abs(z.mean()) < 4 / np.sqrt(len(z))
    assert abs(z.var() - 1.0) < 4 * np.sqrt(2.0 / len(z))
    # third moment vanishes by symmetry of the transform
    assert abs((z**3).mean()) < 4 * np.sqrt(15.0 / len(z))


def test_box_muller_pairing():
    u = np.array([0.5, 0.25, 0.9, 0.75])
    z = normals_from_uniforms(u)
    r0 = np.sqrt(-2 * np.log(0.5))
    assert z[0] == pytest.approx(r0 * np.cos(2 * np.pi * 0.25))
    # theta = pi/2 < pi, so the recovered sine is positive
    assert z[1] == pytest.approx(r0 * np.sqrt(1 - np.cos(2 * np.pi * 0.25) ** 2))


def test_compiled_stream_matches_reference():
    pytest.importorskip("numba")
    from kernelflow._sim_numba import _fill_normals

    sp = SeedPolicy(777)
    ref = sp.normals(3, 9, ROLE_INCREMENT, 257)
    buf = np.empty(257)
    _fill_normals(buf, 257, sp.key0, sp.key1, 3, (9 << 3) | ROLE_INCREMENT)
    # raw bits and uniforms are identical by construction; the transcendental
    # transform may differ by an ulp between scalar libm and numpy's loops
    np.testing.assert_allclose(buf, ref, rtol=1e-12, atol=1e-13)
