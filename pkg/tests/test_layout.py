"""Payload layout bookkeeping."""

import numpy as np
import pytest

from kernelflow.errors import ConfigError
from kernelflow.layout import PayloadLayout, default_checkpoints, default_pair_layers


def test_block_sizes_and_views():
    lay = PayloadLayout(3, 10, (0, 1, 5, 6, 10), (0, 5), heavy=True)
    assert lay.k2 == 9 and lay.p == 6 and lay.p2 == 36
    payload = np.arange(lay.total, dtype=float)
    g = lay.cp_view(payload, "g", 2)
    assert g.shape == (3, 3)
    rv = lay.pair_view(payload, "rv", 1)
    assert rv.shape == (6, 6)
    s_all = lay.s_all_view(payload)
    assert s_all.shape == (11, 3, 3)
    # views are views, not copies
    g[0, 0] = -99.0
    assert payload[2 * lay.cp_block] == -99.0


def test_heavy_fields_gated():
    lay = PayloadLayout(2, 4, (0, 1, 4), (0,), heavy=False)
    payload = np.zeros(lay.total)
    with pytest.raises(ConfigError):
        lay.cp_view(payload, "a4", 0)
    with pytest.raises(ConfigError):
        lay.pair_view(payload, "br", 0)


def test_checkpoint_validation():
    with pytest.raises(ConfigError):
        PayloadLayout(2, 4, (0, 5), (), heavy=False)  # checkpoint beyond depth
    with pytest.raises(ConfigError):
        PayloadLayout(2, 4, (0, 4), (2,), heavy=False)  # transition lacks checkpoints
    with pytest.raises(ConfigError):
        PayloadLayout(2, 4, (), (), heavy=False)


def test_defaults():
    cps = default_checkpoints(200)
    assert 0 in cps and 1 in cps and 200 in cps
    assert 30 <= len(cps) <= 60
    pls = default_pair_layers(200)
    assert all(0 <= p < 200 for p in pls)
    assert 0 in pls
