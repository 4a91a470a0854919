"""Configuration round trips and validation diagnostics."""

import json

import pytest

from kernelflow.config import ExperimentConfig, dumps_canonical
from kernelflow.errors import ConfigError


def test_defaults_mirror_headline_setup():
    cfg = ExperimentConfig()
    assert cfg.network.n == 64
    assert cfg.network.eps == 0.05
    assert cfg.network.depth == 800
    assert cfg.network.cw == 2.0 and cfg.network.cb == 0.0
    assert cfg.network.act == "tanh"
    assert cfg.ensemble.members == 5_000_000


def test_round_trip_lossless(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "network": {"n": 16, "n_points": 2, "depth": 10, "eps": 0.2,
                    "kappa": 2.0, "rho": 0.3,
                    "k0_init": [[2.0, 0.6], [0.6, 2.0]]},
        "ensemble": {"members": 100, "master_seed": 7, "heavy": True,
                     "checkpoints": [0, 5, 10]},
        "flow": {"mode": "rk4", "rk4_dt": 0.005},
    })
    path = tmp_path / "cfg.json"
    cfg.save(path)
    again = ExperimentConfig.load(path)
    assert again == cfg
    # canonical dumps are stable under re-serialization
    assert dumps_canonical(again.to_dict()) == dumps_canonical(cfg.to_dict())


def test_unknown_keys_reported_with_paths():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"network": {"width": 3}, "bogus": {}})
    msg = str(err.value)
    assert "network.width" in msg
    assert "bogus" in msg


def test_invalid_json_reports_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"network": {,}}')
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.load(path)
    assert "broken.json:1" in str(err.value)


def test_section_validation_propagates():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict({"network": {"n": 0}})
    assert "network" in str(err.value)


def test_overrides():
    cfg = ExperimentConfig()
    cfg2 = cfg.with_override("ensemble.members", "1000")
    assert cfg2.ensemble.members == 1000
    cfg3 = cfg.with_override("network.act", "erf")
    assert cfg3.network.act == "erf"
    cfg4 = cfg.with_override("ensemble.heavy", "true")
    assert cfg4.ensemble.heavy is True
    with pytest.raises(ConfigError):
        cfg.with_override("nosuch.key", 1)
    with pytest.raises(ConfigError):
        cfg.with_override("network.nope", 1)
    with pytest.raises(ConfigError):
        cfg.with_override("flat", 1)
