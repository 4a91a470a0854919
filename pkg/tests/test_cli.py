"""CLI contracts: files, schemas, determinism, exit codes."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from kernelflow.cli import main
from kernelflow.io_utils import RowTable, read_manifest, read_rows

SMALL_CONFIG = {
    "network": {"n": 16, "n_points": 2, "depth": 10, "eps": 0.2,
                "kappa": 2.0, "rho": 0.3},
    "ensemble": {"members": 400, "master_seed": 123, "heavy": True},
}


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    return path


@pytest.fixture(scope="module")
def sim_dir(config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "sim"
    assert main(["simulate", "--config", str(config_path), "--out", str(out)]) == 0
    return out


def test_simulate_outputs(sim_dir):
    assert (sim_dir / "estimates.csv").exists()
    manifest = read_manifest(sim_dir / "manifest.json")
    assert manifest["command"] == "simulate"
    assert manifest["config"]["ensemble"]["members"] == 400
    table = RowTable(read_rows(sim_dir / "estimates.csv"))
    expected = {"g_emp", "s_emp", "v4_emp", "sigma_mic", "k1_mic", "u1_exact",
                "k1_u1ex", "k1_consistency", "v4_phi", "rv4", "bridge_exact"}
    assert expected <= table.estimators()
    # symmetric kernel estimators carry one row per unordered component
    assert table.components("g_emp", 0) == [(0, 0), (0, 1), (1, 1)]


def test_rerun_byte_identical(config_path, sim_dir, tmp_path):
    out2 = tmp_path / "sim2"
    assert main(["simulate", "--config", str(config_path), "--out", str(out2),
                 "--threads", "1"]) == 0
    assert (out2 / "estimates.csv").read_bytes() == (sim_dir / "estimates.csv").read_bytes()
    assert (out2 / "manifest.json").read_bytes() == (sim_dir / "manifest.json").read_bytes()


def test_seed_override_changes_output(config_path, sim_dir, tmp_path):
    out2 = tmp_path / "sim_seeded"
    assert main(["simulate", "--config", str(config_path), "--out", str(out2),
                 "--seed", "999"]) == 0
    assert (out2 / "estimates.csv").read_bytes() != (sim_dir / "estimates.csv").read_bytes()


def test_invalid_configs_exit_2(config_path, tmp_path):
    assert main(["simulate", "--config", str(config_path), "--out",
                 str(tmp_path / "x"), "--set", "ensemble.members=0"]) == 2
    missing = tmp_path / "nope.json"
    assert main(["simulate", "--config", str(missing), "--out", str(tmp_path / "y")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"network": {"n": "many"}}')
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "z")]) == 2


def test_numeric_failure_exits_3(tmp_path):
    cfg = tmp_path / "explode.json"
    cfg.write_text(json.dumps({
        "network": {"n": 8, "n_points": 2, "depth": 400, "eps": 10.0,
                    "alpha": 1.5, "cw": 50.0, "act": "linear",
                    "kappa": 5.0, "rho": 0.0},
        "ensemble": {"members": 8, "master_seed": 1},
    }))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 3


def test_flow_outputs_and_linear_zeros(tmp_path, config_path):
    out = tmp_path / "flow"
    assert main(["flow", "--config", str(config_path), "--out", str(out),
                 "--set", "network.act=linear"]) == 0
    table = RowTable(read_rows(out / "theory.csv"))
    assert {"k0_theory", "v4_theory", "k1_eft", "sigma_theory", "u1_model"} <= table.estimators()
    for ell in table.layers("k1_eft"):
        for comp in table.components("k1_eft", ell):
            assert table.get("k1_eft", ell, comp).value == 0.0


def test_flow_modes_joinable(tmp_path, config_path):
    lad = tmp_path / "lad"
    rk4 = tmp_path / "rk4"
    assert main(["flow", "--config", str(config_path), "--out", str(lad)]) == 0
    assert main(["flow", "--config", str(config_path), "--out", str(rk4),
                 "--set", "flow.mode=rk4"]) == 0
    t_lad = {r.t for r in read_rows(lad / "theory.csv")}
    t_rk4 = {r.t for r in read_rows(rk4 / "theory.csv")}
    shared = t_lad & t_rk4
    assert 0.0 in shared and len(shared) >= 2


def test_diagnose_summary_and_strict(sim_dir, tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", str(sim_dir), "--out", str(out)]) == 0
    summary = json.loads((out / "acceptance_summary.json").read_text())
    assert "sigma_ratio" in summary and "u1_exact_depth0" in summary
    assert (out / "table2.csv").exists()
    assert (out / "rv4.csv").exists()
    # bridge on a residual-scaling run is informational, never a failure
    assert "pass" not in summary["bridge_exact"]
    rc = main(["diagnose", str(sim_dir), "--out", str(tmp_path / "diag2"), "--strict"])
    computed = [v for v in summary.values()
                if isinstance(v, dict) and "pass" in v]
    expect = 0 if all(v["pass"] for v in computed) else 4
    assert rc == expect


def test_diagnose_without_heavy_reports_unavailable(tmp_path):
    raw = dict(SMALL_CONFIG)
    raw["ensemble"] = dict(raw["ensemble"], heavy=False)
    raw["diagnostics"] = {"checks": ["sigma", "u1", "rv4", "bridge"]}
    config_path = tmp_path / "light.json"
    config_path.write_text(json.dumps(raw))
    sim_out = tmp_path / "light"
    assert main(["simulate", "--config", str(config_path), "--out", str(sim_out)]) == 0
    out = tmp_path / "diag_light"
    assert main(["diagnose", str(sim_out), "--out", str(out)]) == 0
    summary = json.loads((out / "acceptance_summary.json").read_text())
    assert "unavailable" in summary["bridge_exact"]["status"]
    assert (out / "bridge.csv").read_text().strip().endswith("unavailable")


def test_sweep_plumbing(config_path, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(config_path), "--out", str(out),
                 "--axis", "n", "--values", "8,16",
                 "--set", "ensemble.members=100"]) == 0
    text = (out / "sweep.csv").read_text()
    assert text.splitlines()[0].startswith("n,t,ell")
    assert "v4_rel" in text


def test_reproduce_table2_smoke(tmp_path):
    out = tmp_path / "t2"
    assert main(["reproduce", "--figure", "table2", "--out", str(out),
                 "--set", "ensemble.members=300", "--set", "network.depth=20",
                 "--set", "network.eps=0.1"]) == 0
    lines = (out / "table2.csv").read_text().strip().splitlines()
    assert lines[0] == "t,sigma_mic,sigma_k0,rel_err"
    assert len(lines) >= 2  # t=0 row at least, limited by the shortened depth


def test_reproduce_paper_scale_writes_configs(tmp_path, capsys):
    out = tmp_path / "paper"
    assert main(["reproduce", "--figure", "fig1", "--scale", "paper",
                 "--out", str(out)]) == 0
    cfg = json.loads((out / "fig1_paper.json").read_text())
    assert cfg["ensemble"]["members"] == 5_000_000
    assert cfg["network"]["depth"] == 800
    assert cfg["network"]["eps"] == 0.05


def test_reproduce_unknown_figure_exits_2(tmp_path):
    assert main(["reproduce", "--figure", "fig9", "--out", str(tmp_path / "x")]) == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "kernelflow.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "simulate" in proc.stdout
