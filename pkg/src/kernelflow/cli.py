"""Command-line driver: simulate, flow, diagnose, sweep, reproduce.

Every command reads one JSON config (overridable with --set section.key=v),
writes CSVs plus a manifest into --out, and is byte-deterministic: the same
config and seed reproduce identical files regardless of thread count.

Exit codes: 0 ok, 2 configuration error, 3 numeric failure,
4 acceptance failure (diagnose --strict).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import DiagnosticsSettings, EnsembleSettings, ExperimentConfig, FlowSettings, IoSettings
from .diagnostics import (
    SweepSpec,
    bridge_check,
    compare_sigma_sources,
    hierarchy_residual,
    residual_rv4,
    run_sweep,
    u1_sources,
)
from .errors import ConfigError, DataError, FlowError, KernelFlowError, NumericError, UnavailableError
from .flows import FlowTrajectory, build_flow_ops, flow_k0, flow_k1_eft, flow_k1_u1ex, flow_v4
from .io_utils import (
    EstimateRow,
    RowTable,
    read_manifest,
    read_rows,
    write_manifest,
    write_rows,
)
from .pairspace import pair_list, wishart_pair_product
from .quadrature import QuadratureRule
from .rng import SeedPolicy
from .simulate import NetworkConfig, run_ensemble

DESK_BASELINE = dict(
    network=dict(n=64, n_points=4, depth=200, eps=0.10, alpha=1.0, cw=2.0, cb=0.0,
                 act="tanh", kappa=2.0, rho=0.3),
    ensemble=dict(members=100_000, master_seed=20260809),
)


def _sym_comps(npts):
    return [(a, b) for a in range(npts) for b in range(a, npts)]


def _full_comps(npts):
    return [(a, b) for a in range(npts) for b in range(npts)]


def _pair_comps(npts):
    pl = [tuple(p) for p in pair_list(npts)]
    return [
        (pa[0], pa[1], pb[0], pb[1])
        for i, pa in enumerate(pl)
        for pb in pl[i:]
    ]


def _quad(cfg: ExperimentConfig) -> QuadratureRule:
    if cfg.flow.quadrature_order is not None:
        return QuadratureRule(cfg.flow.quadrature_order)
    return QuadratureRule()


def _simulate_rows(cfg: ExperimentConfig, threads=None, backend=None):
    """Run the ensemble and assemble the full estimates row list."""
    net = cfg.network
    ens = cfg.ensemble
    quad = _quad(cfg)
    seeds = SeedPolicy(ens.master_seed)
    acc = run_ensemble(
        net, seeds, ens.members,
        checkpoints=ens.checkpoints, pair_layers=ens.pair_layers,
        heavy=ens.heavy,
        backend=backend if backend is not None else ens.backend,
        threads=threads if threads is not None else ens.threads,
        quad=quad,
    )
    est = acc.estimates()
    ops = build_flow_ops(net.act, net.cw, net.cb, quad)

    rows: list[EstimateRow] = []
    npts = net.n_points
    sym = _sym_comps(npts)
    full = _full_comps(npts)
    pairs = _pair_comps(npts)
    plist = [tuple(p) for p in pair_list(npts)]
    pidx = {p: i for i, p in enumerate(plist)}

    e2_cp = np.stack([ops.e2(k) for k in est.k0_at_checkpoints])
    u1, u1_se = est.u1_exact(e2_cp)
    e2_ladder = np.stack([ops.e2(k) for k in acc.k0_ladder])
    u1_ladder = est.u1_exact_ladder(e2_ladder)
    k1_ref = flow_k1_u1ex(u1_ladder, net.integrator("ladder"), net.cw, net.alpha)
    k1_mic, k1_mic_se = est.k1_mic()
    k1c, k1c_se = est.k1_consistency()
    v4e, v4e_se = est.v4_emp()
    smic, smic_se = est.sigma_mic()
    v4p = v4p_se = None
    if ens.heavy:
        v4p, v4p_se = est.v4_phi()

    for c, ell in enumerate(est.checkpoints):
        t = float(est.times[c])
        ell = int(ell)

        def kern(name, mean, se=None, comps=sym):
            for (a, b) in comps:
                rows.append(EstimateRow(
                    t, ell, (a, b), name, float(mean[a, b]),
                    None if se is None else float(se[a, b]),
                ))

        kern("g_emp", est.g_mean[c], est.g_se[c])
        kern("s_emp", est.s_mean[c], est.s_se[c])
        kern("s10_emp", est.s10_mean[c], est.s10_se[c], comps=full)
        kern("s11_emp", est.s11_mean[c], est.s11_se[c])
        kern("s20_emp", est.s20_mean[c], est.s20_se[c], comps=full)
        kern("k1_mic", k1_mic[c], k1_mic_se[c])
        kern("k1_consistency", k1c[c], k1c_se[c])
        kern("u1_exact", u1[c], u1_se[c])
        kern("k1_u1ex", k1_ref["k1"][ell])
        for comp in pairs:
            qa, qb = pidx[comp[:2]], pidx[comp[2:]]
            rows.append(EstimateRow(t, ell, comp, "v4_emp",
                                    float(v4e[c, qa, qb]), float(v4e_se[c, qa, qb])))
            rows.append(EstimateRow(t, ell, comp, "sigma_mic",
                                    float(smic[c, qa, qb]), float(smic_se[c, qa, qb])))
            if ens.heavy:
                rows.append(EstimateRow(t, ell, comp, "v4_phi",
                                        float(v4p[c, qa, qb]), float(v4p_se[c, qa, qb])))

    if est.pair_layers.size:
        rv4 = residual_rv4(est, ops)
        for r in rv4.rows:
            rows.append(EstimateRow(r.t, r.ell, r.comp, "rv4", r.value, r.se))
        if ens.heavy:
            br = bridge_check(est)
            for r in br.filtered("exact"):
                rows.append(EstimateRow(r.t, r.ell, r.comp, "bridge_exact", r.value, r.se))
            for r in br.filtered("leading"):
                rows.append(EstimateRow(r.t, r.ell, r.comp, "bridge_leading", r.value, r.se))
    return rows, acc, est


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, threads=None, backend=None) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, _acc, _est = _simulate_rows(cfg, threads=threads, backend=backend)
    write_rows(out_dir / "estimates.csv", rows)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), "simulate", ["estimates.csv"])
    return 0


def _flow_trajectories(cfg: ExperimentConfig):
    net = cfg.network
    quad = _quad(cfg)
    ops = build_flow_ops(net.act, net.cw, net.cb, quad)
    integ = net.integrator(cfg.flow.mode, cfg.flow.rk4_dt)
    k0_traj = flow_k0(net.k0(), ops, integ, net.alpha)
    v4_init = None if cfg.flow.v4_init == "wishart" else np.zeros(
        (pair_list(net.n_points).shape[0],) * 2
    )
    v4_traj = flow_v4(
        v4_init, k0_traj, ops, integ, net.alpha,
        include_wishart=cfg.flow.include_wishart, transport=cfg.flow.transport,
    )
    k1_traj = flow_k1_eft(None, k0_traj, v4_traj, ops, integ, net.alpha)
    return ops, integ, k0_traj, v4_traj, k1_traj


def cmd_flow(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    net = cfg.network
    ops, integ, k0_traj, v4_traj, k1_traj = _flow_trajectories(cfg)
    npts = net.n_points
    sym = _sym_comps(npts)
    pairs = _pair_comps(npts)
    plist = [tuple(p) for p in pair_list(npts)]
    pidx = {p: i for i, p in enumerate(plist)}
    if integ.mode == "ladder":
        report_idx = sorted(set(
            int(round(i)) for i in np.linspace(0, integ.n_steps, min(41, integ.n_steps + 1))
        ))
    else:
        report_idx = list(range(0, integ.n_steps + 1, max(1, integ.n_steps // 40)))
    rows: list[EstimateRow] = []
    for i in report_idx:
        t = float(k0_traj.times[i])
        ell = int(round(t / net.eps**2))
        k0_here = k0_traj["k0"][i]
        tabs = ops.tables(k0_here, 4)
        sigma_here = wishart_pair_product(k0_here, tabs.q(ops.cw, ops.cb))
        from .pairspace import from_pairvec, to_pairvec

        u1_model = from_pairvec(
            tabs.chi(ops.cw) @ to_pairvec(k1_traj["k1"][i]), npts
        ) / net.cw + tabs.d2q_contract(v4_traj["v4"][i], ops.cw) / (2 * net.cw)
        for (a, b) in sym:
            rows.append(EstimateRow(t, ell, (a, b), "k0_theory", float(k0_here[a, b])))
            rows.append(EstimateRow(t, ell, (a, b), "k1_eft", float(k1_traj["k1"][i][a, b])))
            rows.append(EstimateRow(t, ell, (a, b), "u1_model", float(u1_model[a, b])))
        for comp in pairs:
            qa, qb = pidx[comp[:2]], pidx[comp[2:]]
            rows.append(EstimateRow(t, ell, comp, "v4_theory",
                                    float(v4_traj["v4"][i][qa, qb])))
            rows.append(EstimateRow(t, ell, comp, "sigma_theory",
                                    float(sigma_here[qa, qb])))
    write_rows(out_dir / "theory.csv", rows)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), "flow", ["theory.csv"])
    return 0


def _write_simple_csv(path: Path, header: list[str], records: list[list]) -> None:
    lines = [",".join(header)]
    for rec in records:
        lines.append(",".join(
            repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
            for x in rec
        ))
    path.write_text("\n".join(lines) + "\n")


def cmd_diagnose(run_dirs: list[Path], out_dir: Path, strict: bool = False) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    sim_dir = run_dirs[0]
    manifest = read_manifest(sim_dir / "manifest.json")
    cfg = ExperimentConfig.from_dict(manifest["config"])
    net = cfg.network
    table = RowTable(read_rows(sim_dir / "estimates.csv"))
    quad = _quad(cfg)
    ops = build_flow_ops(net.act, net.cw, net.cb, quad)
    integ = net.integrator("ladder")
    k0_traj = flow_k0(net.k0(), ops, integ, net.alpha)

    summary: dict[str, dict] = {}

    # measured covariance source vs background approximation
    layers = table.layers("sigma_mic")
    records = []
    worst_ratio = 0.0
    for ell in layers:
        t = net.eps**2 * ell
        k0_here = k0_traj["k0"][ell]
        theory = wishart_pair_product(k0_here, ops.q(k0_here))[0, 0]
        row = table.get("sigma_mic", ell, (0, 0, 0, 0))
        rel = (theory - row.value) / row.value
        worst_ratio = max(worst_ratio, abs(rel))
        records.append([t, row.value, theory, rel])
    _write_simple_csv(out_dir / "table2.csv",
                      ["t", "sigma_mic", "sigma_k0", "rel_err"], records)
    summary["sigma_ratio"] = {
        "max_abs_rel_err": worst_ratio,
        "tolerance": 0.015,
        "pass": bool(worst_ratio <= 0.015),
    }

    # depth-0 exact source
    row0 = table.get("u1_exact", 0, (0, 0))
    z0 = abs(row0.value) / row0.se if row0.se else 0.0
    summary["u1_exact_depth0"] = {"z": z0, "tolerance_z": 4.0, "pass": bool(z0 <= 4.0)}

    # reference-vs-measured mean correction
    zmax = 0.0
    for ell in table.layers("k1_consistency"):
        for comp in table.components("k1_consistency", ell):
            r = table.get("k1_consistency", ell, comp)
            if r.se:
                zmax = max(zmax, abs(r.value) / r.se)
    summary["k1_consistency"] = {"max_z": zmax, "tolerance_z": 4.0, "pass": bool(zmax <= 4.0)}

    # one-step covariance residual at depth 0
    if table.has("rv4"):
        zr = 0.0
        for comp in table.components("rv4", 0):
            r = table.get("rv4", 0, comp)
            if r.se:
                zr = max(zr, abs(r.value) / r.se)
        summary["rv4_depth0"] = {"max_z": zr, "tolerance_z": 4.0, "pass": bool(zr <= 4.0)}
        records = [
            [r.t, r.ell, *r.comp, r.value, r.se]
            for r in table.rows if r.estimator == "rv4"
        ]
        _write_simple_csv(out_dir / "rv4.csv",
                          ["t", "ell", "a", "b", "c", "d", "value", "se"], records)

    # bridge identity (heavy mode only; exact only in the feedforward limit)
    if table.has("bridge_exact"):
        zb = 0.0
        records = []
        for ell in table.layers("bridge_exact"):
            for comp in table.components("bridge_exact", ell):
                r = table.get("bridge_exact", ell, comp)
                if r.se:
                    zb = max(zb, abs(r.value) / r.se)
                records.append([r.t, r.ell, *r.comp, r.value, r.se])
        _write_simple_csv(out_dir / "bridge.csv",
                          ["t", "ell", "a", "b", "c", "d", "value", "se"], records)
        if cfg.network.alpha == 0.0:
            summary["bridge_exact"] = {"max_z": zb, "tolerance_z": 4.0,
                                       "pass": bool(zb <= 4.0)}
        else:
            summary["bridge_exact"] = {
                "max_z": zb,
                "note": "identity holds exactly only at alpha=0; informational",
            }
    elif "bridge" in cfg.diagnostics.checks:
        _write_simple_csv(out_dir / "bridge.csv", ["status"], [["unavailable"]])
        summary["bridge_exact"] = {"status": "unavailable (heavy mode off)"}

    ok = all(v.get("pass", True) for v in summary.values())
    summary["all_pass"] = ok
    (out_dir / "acceptance_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    if strict and not ok:
        return 4
    return 0


def cmd_sweep(cfg: ExperimentConfig, axis: str, values: list, out_dir: Path,
              threads=None) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = SweepSpec(
        axis=axis, values=tuple(values), base=cfg.network,
        n_members=cfg.ensemble.members, master_seed=cfg.ensemble.master_seed,
        backend=cfg.ensemble.backend, threads=threads or cfg.ensemble.threads,
    )
    points, report = run_sweep(spec, quad=_quad(cfg))
    records = []
    for r in report.rows:
        label, _, value = r.label.partition(":")
        records.append([value, r.t, r.ell, *(r.comp + (-1,) * (4 - len(r.comp))),
                        label, r.value, "" if r.se is None else repr(float(r.se))])
    _write_simple_csv(out_dir / "sweep.csv",
                      [axis, "t", "ell", "a", "b", "c", "d", "series", "value", "se"],
                      records)
    failures = {str(p.value): p.error for p in points if p.error}
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), f"sweep:{axis}",
                   ["sweep.csv"])
    if failures:
        (out_dir / "sweep_errors.json").write_text(
            json.dumps(failures, indent=2, sort_keys=True) + "\n"
        )
    return 0


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------

PAPER_SCALE = dict(
    baseline=dict(network=dict(n=64, eps=0.05, depth=800),
                  ensemble=dict(members=5_000_000)),
    eps_sweep=dict(network=dict(n=256, eps=0.05, depth=800),
                   ensemble=dict(members=500_000)),
)

_FIGURES = ("fig1", "fig2", "fig3", "fig4", "table2")


def _desk_config(**over) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(DESK_BASELINE)
    for key, value in over.items():
        cfg = cfg.with_override(key, value)
    return cfg


def cmd_reproduce(figure: str, scale: str, out_dir: Path, threads=None,
                  overrides: list[str] | None = None) -> int:
    if figure not in _FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; choose from {_FIGURES}")
    out_dir.mkdir(parents=True, exist_ok=True)
    if scale == "paper":
        cfgs = {}
        base = ExperimentConfig.from_dict(DESK_BASELINE)
        base = base.with_override("network.eps", 0.05)
        base = base.with_override("network.depth", 800)
        base = base.with_override("ensemble.members", 5_000_000)
        if figure == "fig2":
            base = base.with_override("network.n", 256)
            base = base.with_override("ensemble.members", 500_000)
        cfgs[figure] = base
        for name, c in cfgs.items():
            c.save(out_dir / f"{name}_paper.json")
        print(
            "warning: paper-scale runs need ~10^3 core-minutes "
            "(5e6 members at depth 800); configs written, not executed.",
            file=sys.stderr,
        )
        write_manifest(out_dir / "manifest.json", base.to_dict(), f"reproduce:{figure}:paper",
                       [f"{figure}_paper.json"])
        return 0

    cfg = _desk_config()
    for ov in overrides or ():
        key, _, value = ov.partition("=")
        cfg = cfg.with_override(key, value)
    if figure == "table2":
        return _reproduce_table2(cfg, out_dir, threads)
    if figure == "fig1":
        return _reproduce_fig1(cfg, out_dir, threads)
    if figure == "fig2":
        return _reproduce_fig2(cfg, out_dir, threads)
    return _reproduce_fig34(cfg, figure, out_dir, threads)


def _baseline_run(cfg: ExperimentConfig, threads):
    net = cfg.network
    quad = _quad(cfg)
    seeds = SeedPolicy(cfg.ensemble.master_seed)
    acc = run_ensemble(net, seeds, cfg.ensemble.members, threads=threads,
                       backend=cfg.ensemble.backend, quad=quad)
    est = acc.estimates()
    ops = build_flow_ops(net.act, net.cw, net.cb, quad)
    integ = net.integrator("ladder")
    k0_traj = FlowTrajectory(net.eps**2 * np.arange(net.depth + 1),
                             {"k0": acc.k0_ladder}, "ladder", net.eps, net.alpha)
    return acc, est, ops, integ, k0_traj


def _reproduce_table2(cfg, out_dir: Path, threads) -> int:
    acc, est, ops, integ, k0_traj = _baseline_run(cfg, threads)
    net = cfg.network
    records = []
    for t in (0.0, 0.5, 1.0, 1.5, 2.0):
        if t > net.final_time + 1e-9:
            continue
        ell = int(round(t / net.eps**2))
        c = list(est.checkpoints).index(min(est.checkpoints, key=lambda x: abs(x - ell)))
        k0_here = k0_traj["k0"][ell]
        theory = wishart_pair_product(k0_here, ops.q(k0_here))[0, 0]
        mic = est.sigma_mic()[0][c, 0, 0]
        records.append([t, mic, theory, (theory - mic) / mic])
    _write_simple_csv(out_dir / "table2.csv",
                      ["t", "sigma_mic", "sigma_k0", "rel_err"], records)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), "reproduce:table2",
                   ["table2.csv"])
    return 0


def _reproduce_fig1(cfg, out_dir: Path, threads) -> int:
    acc, est, ops, integ, k0_traj = _baseline_run(cfg, threads)
    net = cfg.network
    v4_traj = flow_v4(None, k0_traj, ops, integ, net.alpha)
    v4_src = flow_v4(None, k0_traj, ops, integ, net.alpha, transport=False)
    v4e, v4e_se = est.v4_emp()
    records = []
    pidx = {tuple(p): i for i, p in enumerate(pair_list(net.n_points))}
    for c, ell in enumerate(est.checkpoints):
        t = float(est.times[c])
        for (a, b) in ((0, 0), (0, 1)):
            records.append([t, "K0_theory", a, b, -1, -1, k0_traj["k0"][ell][a, b], ""])
            records.append([t, "G_emp", a, b, -1, -1, est.g_mean[c][a, b],
                            repr(float(est.g_se[c][a, b]))])
        for comp in ((0, 0, 0, 0), (0, 1, 0, 1)):
            qa, qb = pidx[comp[:2]], pidx[comp[2:]]
            records.append([t, "V4_theory", *comp, v4_traj["v4"][ell][qa, qb], ""])
            records.append([t, "V4_source_only", *comp, v4_src["v4"][ell][qa, qb], ""])
            records.append([t, "V4_emp", *comp, v4e[c, qa, qb],
                            repr(float(v4e_se[c, qa, qb]))])
    _write_simple_csv(out_dir / "fig1.csv",
                      ["t", "series", "a", "b", "c", "d", "value", "se"], records)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), "reproduce:fig1",
                   ["fig1.csv"])
    return 0


def _reproduce_fig2(cfg, out_dir: Path, threads) -> int:
    net = replace(cfg.network, n=256)
    members = min(cfg.ensemble.members, 50_000)
    spec = SweepSpec(
        axis="eps", values=(0.10, 0.07, 0.05), base=net,
        n_members=members, master_seed=cfg.ensemble.master_seed,
        threads=threads, backend=cfg.ensemble.backend,
        checkpoint_times=tuple(np.linspace(0.0, net.final_time, 11)),
    )
    _points, report = run_sweep(spec, quad=_quad(cfg))
    records = []
    for r in report.rows:
        label, _, value = r.label.partition(":")
        if label != "v4_rel":
            continue
        records.append([value, r.t, r.value, "" if r.se is None else repr(float(r.se))])
    _write_simple_csv(out_dir / "fig2.csv", ["eps", "t", "rel_err", "se"], records)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), "reproduce:fig2",
                   ["fig2.csv"])
    return 0


def _reproduce_fig34(cfg, figure: str, out_dir: Path, threads) -> int:
    acc, est, ops, integ, k0_traj = _baseline_run(cfg, threads)
    net = cfg.network
    v4_traj = flow_v4(None, k0_traj, ops, integ, net.alpha)
    k1_traj = flow_k1_eft(None, k0_traj, v4_traj, ops, integ, net.alpha)
    records = []
    if figure == "fig3":
        e2_ladder = np.stack([ops.e2(k) for k in acc.k0_ladder])
        u1_ladder = est.u1_exact_ladder(e2_ladder)
        k1_ref = flow_k1_u1ex(u1_ladder, integ, net.cw, net.alpha)
        k1_mic, k1_mic_se = est.k1_mic()
        for c, ell in enumerate(est.checkpoints):
            t = float(est.times[c])
            for (a, b) in ((0, 0), (0, 1)):
                records.append([t, "K1_mic", a, b, k1_mic[c, a, b],
                                repr(float(k1_mic_se[c, a, b]))])
                records.append([t, "K1_u1ex", a, b, k1_ref["k1"][ell][a, b], ""])
                records.append([t, "K1_EFT", a, b, k1_traj["k1"][ell][a, b], ""])
        name = "fig3.csv"
        _write_simple_csv(out_dir / name,
                          ["t", "series", "a", "b", "value", "se"], records)
    else:
        rep = u1_sources(est, v4_traj, k1_traj, ops)
        for r in rep.rows:
            records.append([
                r.t, "U1_exact" if r.label == "exact" else "U1_model",
                *r.comp, r.value, "" if r.se is None else repr(float(r.se)),
            ])
        name = "fig4.csv"
        _write_simple_csv(out_dir / name,
                          ["t", "series", "a", "b", "value", "se"], records)
    write_manifest(out_dir / "manifest.json", cfg.to_dict(), f"reproduce:{figure}",
                   [name])
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kernelflow",
        description="finite-width residual-network kernel statistics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--threads", type=int, default=None, help="worker thread cap")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override config entries (section.key=value)")

    common(sub.add_parser("simulate", help="run the ensemble and write estimators"))
    common(sub.add_parser("flow", help="integrate the flow hierarchy"))
    p = sub.add_parser("diagnose", help="residual reports and acceptance summary")
    p.add_argument("run_dirs", nargs="+", help="simulate output directory (first)")
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true",
                   help="exit 4 when an acceptance check fails")
    p = sub.add_parser("sweep", help="axis sweep (eps | n | T)")
    common(p)
    p.add_argument("--axis", required=True, choices=("eps", "n", "T"))
    p.add_argument("--values", required=True,
                   help="comma-separated axis values, e.g. 0.10,0.07,0.05")
    p = sub.add_parser("reproduce", help="regenerate figure/table data")
    p.add_argument("--figure", required=True)
    p.add_argument("--scale", default="desk", choices=("desk", "paper"))
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides")
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    for ov in args.overrides:
        key, sep, value = ov.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {ov!r}")
        cfg = cfg.with_override(key, value)
    if args.seed is not None:
        cfg = cfg.with_override("ensemble.master_seed", args.seed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _load_config(args)
            return cmd_simulate(cfg, Path(args.out), threads=args.threads)
        if args.command == "flow":
            cfg = _load_config(args)
            return cmd_flow(cfg, Path(args.out))
        if args.command == "diagnose":
            return cmd_diagnose([Path(d) for d in args.run_dirs], Path(args.out),
                                strict=args.strict)
        if args.command == "sweep":
            cfg = _load_config(args)
            values = []
            for v in args.values.split(","):
                v = v.strip()
                values.append(int(v) if args.axis == "n" else float(v))
            return cmd_sweep(cfg, args.axis, values, Path(args.out), threads=args.threads)
        if args.command == "reproduce":
            return cmd_reproduce(args.figure, args.scale, Path(args.out),
                                 threads=args.threads, overrides=args.overrides)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError, UnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FlowError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except KernelFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
