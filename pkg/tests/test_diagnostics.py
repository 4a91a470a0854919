"""Residual diagnostics on small but statistically meaningful ensembles."""

import numpy as np
import pytest

from kernelflow.diagnostics import (
    SweepSpec,
    bridge_check,
    compare_sigma_sources,
    hierarchy_residual,
    residual_rv4,
    run_sweep,
    u1_sources,
)
from kernelflow.errors import DataError, UnavailableError
from kernelflow.flows import FlowTrajectory, build_flow_ops, flow_k1_eft, flow_v4
from kernelflow.rng import SeedPolicy
from kernelflow.simulate import NetworkConfig, available_backends, run_ensemble

SEEDS = SeedPolicy(271828)
BACKEND = "numba" if "numba" in available_backends() else "numpy"


def _pipeline(cfg, members, heavy=False, checkpoints=None, pair_layers=None):
    acc = run_ensemble(cfg, SEEDS, members, backend=BACKEND, heavy=heavy,
                       checkpoints=checkpoints, pair_layers=pair_layers)
    est = acc.estimates()
    ops = build_flow_ops(cfg.act, cfg.cw, cfg.cb)
    k0_traj = FlowTrajectory(cfg.eps**2 * np.arange(cfg.depth + 1),
                             {"k0": acc.k0_ladder}, "ladder", cfg.eps, cfg.alpha)
    return est, ops, k0_traj


class TestRv4:
    def test_zero_at_gaussian_start(self):
        cfg = NetworkConfig(n=48, n_points=2, depth=4, eps=0.15, kappa=2.0, rho=0.3)
        est, ops, _ = _pipeline(cfg, 8000, checkpoints=(0, 1, 4), pair_layers=(0,))
        rep = residual_rv4(est, ops)
        assert rep.max_abs_z() < 4.0

    def test_zero_for_linear_dynamics_at_all_depths(self):
        # the drift kernel is exactly its kernel map for linear activations,
        # so the closed recursion holds at every depth
        cfg = NetworkConfig(n=32, n_points=2, depth=12, eps=0.15, cw=1.5, cb=0.1,
                            act="linear", kappa=1.2, rho=0.3)
        est, ops, _ = _pipeline(cfg, 8000, checkpoints=(0, 1, 6, 7, 11, 12),
                                pair_layers=(0, 6, 11))
        rep = residual_rv4(est, ops)
        assert rep.max_abs_z() < 4.0

    def test_needs_transitions(self):
        cfg = NetworkConfig(n=16, n_points=2, depth=4, eps=0.15, kappa=2.0, rho=0.3)
        est, ops, _ = _pipeline(cfg, 10, checkpoints=(0, 4), pair_layers=())
        with pytest.raises(DataError):
            residual_rv4(est, ops)


class TestSigmaSources:
    def test_table_rows_and_exact_offset(self):
        cfg = NetworkConfig(n=64, n_points=2, depth=4, eps=0.1, kappa=2.0, rho=0.3)
        est, ops, _ = _pipeline(cfg, 6000, checkpoints=(0, 2, 4), pair_layers=())
        rep = compare_sigma_sources(est, ops)
        assert len(rep.rows) == 3
        row0 = rep.rows[0]
        # measured exceeds the background value by the finite-width
        # correction, so the (theory - measured)/measured ratio is negative
        assert row0.rel_err < 0
        assert abs(row0.rel_err) < 0.03


class TestU1Sources:
    def test_depth0_localization(self):
        cfg = NetworkConfig(n=32, n_points=2, depth=6, eps=0.15, kappa=2.0, rho=0.3)
        est, ops, k0_traj = _pipeline(cfg, 6000, checkpoints=(0, 1, 3, 4, 6),
                                      pair_layers=(0, 3))
        integ = cfg.integrator("ladder")
        v4_traj = flow_v4(None, k0_traj, ops, integ)
        k1_traj = flow_k1_eft(None, k0_traj, v4_traj, ops, integ)
        rep = u1_sources(est, v4_traj, k1_traj, ops)
        assert rep.meta["depth0_exact_max_z"] < 4.0
        assert rep.meta["depth0_model_max"] > 1e-3


class TestBridge:
    def test_exact_in_feedforward_limit(self):
        cfg = NetworkConfig(n=16, n_points=2, depth=1, eps=1.0, alpha=0.0,
                            kappa=2.0, rho=0.3)
        est, _ops, _ = _pipeline(cfg, 20000, heavy=True, checkpoints=(0, 1),
                                 pair_layers=(0,))
        rep = bridge_check(est)
        zs = [abs(r.z) for r in rep.filtered("exact")]
        assert max(zs) < 4.0

    def test_leading_order_defect_shrinks_with_width(self):
        def defect(n):
            cfg = NetworkConfig(n=n, n_points=2, depth=1, eps=1.0, alpha=0.0,
                                kappa=2.0, rho=0.3)
            est, _ops, _ = _pipeline(cfg, 40000, heavy=True, checkpoints=(0, 1),
                                     pair_layers=(0,))
            rep = bridge_check(est)
            return max(abs(r.value) for r in rep.filtered("leading"))

        ratio = defect(16) / defect(32)
        assert 1.3 <= ratio <= 2.8  # ~2 with sampling slack

    def test_requires_heavy_mode(self):
        cfg = NetworkConfig(n=16, n_points=2, depth=1, eps=1.0, alpha=0.0,
                            kappa=2.0, rho=0.3)
        est, _ops, _ = _pipeline(cfg, 50, heavy=False, checkpoints=(0, 1),
                                 pair_layers=(0,))
        with pytest.raises(UnavailableError):
            bridge_check(est)


class TestHierarchy:
    def test_linear_sigma_kernel_row_closes(self):
        cfg = NetworkConfig(n=48, n_points=2, depth=12, eps=0.15, cw=1.5, cb=0.0,
                            act="linear", kappa=1.2, rho=0.3)
        est, ops, _ = _pipeline(cfg, 6000,
                                checkpoints=(0, 2, 4, 6, 8, 10, 12), pair_layers=())
        rep = hierarchy_residual(est, ops)
        rows = rep.filtered("S(0,0)")
        assert rows and all(abs(r.z) < 4.0 for r in rows if r.z is not None)

    def test_frozen_network_constant(self):
        # zero drift: the field never moves and every observable is constant
        cfg = NetworkConfig(n=16, n_points=2, depth=6, eps=0.2, cw=0.0, cb=0.0,
                            act="tanh", kappa=2.0, rho=0.3)
        est, ops, _ = _pipeline(cfg, 500, checkpoints=(0, 3, 6), pair_layers=())
        assert np.abs(est.s_mean[0] - est.s_mean[-1]).max() < 1e-14
        rep = hierarchy_residual(est, ops)
        assert all(abs(r.value) < 1e-12 for r in rep.rows)

    def test_tanh_residual_consistent_and_level_defect_grows(self):
        # the rate residual sits inside its noise at this scale, while its
        # integral -- the deviation of the measured sigma-kernel from the
        # Gaussian-closure value -- grows measurably with depth
        cfg = NetworkConfig(n=24, n_points=2, depth=30, eps=0.25, kappa=2.0, rho=0.3)
        est, ops, _ = _pipeline(cfg, 8000,
                                checkpoints=tuple(range(0, 31, 2)), pair_layers=())
        rep = hierarchy_residual(est, ops, components=[(0, 0)])
        rows = rep.filtered("S(0,0)")
        assert rows and all(abs(r.z) < 6.0 for r in rows if r.z is not None)
        from kernelflow.gaussian_ops import e2
        from kernelflow.quadrature import QuadratureRule

        quad = QuadratureRule()
        e2_cp = np.stack([e2(k, ops.act, quad) for k in est.k0_at_checkpoints])
        dev = np.abs(est.s_mean - e2_cp)[:, 0, 0]
        assert dev[0] < 4 * est.s_se[0, 0, 0]          # exact at the start
        assert dev[-1] > 4 * est.s_se[-1, 0, 0]        # beyond noise at depth
        assert dev[-1] > dev[0]


class TestSweep:
    def test_single_point_matches_direct_run(self):
        base = NetworkConfig(n=24, n_points=2, depth=8, eps=0.2, kappa=2.0, rho=0.3)
        spec = SweepSpec(axis="n", values=(24,), base=base, n_members=400,
                         master_seed=SEEDS.master_seed, backend=BACKEND,
                         checkpoint_times=(0.0, 0.16, 0.32))
        points, report = run_sweep(spec)
        assert points[0].error is None
        direct = run_ensemble(base, SEEDS, 400, backend=BACKEND,
                              checkpoints=(0, 1, 4, 8), pair_layers=()).estimates()
        v4_direct = direct.v4_emp()[0]
        sweep_rel = [r for r in report.rows if r.label == "v4_rel:24"]
        assert len(sweep_rel) == 3
        v4_sweep = points[0].estimates.v4_emp()[0]
        c = list(points[0].estimates.checkpoints).index(4)
        cd = list(direct.checkpoints).index(4)
        np.testing.assert_allclose(v4_sweep[c], v4_direct[cd], rtol=1e-12)

    def test_failures_are_isolated(self):
        base = NetworkConfig(n=8, n_points=2, depth=4, eps=0.2, kappa=2.0, rho=0.3)
        spec = SweepSpec(axis="n", values=(8, -3), base=base, n_members=50,
                         master_seed=1, backend=BACKEND,
                         checkpoint_times=(0.0, 0.16))
        points, report = run_sweep(spec)
        assert points[0].error is None
        assert points[1].error is not None
        assert "-3" in report.meta["errors"]
