"""Validation diagnostics: residuals, source comparisons and sweeps.

Statistical comparisons carry a standard error and are judged in SE units;
comparisons between two deterministic routes carry a tolerance tag instead.
That separation is the point of the whole validation program: a residual
only counts as a closure breakdown once it clears its own noise floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, UnavailableError
from .flows import FlowOps, FlowTrajectory, build_flow_ops, flow_v4
from .gaussian_ops import e2_general
from .pairspace import from_pairvec, omega, pair_list, to_pairvec, wishart_pair_product
from .simulate import EnsembleEstimates, NetworkConfig, run_ensemble
from .rng import SeedPolicy


@dataclass(frozen=True)
class ReportRow:
    t: float
    ell: int
    comp: tuple[int, ...]
    value: float
    se: float | None = None          # None => deterministic comparison
    ref: float | None = None         # reference value when the row is a comparison
    label: str = ""

    @property
    def z(self) -> float | None:
        if self.se is None or self.se == 0:
            return None
        return self.value / self.se

    @property
    def rel_err(self) -> float | None:
        if self.ref is None or self.ref == 0:
            return None
        return (self.ref - self.value) / self.value


@dataclass
class ResidualReport:
    name: str
    rows: list[ReportRow] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, *args, **kwargs) -> None:
        self.rows.append(ReportRow(*args, **kwargs))

    def max_abs_z(self) -> float:
        zs = [abs(r.z) for r in self.rows if r.z is not None]
        return max(zs) if zs else 0.0

    def filtered(self, label: str) -> list[ReportRow]:
        return [r for r in self.rows if r.label == label]


def _pair_comp(n_points: int, qa: int, qb: int) -> tuple[int, int, int, int]:
    pl = pair_list(n_points)
    return (int(pl[qa, 0]), int(pl[qa, 1]), int(pl[qb, 0]), int(pl[qb, 1]))


def residual_rv4(
    est: EnsembleEstimates,
    ops: FlowOps,
    components: list[tuple[int, int, int, int]] | None = None,
) -> ResidualReport:
    """One-step residual of the closed fluctuation-covariance recursion.

    Evaluated on empirical covariance data at the tracked depth transitions;
    exact in expectation at a Gaussian depth and for linear activations, and
    the closure defect otherwise.  Point estimates use the full empirical
    mean algebra; SEs come from the per-member influence values streamed by
    the simulator.
    """
    if est.pair_layers.size == 0:
        raise DataError("no depth transitions were tracked")
    cfg = est.cfg
    n = cfg.n
    eps2 = cfg.eps**2
    report = ResidualReport("rv4", meta={"eps": cfg.eps, "n": n})
    cps = list(est.checkpoints)
    gbar_pair = est.g_pair_mean()
    for i, pl_layer in enumerate(est.pair_layers):
        lo = cps.index(pl_layer)
        hi = cps.index(pl_layer + 1)
        k0lo = to_pairvec(est.k0_ladder[pl_layer])
        k0hi = to_pairvec(est.k0_ladder[pl_layer + 1])
        glo = gbar_pair[lo]
        ghi = gbar_pair[hi]
        psi_bar = n * (
            np.outer(ghi, k0hi) + np.outer(k0hi, ghi)
            - np.outer(glo, k0lo) - np.outer(k0lo, glo)
        )
        mean_y = est.rv_mean[i] + psi_bar
        chi = ops.chi(est.k0_ladder[pl_layer])
        gg_lo = np.outer(glo, glo)
        gg_hi = np.outer(ghi, ghi)
        xlo = chi @ gg_lo
        sig = wishart_pair_product(
            est.k0_ladder[pl_layer], ops.q(est.k0_ladder[pl_layer])
        )
        resid = (
            mean_y - n * (gg_hi - gg_lo) + eps2 * n * (xlo + xlo.T) - eps2 * sig
        ) / eps2
        se = est.rv_se[i] / eps2
        t = eps2 * pl_layer
        npts = cfg.n_points
        comps = components or [
            _pair_comp(npts, qa, qb)
            for qa in range(est.rv_mean.shape[1])
            for qb in range(qa, est.rv_mean.shape[1])
        ]
        plist = pair_list(npts)
        pidx = {tuple(p): k for k, p in enumerate(map(tuple, plist))}
        for comp in comps:
            qa = pidx[(comp[0], comp[1])]
            qb = pidx[(comp[2], comp[3])]
            report.add(t, int(pl_layer), comp, float(resid[qa, qb]), float(se[qa, qb]))
    return report


def compare_sigma_sources(
    est: EnsembleEstimates,
    ops: FlowOps,
    components: list[tuple[int, int, int, int]] | None = None,
) -> ResidualReport:
    """Measured covariance source vs. its background-kernel approximation."""
    report = ResidualReport("sigma_sources", meta={"n": est.cfg.n})
    npts = est.cfg.n_points
    plist = pair_list(npts)
    pidx = {tuple(p): k for k, p in enumerate(map(tuple, plist))}
    comps = components or [(0, 0, 0, 0)]
    mic, mic_se = est.sigma_mic()
    for c, ell in enumerate(est.checkpoints):
        theory = wishart_pair_product(
            est.k0_at_checkpoints[c], ops.q(est.k0_at_checkpoints[c])
        )
        for comp in comps:
            qa = pidx[(comp[0], comp[1])]
            qb = pidx[(comp[2], comp[3])]
            report.add(
                float(est.times[c]), int(ell), comp,
                float(mic[c, qa, qb]), float(mic_se[c, qa, qb]),
                ref=float(theory[qa, qb]),
            )
    return report


def u1_sources(
    est: EnsembleEstimates,
    v4_traj: FlowTrajectory,
    k1_traj: FlowTrajectory,
    ops: FlowOps,
    components: list[tuple[int, int]] | None = None,
) -> ResidualReport:
    """Exact source vs. the model source of the mean-correction flow.

    The exact source vanishes identically at depth zero for a Gaussian start;
    the model source does not, which localizes the mean-correction error to
    the second-order closure.  Rows are labelled "exact" (with SE) and
    "model" (deterministic).
    """
    cfg = est.cfg
    e2_cp = np.stack([ops.e2(k) for k in est.k0_at_checkpoints])
    u1, u1_se = est.u1_exact(e2_cp)
    comps = components or [(0, 0), (0, 1)]
    report = ResidualReport("u1_sources", meta={"cw": cfg.cw})
    for c, ell in enumerate(est.checkpoints):
        t = float(est.times[c])
        k0 = est.k0_at_checkpoints[c]
        tabs = ops.tables(k0, 4)
        v4_here = v4_traj.at(t, "v4")
        k1_here = k1_traj.at(t, "k1")
        transport = from_pairvec(tabs.chi(ops.cw) @ to_pairvec(k1_here), cfg.n_points)
        model = transport / cfg.cw + tabs.d2q_contract(v4_here, ops.cw) / (2.0 * cfg.cw)
        for (a, b) in comps:
            report.add(t, int(ell), (a, b), float(u1[c, a, b]),
                       float(u1_se[c, a, b]), label="exact")
            report.add(t, int(ell), (a, b), float(model[a, b]), None, label="model")
    mism = [r for r in report.rows if r.ell == 0]
    if mism:
        exact0 = [r for r in mism if r.label == "exact"]
        model0 = [r for r in mism if r.label == "model"]
        report.meta["depth0_exact_max_z"] = max(
            abs(r.z) for r in exact0 if r.z is not None
        )
        report.meta["depth0_model_max"] = max(abs(r.value) for r in model0)
    return report


def bridge_check(est: EnsembleEstimates) -> ResidualReport:
    """Total-covariance bridge between kernel and preactivation 4-points.

    "exact" rows: per-member residual of the finite-n identity (zero in
    expectation in the feedforward limit).  "leading" rows: the large-n
    variant against the Wishart piece of the mean kernel, an O(1/n) defect.
    """
    if not est.heavy:
        raise UnavailableError("the bridge check needs heavy mode")
    if est.pair_layers.size == 0:
        raise DataError("no depth transitions were tracked")
    cfg = est.cfg
    report = ResidualReport("bridge", meta={"n": cfg.n, "alpha": cfg.alpha})
    cps = list(est.checkpoints)
    npts = cfg.n_points
    p = est.br_mean.shape[1]
    for i, pl_layer in enumerate(est.pair_layers):
        hi = cps.index(pl_layer + 1)
        om = omega(est.g_mean[hi])
        t = cfg.eps**2 * (pl_layer + 1)
        lead = est.br_mean[i] + est.qq_mean[i] - om
        lead_se = np.sqrt(est.br_se[i] ** 2 + est.qq_se[i] ** 2)
        for qa in range(p):
            for qb in range(qa, p):
                comp = _pair_comp(npts, qa, qb)
                report.add(t, int(pl_layer + 1), comp,
                           float(est.br_mean[i, qa, qb]),
                           float(est.br_se[i, qa, qb]), label="exact")
                report.add(t, int(pl_layer + 1), comp,
                           float(lead[qa, qb]), float(lead_se[qa, qb]),
                           label="leading")
    return report


_HIERARCHY_PAIRS = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (0, 2))


def hierarchy_residual(
    est: EnsembleEstimates,
    ops: FlowOps,
    max_total_order: int = 2,
    components: list[tuple[int, int]] | None = None,
) -> ResidualReport:
    """Observable-hierarchy residual of the measured derivative kernels.

    The time derivative of each measured S^(p,q) (finite differences across
    checkpoints) is compared against the diffusion-generator right-hand side
    closed with Gaussian values; the defect measures the accumulation of
    non-Gaussian structure.
    """
    series = {
        (0, 0): (est.s_mean, est.s_se),
        (1, 0): (est.s10_mean, est.s10_se),
        (0, 1): (np.swapaxes(est.s10_mean, 1, 2), np.swapaxes(est.s10_se, 1, 2)),
        (1, 1): (est.s11_mean, est.s11_se),
        (2, 0): (est.s20_mean, est.s20_se),
        (0, 2): (np.swapaxes(est.s20_mean, 1, 2), np.swapaxes(est.s20_se, 1, 2)),
    }
    report = ResidualReport("hierarchy", meta={"max_total_order": max_total_order})
    comps = components or [(0, 0), (0, 1)]
    times = est.times
    for (p, q) in _HIERARCHY_PAIRS:
        if p + q > max_total_order:
            continue
        mean, se = series[(p, q)]
        for c in range(1, len(times) - 1):
            dt = times[c + 1] - times[c - 1]
            if dt <= 0:
                continue
            lhs = (mean[c + 1] - mean[c - 1]) / dt
            lhs_se = np.sqrt(se[c + 1] ** 2 + se[c - 1] ** 2) / dt
            k0 = est.k0_at_checkpoints[c]
            qk = ops.q(k0)
            for (a, b) in comps:
                rhs = (
                    0.5 * qk[a, a] * e2_general(k0, p + 2, q, a, b, ops.act, ops.quad)
                    + qk[a, b] * e2_general(k0, p + 1, q + 1, a, b, ops.act, ops.quad)
                    + 0.5 * qk[b, b] * e2_general(k0, p, q + 2, a, b, ops.act, ops.quad)
                )
                report.add(
                    float(times[c]), int(est.checkpoints[c]), (p, q, a, b),
                    float(lhs[a, b] - rhs), float(lhs_se[a, b]),
                    label=f"S({p},{q})",
                )
    return report


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    """Axis sweep around a base configuration with a shared nominal t-grid.

    The eps axis changes depth to hold the final time fixed; nominal
    checkpoint times are the join key and each point maps them to its
    nearest ladder layer (actual times are also reported).
    """

    axis: str
    values: tuple
    base: NetworkConfig
    n_members: int
    master_seed: int
    checkpoint_times: tuple[float, ...] | None = None
    backend: str | None = None
    threads: int | None = None

    def __post_init__(self):
        if self.axis not in ("eps", "n", "T"):
            raise DataError(f"unknown sweep axis {self.axis!r}")

    def config_for(self, value) -> NetworkConfig:
        from dataclasses import replace

        base = self.base
        if self.axis == "eps":
            depth = max(1, round(base.final_time / value**2))
            return replace(base, eps=float(value), depth=depth)
        if self.axis == "n":
            return replace(base, n=int(value))
        depth = max(1, round(float(value) / base.eps**2))
        return replace(base, depth=depth)

    def nominal_times(self, value) -> np.ndarray:
        if self.checkpoint_times is not None:
            return np.asarray(self.checkpoint_times, dtype=float)
        cfg = self.config_for(value)
        t_final = min(cfg.final_time, self.base.final_time if self.axis != "T" else cfg.final_time)
        return np.linspace(0.0, t_final, 11)


@dataclass
class SweepPoint:
    value: object
    cfg: NetworkConfig | None
    estimates: EnsembleEstimates | None
    v4_theory: FlowTrajectory | None
    error: str | None = None


def run_sweep(
    spec: SweepSpec,
    quad=None,
    heavy: bool = False,
) -> tuple[list[SweepPoint], ResidualReport]:
    """Simulate + integrate + diagnose each sweep point; failures are isolated.

    The report holds, per (axis value, nominal t, component), the relative
    deviation of the empirical fluctuation covariance from its flow theory
    ("v4_rel" rows) and the sup-norm background deviation ("k0_dev" rows).
    """
    report = ResidualReport(f"sweep_{spec.axis}", meta={"axis": spec.axis})
    points: list[SweepPoint] = []
    for value in spec.values:
        cfg = None
        try:
            cfg = spec.config_for(value)
            t_nom = spec.nominal_times(value)
            layers = sorted(set(
                int(round(t / cfg.eps**2)) for t in t_nom
            ) | {0, 1, cfg.depth})
            layers = [min(max(l, 0), cfg.depth) for l in layers]
            seeds = SeedPolicy(spec.master_seed)
            acc = run_ensemble(
                cfg, seeds, spec.n_members, checkpoints=tuple(layers),
                pair_layers=(), heavy=heavy, backend=spec.backend,
                threads=spec.threads, quad=quad,
            )
            est = acc.estimates()
            ops = build_flow_ops(cfg.act, cfg.cw, cfg.cb, quad)
            integ = cfg.integrator("ladder")
            k0_traj = FlowTrajectory(
                cfg.eps**2 * np.arange(cfg.depth + 1), {"k0": acc.k0_ladder},
                "ladder", cfg.eps, cfg.alpha,
            )
            v4_traj = flow_v4(None, k0_traj, ops, integ, cfg.alpha)
            v4e, v4e_se = est.v4_emp()
            for t in t_nom:
                ell = min(max(int(round(t / cfg.eps**2)), 0), cfg.depth)
                c = list(est.checkpoints).index(ell)
                t_act = cfg.eps**2 * ell
                v4t = v4_traj["v4"][ell]
                rel = (v4t[0, 0] - v4e[c, 0, 0]) / v4e[c, 0, 0]
                rel_se = v4e_se[c, 0, 0] * abs(v4t[0, 0]) / v4e[c, 0, 0] ** 2
                report.add(float(t), ell, (0, 0, 0, 0), float(rel), float(rel_se),
                           ref=float(t_act), label=f"v4_rel:{value}")
                dev = float(np.abs(est.g_mean[c] - est.k0_at_checkpoints[c]).max())
                report.add(float(t), ell, (-1, -1), dev, None, label=f"k0_dev:{value}")
            points.append(SweepPoint(value, cfg, est, v4_traj))
        except Exception as exc:  # noqa: BLE001 - per-point isolation is the contract
            points.append(SweepPoint(value, cfg, None, None, error=str(exc)))
            report.meta.setdefault("errors", {})[str(value)] = str(exc)
    return points, report
