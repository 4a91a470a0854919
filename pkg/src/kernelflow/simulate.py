"""Finite-width ensemble simulation of the generalized residual block.

One block step is phi <- alpha * phi + eps * eta with eta drawn, per neuron,
from its exact conditional Gaussian law N(0, Q_hat), where
Q_hat = C_b + C_W * sigma(phi)^T sigma(phi) / n is the empirical drift
kernel.  Sampling the increment from its conditional law reproduces the
joint distribution of the explicit weight/bias iteration exactly while
needing n*N normals per member-layer instead of n^2 (the explicit sampler
is kept for cross-checks).

Ensembles stream through the dyadic accumulator, so results are
bit-identical for any thread count and any contiguous split of the member
range.  Backend selection: compiled kernels when numba is importable, pure
numpy otherwise; set KERNELFLOW_BACKEND=numpy (or numba) to force one.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import _sim_numpy
from .accumulator import DyadicAccumulator
from .activations import Activation, get_activation
from .errors import ConfigError, NumericError, UnavailableError
from .flows import FlowOps, IntegratorConfig, build_flow_ops, flow_k0
from .gaussian_ops import check_kernel
from .layout import PayloadLayout, default_checkpoints, default_pair_layers
from .pairspace import pair_list, to_pairvec
from .quadrature import QuadratureRule
from .rng import ROLE_BIASES, ROLE_INCREMENT, ROLE_INIT, ROLE_WEIGHTS, SeedPolicy

_BACKEND_ENV = "KERNELFLOW_BACKEND"


def available_backends() -> tuple[str, ...]:
    try:
        import numba  # noqa: F401

        return ("numba", "numpy")
    except ImportError:
        return ("numpy",)


def default_backend() -> str:
    env = os.environ.get(_BACKEND_ENV, "").strip().lower()
    if env:
        if env not in ("numba", "numpy"):
            raise ConfigError(f"{_BACKEND_ENV} must be 'numba' or 'numpy', got {env!r}")
        if env == "numba" and "numba" not in available_backends():
            raise ConfigError("numba backend requested but numba is not importable")
        return env
    if "numba" in available_backends():
        return "numba"
    warnings.warn("numba not importable; falling back to the numpy backend", RuntimeWarning)
    return "numpy"


@dataclass(frozen=True)
class NetworkConfig:
    """Width, depth, scaling and initial kernel of the simulated ensemble."""

    n: int = 64
    n_points: int = 4
    depth: int = 800
    eps: float = 0.05
    alpha: float = 1.0
    cw: float = 2.0
    cb: float = 0.0
    act: str = "tanh"
    kappa: float | None = 2.0
    rho: float | None = 0.3
    k0_init: tuple | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("width n must be >= 1")
        if self.n_points < 1:
            raise ConfigError("need at least one input point")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.k0_init is None and (self.kappa is None or self.rho is None):
            raise ConfigError("either k0_init or (kappa, rho) must be given")
        get_activation(self.act)

    @property
    def activation(self) -> Activation:
        return get_activation(self.act)

    def k0(self) -> np.ndarray:
        if self.k0_init is not None:
            k = np.asarray(self.k0_init, dtype=float)
            if k.shape != (self.n_points, self.n_points):
                raise ConfigError(
                    f"k0_init must be ({self.n_points}, {self.n_points}), got {k.shape}"
                )
        else:
            npts = self.n_points
            k = (1.0 - self.rho) * self.kappa * np.eye(npts) + self.rho * self.kappa * np.ones(
                (npts, npts)
            )
        return check_kernel(k)

    @property
    def final_time(self) -> float:
        return self.eps**2 * self.depth

    def integrator(self, mode: str = "ladder", rk4_dt: float | None = None) -> IntegratorConfig:
        return IntegratorConfig(mode=mode, eps=self.eps, depth=self.depth, rk4_dt=rk4_dt)


@dataclass(frozen=True)
class MemberRecord:
    """Per-checkpoint kernels of a single simulated member."""

    checkpoints: tuple[int, ...]
    g: np.ndarray        # (C, N, N) empirical kernel
    s: np.ndarray        # (C, N, N) sigma-kernel
    q_hat: np.ndarray    # (C, N, N) conditional drift kernel
    update_residual: float | None = None   # debug mode: max one-step identity defect
    phi: np.ndarray | None = None          # debug mode: (L+1, n, N) field trajectory
    eta: np.ndarray | None = None          # debug mode: (L, n, N) increments


def _sampler_eta(cfg: NetworkConfig, seeds: SeedPolicy, member: int, layer: int,
                 phi: np.ndarray, sphi: np.ndarray, sampler: str) -> np.ndarray:
    n, npts = cfg.n, cfg.n_points
    if sampler == "conditional":
        q_hat = cfg.cb + cfg.cw * (sphi.T @ sphi) / n
        low = _sim_numpy.robust_cholesky(q_hat)
        z = seeds.normals(member, layer, ROLE_INCREMENT, n * npts).reshape(n, npts)
        return z @ low.T
    if sampler == "explicit":
        w = seeds.normals(member, layer, ROLE_WEIGHTS, n * n).reshape(n, n)
        w *= np.sqrt(cfg.cw / n)
        b = seeds.normals(member, layer, ROLE_BIASES, n) * np.sqrt(cfg.cb)
        return w @ sphi + b[:, None]
    raise ConfigError(f"unknown sampler {sampler!r}")


def simulate_member(
    cfg: NetworkConfig,
    seeds: SeedPolicy,
    member: int,
    checkpoints: tuple[int, ...] | None = None,
    sampler: str = "conditional",
    debug: bool = False,
) -> MemberRecord:
    """Simulate one ensemble member, reporting kernels at the checkpoints.

    With ``debug=True`` the field and increment trajectories are kept and the
    exact one-step identity G(l+1) = alpha^2 G + alpha eps H + eps^2 J is
    re-evaluated from them; the worst relative defect is reported.
    """
    cps = tuple(sorted(set(checkpoints if checkpoints is not None else
                           default_checkpoints(cfg.depth))))
    if cps and (cps[0] < 0 or cps[-1] > cfg.depth):
        raise ConfigError(f"checkpoints outside 0..{cfg.depth}")
    n, npts, depth = cfg.n, cfg.n_points, cfg.depth
    act = cfg.activation
    chol0 = _sim_numpy.robust_cholesky(cfg.k0())
    z = seeds.normals(member, 0, ROLE_INIT, n * npts).reshape(n, npts)
    phi = z @ chol0.T

    g_out = np.empty((len(cps), npts, npts))
    s_out = np.empty_like(g_out)
    q_out = np.empty_like(g_out)
    phis = [phi.copy()] if debug else None
    etas = [] if debug else None
    worst = 0.0

    for ell in range(depth + 1):
        sphi = act(phi)
        if ell in cps:
            i = cps.index(ell)
            g_out[i] = phi.T @ phi / n
            s_out[i] = sphi.T @ sphi / n
            q_out[i] = cfg.cb + cfg.cw * s_out[i]
        if not np.all(np.isfinite(phi)):
            raise NumericError(f"member {member} diverged at layer {ell}")
        if ell == depth:
            break
        eta = _sampler_eta(cfg, seeds, member, ell, phi, sphi, sampler)
        g_prev = phi.T @ phi / n
        phi = cfg.alpha * phi + cfg.eps * eta
        if debug:
            phis.append(phi.copy())
            etas.append(eta.copy())
            h_mat = (phis[-2].T @ eta + eta.T @ phis[-2]) / n
            j_mat = eta.T @ eta / n
            lhs = phi.T @ phi / n
            rhs = cfg.alpha**2 * g_prev + cfg.alpha * cfg.eps * h_mat + cfg.eps**2 * j_mat
            denom = max(float(np.abs(lhs).max()), 1e-300)
            worst = max(worst, float(np.abs(lhs - rhs).max()) / denom)

    return MemberRecord(
        checkpoints=cps,
        g=g_out,
        s=s_out,
        q_hat=q_out,
        update_residual=worst if debug else None,
        phi=np.array(phis) if debug else None,
        eta=np.array(etas) if debug else None,
    )


# ---------------------------------------------------------------------------
# ensemble driver
# ---------------------------------------------------------------------------

_BLOCK_LOG2 = 10  # aligned parallel work unit: 1024 members


def _build_context(
    cfg: NetworkConfig,
    seeds: SeedPolicy,
    layout: PayloadLayout,
    k0_ladder: np.ndarray,
    ops: FlowOps,
) -> dict:
    pairs = pair_list(cfg.n_points)
    n_pairs = layout.n_pairs
    p = layout.p
    chi_pairs = np.zeros((max(n_pairs, 1), p, p))
    k0p_lo = np.zeros((max(n_pairs, 1), p))
    k0p_hi = np.zeros((max(n_pairs, 1), p))
    for i, pl in enumerate(layout.pair_layers):
        chi_pairs[i] = ops.chi(k0_ladder[pl])
        k0p_lo[i] = to_pairvec(k0_ladder[pl])
        k0p_hi[i] = to_pairvec(k0_ladder[pl + 1])
    cp_slot = np.full(cfg.depth + 1, -1, dtype=np.int64)
    for i, c in enumerate(layout.checkpoints):
        cp_slot[c] = i
    pair_slot = np.full(cfg.depth + 1, -1, dtype=np.int64)
    for i, pl in enumerate(layout.pair_layers):
        pair_slot[pl] = i
    return {
        "n": cfg.n,
        "n_points": cfg.n_points,
        "depth": cfg.depth,
        "eps": cfg.eps,
        "alpha": cfg.alpha,
        "cw": cfg.cw,
        "cb": cfg.cb,
        "act": cfg.activation,
        "key0": seeds.key0,
        "key1": seeds.key1,
        "chol0": _sim_numpy.robust_cholesky(cfg.k0()),
        "k00": cfg.k0(),
        "cp_slot": cp_slot,
        "pair_slot": pair_slot,
        "pairs": pairs,
        "chi_pairs": chi_pairs,
        "k0p_lo": k0p_lo,
        "k0p_hi": k0p_hi,
    }


def _run_numba(start: int, end: int, ctx: dict, layout: PayloadLayout,
               threads: int | None) -> DyadicAccumulator:
    import numba

    from . import _sim_numba

    if threads is not None:
        cap = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(min(max(1, int(threads)), cap))
    kc = layout.kernel_constants()
    args = (
        ctx["n"], ctx["n_points"], ctx["depth"], ctx["eps"], ctx["alpha"],
        ctx["cw"], ctx["cb"], ctx["act"].code, ctx["key0"], ctx["key1"],
        ctx["chol0"], ctx["k00"], ctx["cp_slot"], ctx["pair_slot"],
        ctx["pairs"][:, 0].copy(), ctx["pairs"][:, 1].copy(),
        ctx["chi_pairs"], ctx["k0p_lo"], ctx["k0p_hi"],
        layout.heavy, kc["cp_block"], kc["pair_block"], kc["pair_base"],
        kc["s_all_offset"],
    )
    total = layout.total
    acc = DyadicAccumulator(total)
    bsz = 1 << _BLOCK_LOG2
    a0 = min(end, ((start + bsz - 1) // bsz) * bsz)
    a1 = max(a0, (end // bsz) * bsz)

    def run_span(s, e):
        depth_cap = 2 * max(1, (e - s)).bit_length() + 4
        stack = np.empty((depth_cap, total))
        lv = np.empty(depth_cap, dtype=np.int64)
        ix = np.empty(depth_cap, dtype=np.int64)
        n_nodes, bad = _sim_numba._simulate_span(s, e, *args, total, stack, lv, ix)
        if bad:
            raise NumericError(f"member {bad - 1} diverged or produced a non-PSD drift kernel")
        for j in range(n_nodes):
            acc.push_node(int(lv[j]), int(ix[j]), stack[j])

    if a0 > start:
        run_span(start, a0)
    if a1 > a0:
        n_blocks = (a1 - a0) >> _BLOCK_LOG2
        out = np.empty((n_blocks, total))
        err = np.zeros(n_blocks, dtype=np.int64)
        _sim_numba._run_aligned_blocks(
            a0 >> _BLOCK_LOG2, n_blocks, _BLOCK_LOG2, *args, total, out, err,
        )
        if np.any(err):
            bad = int(err[err > 0][0])
            raise NumericError(f"member {bad - 1} diverged or produced a non-PSD drift kernel")
        for b in range(n_blocks):
            acc.push_node(_BLOCK_LOG2, (a0 >> _BLOCK_LOG2) + b, out[b])
    if end > a1:
        run_span(a1, end)
    return acc


def run_ensemble(
    cfg: NetworkConfig,
    seeds: SeedPolicy,
    n_members: int,
    checkpoints: tuple[int, ...] | None = None,
    pair_layers: tuple[int, ...] | None = None,
    heavy: bool = False,
    backend: str | None = None,
    threads: int | None = None,
    member_start: int = 0,
    quad: QuadratureRule | None = None,
    k0_ladder: np.ndarray | None = None,
) -> "EnsembleAccumulator":
    """Simulate ``n_members`` members and stream their statistics.

    The background ladder (needed for the one-step residual centering) is
    integrated up front unless supplied.  Members occupy the index range
    [member_start, member_start + n_members); accumulators over adjacent
    ranges merge exactly.
    """
    if n_members < 2:
        raise ConfigError("an ensemble needs at least 2 members")
    cps = set(checkpoints if checkpoints is not None else default_checkpoints(cfg.depth))
    pls = tuple(sorted(set(
        pair_layers if pair_layers is not None else default_pair_layers(cfg.depth)
    )))
    for pl in pls:
        cps.update((pl, pl + 1))
    layout = PayloadLayout(cfg.n_points, cfg.depth, tuple(sorted(cps)), pls, heavy)
    ops = build_flow_ops(cfg.act, cfg.cw, cfg.cb, quad)
    if k0_ladder is None:
        k0_ladder = flow_k0(cfg.k0(), ops, cfg.integrator("ladder"), cfg.alpha)["k0"]
    ctx = _build_context(cfg, seeds, layout, k0_ladder, ops)
    chosen = backend if backend is not None else default_backend()
    start = member_start
    end = member_start + n_members
    if chosen == "numba":
        dyadic = _run_numba(start, end, ctx, layout, threads)
    elif chosen == "numpy":
        dyadic = _sim_numpy.run_range(start, end, ctx, layout)
    else:
        raise ConfigError(f"unknown backend {chosen!r}")
    return EnsembleAccumulator(cfg, seeds, layout, k0_ladder, dyadic, chosen)


@dataclass
class EnsembleAccumulator:
    """Streaming sufficient statistics of a simulated ensemble."""

    cfg: NetworkConfig
    seeds: SeedPolicy
    layout: PayloadLayout
    k0_ladder: np.ndarray
    dyadic: DyadicAccumulator
    backend: str

    @property
    def count(self) -> int:
        return self.dyadic.count

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        if (self.cfg, self.seeds.master_seed, self.layout) != (
            other.cfg, other.seeds.master_seed, other.layout,
        ):
            raise ConfigError("cannot merge ensembles with different configurations")
        return EnsembleAccumulator(
            self.cfg, self.seeds, self.layout, self.k0_ladder,
            self.dyadic.merge(other.dyadic), self.backend,
        )

    def estimates(self) -> "EnsembleEstimates":
        return EnsembleEstimates(self)


class EnsembleEstimates:
    """Means and standard errors of every tracked ensemble statistic.

    Standard errors come from the per-member variance of each scalar; the
    covariance estimators (which subtract products of means) report the
    standard error of their leading per-member term.
    """

    def __init__(self, acc: EnsembleAccumulator):
        self.cfg = acc.cfg
        self.layout = acc.layout
        self.k0_ladder = acc.k0_ladder
        self.count = acc.count
        self.checkpoints = np.array(acc.layout.checkpoints, dtype=np.int64)
        self.pair_layers = np.array(acc.layout.pair_layers, dtype=np.int64)
        self.times = acc.cfg.eps**2 * self.checkpoints
        self.heavy = acc.layout.heavy
        totals = acc.dyadic.totals()
        m = float(self.count)
        lay = acc.layout

        sq_name = {
            "g": "g2", "s": "s2", "s10": "s10_2", "s11": "s11_2", "s20": "s20_2",
            "e1": "e1_2", "gg": "gg2", "sm": "sm2", "a4": "a4_2",
        }

        def cp_stat(name):
            mean = np.stack(
                [lay.cp_view(totals, name, c) for c in range(lay.n_checkpoints)]
            ) / m
            sq = np.stack(
                [lay.cp_view(totals, sq_name[name], c) for c in range(lay.n_checkpoints)]
            ) / m
            return mean, _se(mean, sq, m)

        self.g_mean, self.g_se = cp_stat("g")
        self.s_mean, self.s_se = cp_stat("s")
        self.s10_mean, self.s10_se = cp_stat("s10")
        self.s11_mean, self.s11_se = cp_stat("s11")
        self.s20_mean, self.s20_se = cp_stat("s20")
        self.e1_mean, self.e1_se = cp_stat("e1")
        self.gg_mean, self.gg_se = cp_stat("gg")
        self.sm_mean, self.sm_se = cp_stat("sm")
        if self.heavy:
            self.a4_mean, self.a4_se = cp_stat("a4")
        else:
            self.a4_mean = self.a4_se = None

        def pair_stat(name):
            if lay.n_pairs == 0:
                return np.zeros((0, lay.p, lay.p)), np.zeros((0, lay.p, lay.p))
            mean = np.stack(
                [lay.pair_view(totals, name, i) for i in range(lay.n_pairs)]
            ) / m
            sq = np.stack(
                [lay.pair_view(totals, name + "2", i) for i in range(lay.n_pairs)]
            ) / m
            return mean, _se(mean, sq, m)

        self.rv_mean, self.rv_se = pair_stat("rv")
        if self.heavy:
            self.br_mean, self.br_se = pair_stat("br")
            self.qq_mean, self.qq_se = pair_stat("qq")
        else:
            self.br_mean = self.br_se = self.qq_mean = self.qq_se = None
        self.s_all_mean = lay.s_all_view(totals) / m

    # -- derived estimators ---------------------------------------------------

    @property
    def k0_at_checkpoints(self) -> np.ndarray:
        return self.k0_ladder[self.checkpoints]

    def g_pair_mean(self) -> np.ndarray:
        pl = pair_list(self.cfg.n_points)
        return self.g_mean[:, pl[:, 0], pl[:, 1]]

    def v4_emp(self) -> tuple[np.ndarray, np.ndarray]:
        """Empirical fluctuation covariance n*(E[GG] - mean x mean), with SE."""
        gbar = self.g_pair_mean()
        outer = np.einsum("ca,cb->cab", gbar, gbar)
        return self.cfg.n * (self.gg_mean - outer), self.cfg.n * self.gg_se

    def v4_phi(self) -> tuple[np.ndarray, np.ndarray]:
        """Cross-neuron connected 4-point estimate (heavy mode), with SE."""
        if not self.heavy:
            raise UnavailableError("cross-neuron statistics need heavy mode")
        gbar = self.g_pair_mean()
        outer = np.einsum("ca,cb->cab", gbar, gbar)
        return self.cfg.n * (self.a4_mean - outer), self.cfg.n * self.a4_se

    def sigma_mic(self) -> tuple[np.ndarray, np.ndarray]:
        return self.sm_mean, self.sm_se

    def k1_mic(self) -> tuple[np.ndarray, np.ndarray]:
        """n * (mean kernel - background ladder) at the checkpoints, with SE."""
        return self.cfg.n * (self.g_mean - self.k0_at_checkpoints), self.cfg.n * self.g_se

    def k1_consistency(self) -> tuple[np.ndarray, np.ndarray]:
        """K1_mic minus the exact-source reference, per member, with SE.

        Telescopes the reference recursion against the measured kernels, so
        the difference (expected zero) carries an honest per-member SE.
        """
        return self.cfg.n * self.e1_mean, self.cfg.n * self.e1_se

    def u1_exact(self, e2_of_k0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """n * (mean sigma-kernel - E2(K0)) at the checkpoints, with SE."""
        e2 = np.asarray(e2_of_k0)
        if e2.shape != self.s_mean.shape:
            raise ConfigError(f"e2 series shape {e2.shape} != {self.s_mean.shape}")
        return self.cfg.n * (self.s_mean - e2), self.cfg.n * self.s_se

    def u1_exact_ladder(self, e2_ladder: np.ndarray) -> np.ndarray:
        """Exact source at every ladder layer (no SEs; drives the reference flow)."""
        e2 = np.asarray(e2_ladder)
        if e2.shape != self.s_all_mean.shape:
            raise ConfigError(f"e2 ladder shape {e2.shape} != {self.s_all_mean.shape}")
        return self.cfg.n * (self.s_all_mean - e2)

    def bridge_residual(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and SE of the per-member total-covariance bridge defect."""
        if not self.heavy:
            raise UnavailableError("the bridge check needs heavy mode")
        return self.br_mean, self.br_se


def _se(mean: np.ndarray, sq_mean: np.ndarray, m: float) -> np.ndarray:
    var = np.maximum(sq_mean - mean * mean, 0.0) * (m / max(m - 1.0, 1.0))
    return np.sqrt(var / m)
