"""Deterministic integration of the kernel closure hierarchy.

Three coupled objects evolve on the depth ladder t = eps^2 * l:

* the background kernel,            dK0/dt = Q(K0),
* the fluctuation covariance,       dV4/dt = chi V4 + V4 chi^T + Sigma(K0),
* the mean correction,              dK1/dt = chi[K1] + (1/2) D2Q[K0] : V4,

plus the reference recursion driven by a measured exact source, the
response propagator of the linearized transport, and the transported
integral forms of V4 and K1 (an independent numerical route used for
consistency checks).

Two integration modes: ``ladder`` replays the exact one-step recursions of
the generalized residual block at step eps^2 (the default; it matches the
simulator's depth grid), ``rk4`` integrates the continuous flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .activations import Activation, get_activation
from .errors import ConfigError, DataError, DomainError, FlowError
from .gaussian_ops import KernelTables, check_kernel
from .pairspace import from_pairvec, omega, pair_count, to_pairvec, wishart_pair_product
from .quadrature import QuadratureRule

_PSD_TOL = 1e-10


@dataclass(frozen=True)
class IntegratorConfig:
    """Grid and mode for the hierarchy integrators.

    ``eps`` fixes the ladder step dt = eps^2.  ``depth`` (ladder steps) or
    ``final_time`` determines the span; rk4_dt defaults to eps^2.
    """

    mode: str = "ladder"
    eps: float = 0.1
    depth: int | None = None
    final_time: float | None = None
    rk4_dt: float | None = None

    def __post_init__(self):
        if self.mode not in ("ladder", "rk4"):
            raise ConfigError(f"unknown integrator mode {self.mode!r}")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.depth is None and self.final_time is None:
            raise ConfigError("either depth or final_time is required")

    @property
    def ladder_steps(self) -> int:
        if self.depth is not None:
            return int(self.depth)
        return max(1, round(self.final_time / self.eps**2))

    @property
    def span(self) -> float:
        if self.final_time is not None:
            return float(self.final_time)
        return self.eps**2 * self.depth

    @property
    def dt(self) -> float:
        if self.mode == "ladder":
            return self.eps**2
        return self.rk4_dt if self.rk4_dt is not None else self.eps**2

    @property
    def n_steps(self) -> int:
        if self.mode == "ladder":
            return self.ladder_steps
        return max(1, round(self.span / self.dt))


@dataclass
class FlowOps:
    """Kernel-space operators bound to one (activation, C_W, C_b, rule)."""

    act: Activation
    cw: float
    cb: float
    quad: QuadratureRule

    def tables(self, k: np.ndarray, max_order: int) -> KernelTables:
        return KernelTables(k, self.act, self.quad, max_order)

    def q(self, k: np.ndarray) -> np.ndarray:
        return self.tables(k, 0).q(self.cw, self.cb)

    def e2(self, k: np.ndarray) -> np.ndarray:
        return self.tables(k, 0).e2()

    def chi(self, k: np.ndarray) -> np.ndarray:
        return self.tables(k, 2).chi(self.cw)

    def sigma(self, k: np.ndarray) -> np.ndarray:
        kk = check_kernel(k)
        return wishart_pair_product(kk, self.q(kk))

    def d2q(self, k: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.tables(k, 4).d2q_contract(v, self.cw)


def build_flow_ops(
    act: str | Activation,
    cw: float,
    cb: float,
    quad: QuadratureRule | None = None,
) -> FlowOps:
    if isinstance(act, str):
        act = get_activation(act)
    return FlowOps(act, cw, cb, quad if quad is not None else QuadratureRule())


@dataclass
class FlowTrajectory:
    """Time-indexed flow states on a uniform grid."""

    times: np.ndarray
    data: dict[str, np.ndarray]
    mode: str
    eps: float
    alpha: float = 1.0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise DataError(f"time {t} is not on the trajectory grid")
        return idx

    def at(self, t: float, name: str) -> np.ndarray:
        return self.data[name][self.index_of(t)]


def _check_psd(mat: np.ndarray, what: str, step: int) -> None:
    scale = max(float(np.trace(mat)), 1e-300)
    lam = float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])
    if lam < -_PSD_TOL * scale:
        raise FlowError(
            f"{what} lost positive semidefiniteness at step {step}: "
            f"min eigenvalue {lam:.3e}"
        )


def _rk4(y0, rhs: Callable, dt: float, n_steps: int, store: Callable):
    y = y0
    store(0, y)
    t = 0.0
    for k in range(n_steps):
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, _axpy(y, 0.5 * dt, k1))
        k3 = rhs(t + 0.5 * dt, _axpy(y, 0.5 * dt, k2))
        k4 = rhs(t + dt, _axpy(y, dt, k3))
        y = tuple(
            yi + (dt / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for yi, a, b, c, d in zip(y, k1, k2, k3, k4)
        )
        t += dt
        store(k + 1, y)
    return y


def _axpy(y: tuple, a: float, d: tuple) -> tuple:
    return tuple(yi + a * di for yi, di in zip(y, d))


# ---------------------------------------------------------------------------
# background kernel
# ---------------------------------------------------------------------------


def flow_k0(
    k0_init: np.ndarray,
    ops: FlowOps,
    integ: IntegratorConfig,
    alpha: float = 1.0,
) -> FlowTrajectory:
    """Background kernel trajectory (ladder recursion or continuous RK4)."""
    k0 = check_kernel(k0_init)
    npts = k0.shape[0]
    steps = integ.n_steps
    out = np.empty((steps + 1, npts, npts))
    if integ.mode == "ladder":
        eps2 = integ.eps**2
        a2 = alpha * alpha
        out[0] = k0
        for l in range(steps):
            out[l + 1] = a2 * out[l] + eps2 * ops.q(out[l])
            _check_psd(out[l + 1], "background kernel", l + 1)
        times = eps2 * np.arange(steps + 1)
    else:
        if alpha != 1.0:
            raise ConfigError("continuous mode is defined for the residual scaling (alpha=1)")
        dt = integ.span / steps

        def rhs(t, y):
            return (ops.q(y[0]),)

        def store(i, y):
            out[i] = y[0]

        _rk4((k0,), rhs, dt, steps, store)
        for i in range(steps + 1):
            _check_psd(out[i], "background kernel", i)
        times = dt * np.arange(steps + 1)
    return FlowTrajectory(times, {"k0": out}, integ.mode, integ.eps, alpha)


# ---------------------------------------------------------------------------
# fluctuation covariance
# ---------------------------------------------------------------------------


def _default_v4_init(k0: np.ndarray) -> np.ndarray:
    return omega(k0)


def flow_v4(
    v4_init: np.ndarray | None,
    k0_traj: FlowTrajectory,
    ops: FlowOps,
    integ: IntegratorConfig,
    alpha: float = 1.0,
    include_wishart: bool = True,
    transport: bool = True,
    source: bool = True,
) -> FlowTrajectory:
    """Fluctuation-covariance trajectory driven by a background trajectory.

    ``transport=False`` drops the susceptibility transport (source-only
    integration); ``include_wishart`` keeps the eps^4 increment-Gram noise
    of the one-step recursion (subleading for small eps, the whole source in
    the feedforward limit alpha=0, eps=1).
    """
    k0s = k0_traj["k0"]
    npts = k0s.shape[1]
    p = pair_count(npts)
    if v4_init is None:
        v4_init = _default_v4_init(k0s[0])
    v4 = np.asarray(v4_init, dtype=float)
    if v4.shape != (p, p):
        raise ConfigError(f"v4 init must be ({p}, {p}), got {v4.shape}")
    steps = integ.n_steps
    if len(k0s) < steps + 1:
        raise ConfigError("background trajectory is shorter than the integration grid")
    out = np.empty((steps + 1, p, p))
    if integ.mode == "ladder":
        if k0_traj.mode != "ladder":
            raise ConfigError("ladder integration needs a ladder background trajectory")
        eps2 = integ.eps**2
        a2 = alpha * alpha
        out[0] = v4
        eye = np.eye(p)
        for l in range(steps):
            tabs = ops.tables(k0s[l], 2)
            amat = a2 * eye + (eps2 * tabs.chi(ops.cw) if transport else 0.0)
            nxt = amat @ out[l] @ amat.T
            if source:
                nxt += a2 * eps2 * wishart_pair_product(k0s[l], tabs.q(ops.cw, ops.cb))
            if include_wishart:
                nxt += eps2 * eps2 * omega(k0s[l])
            out[l + 1] = 0.5 * (nxt + nxt.T)
            _check_psd(out[l + 1], "fluctuation covariance", l + 1)
        times = eps2 * np.arange(steps + 1)
    else:
        dt = integ.span / steps

        def rhs(t, y):
            k, v = y
            tabs = ops.tables(k, 2)
            dv = np.zeros_like(v)
            if transport:
                x = tabs.chi(ops.cw) @ v
                dv += x + x.T
            if source:
                dv += wishart_pair_product(k, tabs.q(ops.cw, ops.cb))
            return (ops.q(k), dv)

        def store(i, y):
            out[i] = 0.5 * (y[1] + y[1].T)

        _rk4((k0s[0], v4), rhs, dt, steps, store)
        for i in range(steps + 1):
            _check_psd(out[i], "fluctuation covariance", i)
        times = dt * np.arange(steps + 1)
    return FlowTrajectory(times, {"v4": out}, integ.mode, integ.eps, alpha)


# ---------------------------------------------------------------------------
# mean correction
# ---------------------------------------------------------------------------


def flow_k1_eft(
    k1_init: np.ndarray | None,
    k0_traj: FlowTrajectory,
    v4_traj: FlowTrajectory,
    ops: FlowOps,
    integ: IntegratorConfig,
    alpha: float = 1.0,
) -> FlowTrajectory:
    """Tadpole-sourced linear flow of the 1/n mean correction."""
    k0s = k0_traj["k0"]
    v4s = v4_traj["v4"]
    npts = k0s.shape[1]
    if k1_init is None:
        k1 = np.zeros((npts, npts))
    else:
        k1 = np.asarray(k1_init, dtype=float)
    steps = integ.n_steps
    if len(k0s) < steps + 1 or len(v4s) < steps + 1:
        raise ConfigError("input trajectories are shorter than the integration grid")
    if not np.allclose(k0_traj.times[: steps + 1], v4_traj.times[: steps + 1], atol=1e-12):
        raise ConfigError("background and covariance trajectories are on different grids")
    out = np.empty((steps + 1, npts, npts))
    if integ.mode == "ladder":
        eps2 = integ.eps**2
        a2 = alpha * alpha
        out[0] = k1
        for l in range(steps):
            tabs = ops.tables(k0s[l], 4)
            transport = from_pairvec(tabs.chi(ops.cw) @ to_pairvec(out[l]), npts)
            tadpole = 0.5 * tabs.d2q_contract(v4s[l], ops.cw)
            out[l + 1] = a2 * out[l] + eps2 * (transport + tadpole)
        times = eps2 * np.arange(steps + 1)
    else:
        dt = integ.span / steps

        def rhs(t, y):
            k, v, k1m = y
            tabs = ops.tables(k, 4)
            x = tabs.chi(ops.cw) @ v
            dv = x + x.T + wishart_pair_product(k, tabs.q(ops.cw, ops.cb))
            dk1 = from_pairvec(tabs.chi(ops.cw) @ to_pairvec(k1m), npts)
            dk1 += 0.5 * tabs.d2q_contract(v, ops.cw)
            return (ops.q(k), dv, dk1)

        def store(i, y):
            out[i] = 0.5 * (y[2] + y[2].T)

        _rk4((k0s[0], v4s[0], k1), rhs, dt, steps, store)
        times = dt * np.arange(steps + 1)
    return FlowTrajectory(times, {"k1": out}, integ.mode, integ.eps, alpha)


def flow_k1_u1ex(
    u1_series: np.ndarray,
    integ: IntegratorConfig,
    cw: float,
    alpha: float = 1.0,
    k1_init: np.ndarray | None = None,
    source_layers: np.ndarray | None = None,
    interpolate: bool = False,
) -> FlowTrajectory:
    """Reference mean-correction ladder driven by the measured exact source.

    ``u1_series`` holds the source at every ladder step (shape (L, N, N) or
    (L+1, N, N); the step-l update uses entry l).  A partial series with
    ``source_layers`` is accepted only with ``interpolate=True`` (linear in
    depth, order recorded in the trajectory metadata).
    """
    if integ.mode != "ladder":
        raise ConfigError("the exact-source reference recursion is a ladder object")
    steps = integ.ladder_steps
    u1 = np.asarray(u1_series, dtype=float)
    if source_layers is not None:
        source_layers = np.asarray(source_layers)
        if len(source_layers) != len(u1):
            raise ConfigError("source_layers length must match u1_series")
        if not interpolate:
            raise DataError(
                "exact source does not cover every ladder step; "
                "pass interpolate=True to fill in linearly"
            )
        full = np.empty((steps,) + u1.shape[1:])
        for idx in np.ndindex(u1.shape[1:]):
            full[(slice(None),) + idx] = np.interp(
                np.arange(steps), source_layers, u1[(slice(None),) + idx]
            )
        u1 = full
    if len(u1) < steps:
        raise DataError(
            f"exact source covers {len(u1)} ladder steps, integration needs {steps}"
        )
    npts = u1.shape[1]
    k1 = np.zeros((npts, npts)) if k1_init is None else np.asarray(k1_init, dtype=float)
    eps2 = integ.eps**2
    a2 = alpha * alpha
    out = np.empty((steps + 1, npts, npts))
    out[0] = k1
    for l in range(steps):
        out[l + 1] = a2 * out[l] + eps2 * cw * u1[l]
    traj = FlowTrajectory(eps2 * np.arange(steps + 1), {"k1": out}, "ladder", integ.eps, alpha)
    traj.data["interpolated"] = np.array([1.0 if source_layers is not None else 0.0])
    return traj


# ---------------------------------------------------------------------------
# response propagator and integral forms
# ---------------------------------------------------------------------------


@dataclass
class OperatorGrid:
    """Susceptibility/source operators pretabulated on a fine uniform grid."""

    times: np.ndarray          # (G,), spacing h
    k0: np.ndarray             # (G, N, N)
    chi: np.ndarray            # (G, P, P)
    sigma: np.ndarray          # (G, P, P)
    d2: np.ndarray | None      # (G, P, P, P) when the tadpole is needed

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])


def build_operator_grid(
    k0_init: np.ndarray,
    ops: FlowOps,
    span: float,
    h: float,
    with_tadpole: bool = False,
) -> OperatorGrid:
    """Integrate the background at step h and tabulate operators at each node."""
    n_steps = max(1, round(span / h))
    h = span / n_steps
    npts = k0_init.shape[0]
    p = pair_count(npts)
    k0 = np.empty((n_steps + 1, npts, npts))

    def rhs(t, y):
        return (ops.q(y[0]),)

    def store(i, y):
        k0[i] = y[0]

    _rk4((check_kernel(k0_init),), rhs, h, n_steps, store)
    chi = np.empty((n_steps + 1, p, p))
    sigma = np.empty((n_steps + 1, p, p))
    d2 = np.empty((n_steps + 1, p, p, p)) if with_tadpole else None
    for i in range(n_steps + 1):
        tabs = ops.tables(k0[i], 4 if with_tadpole else 2)
        chi[i] = tabs.chi(ops.cw)
        sigma[i] = wishart_pair_product(k0[i], tabs.q(ops.cw, ops.cb))
        if with_tadpole:
            d2[i] = tabs.d2q_tensor(ops.cw)
    return OperatorGrid(h * np.arange(n_steps + 1), k0, chi, sigma, d2)


def _grid_index(grid: OperatorGrid, t: float) -> int:
    idx = int(round(t / grid.h))
    if not 0 <= idx < len(grid.times) or abs(grid.times[idx] - t) > 1e-9 * max(1.0, t):
        raise DataError(f"time {t} is not on the operator grid")
    return idx


def _transport_backward(grid: OperatorGrid, m: int) -> np.ndarray:
    """R(t_m, u) for u at even grid nodes 0..m, by backward RK4 in u.

    The flow-map convention R(s, s) = Id is used; stepping uses the
    half-grid susceptibility values, so one RK4 step spans two grid nodes.
    """
    p = grid.chi.shape[1]
    n_half = m // 2
    out = np.empty((n_half + 1, p, p))
    r = np.eye(p)
    out[n_half] = r
    dt = 2.0 * grid.h
    for j in range(n_half, 0, -1):
        hi, mid, lo = 2 * j, 2 * j - 1, 2 * j - 2
        f1 = -r @ grid.chi[hi]
        r2 = r - 0.5 * dt * f1
        f2 = -r2 @ grid.chi[mid]
        r3 = r - 0.5 * dt * f2
        f3 = -r3 @ grid.chi[mid]
        r4 = r - dt * f3
        f4 = -r4 @ grid.chi[lo]
        r = r - (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        out[j - 1] = r
    return out


def _integrate_nodes(values: np.ndarray, dt: float) -> np.ndarray:
    """Composite Simpson (with a 3/8 tail for odd interval counts)."""
    n = len(values) - 1
    if n == 0:
        return np.zeros_like(values[0])
    if n == 1:
        return 0.5 * dt * (values[0] + values[1])
    total = np.zeros_like(values[0])
    stop = n if n % 2 == 0 else n - 3
    for j in range(0, stop, 2):
        total = total + (dt / 3.0) * (values[j] + 4.0 * values[j + 1] + values[j + 2])
    if n % 2 == 1:
        if stop < 0:
            return 0.5 * dt * (values[0] + values[1])
        j = stop
        total = total + (3.0 * dt / 8.0) * (
            values[j] + 3.0 * values[j + 1] + 3.0 * values[j + 2] + values[j + 3]
        )
    return total


def response_propagator(
    k0_traj: FlowTrajectory,
    s: float,
    ops: FlowOps,
    integ: IntegratorConfig,
    grid: OperatorGrid | None = None,
) -> FlowTrajectory:
    """Flow map R(t, s) of the linearized transport, for t >= s on the grid.

    R solves dR/dt = chi(K0(t)) R with R(s, s) = Id (flow-map convention;
    the field-theory equal-time rule R(s, s) = 0 concerns the contraction
    order of the noise vertex and has no numerical counterpart here).
    """
    if s < -1e-12:
        raise DomainError("response requested before the initial time")
    if grid is None:
        grid = build_operator_grid(
            k0_traj["k0"][0], ops, k0_traj.final_time, 0.5 * integ.dt
        )
    i0 = _grid_index(grid, s)
    if i0 % 2 != 0:
        raise DataError("response start time must sit on the coarse grid")
    n_nodes = (len(grid.times) - 1 - i0) // 2 + 1
    p = grid.chi.shape[1]
    out = np.empty((n_nodes, p, p))
    r = np.eye(p)
    out[0] = r
    dt = 2.0 * grid.h
    for j in range(1, n_nodes):
        lo = i0 + 2 * (j - 1)
        f1 = grid.chi[lo] @ r
        r2 = r + 0.5 * dt * f1
        f2 = grid.chi[lo + 1] @ r2
        r3 = r + 0.5 * dt * f2
        f3 = grid.chi[lo + 1] @ r3
        r4 = r + dt * f3
        f4 = grid.chi[lo + 2] @ r4
        r = r + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        out[j] = r
    times = grid.times[i0::2][:n_nodes]
    return FlowTrajectory(times, {"response": out}, "rk4", integ.eps)


def v4_integral_form(
    k0_traj: FlowTrajectory,
    v4_init: np.ndarray | None,
    ops: FlowOps,
    integ: IntegratorConfig,
    report_times: np.ndarray | None = None,
    grid: OperatorGrid | None = None,
) -> FlowTrajectory:
    """V4 via transported initial condition plus the transported noise source.

    V4(t) = R(t,0) V4(0) R(t,0)^T + int_0^t R(t,u) Sigma(K0(u)) R(t,u)^T du,
    evaluated by backward-propagated flow maps and Simpson quadrature on the
    operator grid.  Matches the ODE route to integrator tolerance.
    """
    if grid is None:
        grid = build_operator_grid(
            k0_traj["k0"][0], ops, k0_traj.final_time, 0.5 * integ.dt
        )
    if v4_init is None:
        v4_init = _default_v4_init(grid.k0[0])
    if report_times is None:
        report_times = k0_traj.times
    p = grid.chi.shape[1]
    out = np.empty((len(report_times), p, p))
    dt = 2.0 * grid.h
    for i, t in enumerate(report_times):
        m = _grid_index(grid, float(t))
        if m % 2 != 0:
            raise DataError(f"report time {t} must sit on the coarse grid")
        rs = _transport_backward(grid, m)
        integrand = np.empty((m // 2 + 1, p, p))
        for j in range(m // 2 + 1):
            integrand[j] = rs[j] @ grid.sigma[2 * j] @ rs[j].T
        val = rs[0] @ v4_init @ rs[0].T + _integrate_nodes(integrand, dt)
        out[i] = 0.5 * (val + val.T)
    return FlowTrajectory(np.asarray(report_times, dtype=float), {"v4": out}, "rk4", integ.eps)


def k1_integral_form(
    k0_traj: FlowTrajectory,
    v4_traj: FlowTrajectory,
    k1_init: np.ndarray | None,
    ops: FlowOps,
    integ: IntegratorConfig,
    report_times: np.ndarray | None = None,
    grid: OperatorGrid | None = None,
    include_tadpole: bool = True,
) -> FlowTrajectory:
    """K1 via transported initial condition plus the one-loop tadpole integral.

    K1(t) = R(t,0) K1(0) + int_0^t R(t,s) (1/2) D2Q[K0(s)] : V4(s) ds.
    V4 values are interpolated from ``v4_traj`` onto the operator grid.
    """
    if grid is None or grid.d2 is None:
        grid = build_operator_grid(
            k0_traj["k0"][0], ops, k0_traj.final_time, 0.5 * integ.dt, with_tadpole=True
        )
    npts = k0_traj["k0"].shape[1]
    p = pair_count(npts)
    k1vec = (
        np.zeros(p) if k1_init is None else to_pairvec(np.asarray(k1_init, dtype=float))
    )
    if report_times is None:
        report_times = k0_traj.times
    # tadpole source on the even grid nodes
    v4_times = v4_traj.times
    v4s = v4_traj["v4"]
    n_even = (len(grid.times) - 1) // 2 + 1
    tad = np.zeros((n_even, p))
    if include_tadpole:
        for j in range(n_even):
            t = grid.times[2 * j]
            # linear interpolation of V4 between its trajectory nodes
            pos = np.searchsorted(v4_times, t - 1e-12)
            pos = min(max(pos, 0), len(v4_times) - 1)
            if abs(v4_times[pos] - t) < 1e-9 * max(1.0, t):
                v4_here = v4s[pos]
            else:
                lo = max(pos - 1, 0)
                w = (t - v4_times[lo]) / (v4_times[pos] - v4_times[lo])
                v4_here = (1 - w) * v4s[lo] + w * v4s[pos]
            tad[j] = 0.5 * np.einsum("rab,ab->r", grid.d2[2 * j], v4_here)
    out = np.empty((len(report_times), npts, npts))
    dt = 2.0 * grid.h
    for i, t in enumerate(report_times):
        m = _grid_index(grid, float(t))
        if m % 2 != 0:
            raise DataError(f"report time {t} must sit on the coarse grid")
        rs = _transport_backward(grid, m)
        integrand = np.empty((m // 2 + 1, p))
        for j in range(m // 2 + 1):
            integrand[j] = rs[j] @ tad[j]
        vec = rs[0] @ k1vec + _integrate_nodes(integrand, dt)
        out[i] = from_pairvec(vec, npts)
    return FlowTrajectory(np.asarray(report_times, dtype=float), {"k1": out}, "rk4", integ.eps)
