"""Pure-numpy ensemble simulation backend.

Reference semantics for the compiled backend and the fallback when numba is
unavailable (env ``KERNELFLOW_BACKEND=numpy`` selects it explicitly).  One
member at a time: the layer loop is vectorized over neurons, the payload is
written field by field through the layout views.
"""

from __future__ import annotations

import numpy as np

from .accumulator import DyadicAccumulator
from .errors import NumericError
from .layout import PayloadLayout
from .pairspace import omega, wishart_pair_product
from .rng import ROLE_INCREMENT, ROLE_INIT, normals_from_uniforms, philox4x64, uniforms_from_bits


def robust_cholesky(a: np.ndarray, rel_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular factor of a PSD matrix, tolerating exact rank deficiency.

    A pivot within rel_tol of zero (relative to the largest diagonal) zeroes
    its column: the corresponding direction is sampled with zero variance.
    A significantly negative pivot raises.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite matrix in Cholesky")
    scale = max(float(np.max(np.diag(a))), 0.0)
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - np.dot(low[j, :j], low[j, :j])
        if d <= rel_tol * scale:
            if d < -1e-8 * max(scale, 1e-300):
                raise NumericError(f"matrix is not PSD in Cholesky (pivot {d:.3e})")
            continue
        low[j, j] = np.sqrt(d)
        for i in range(j + 1, n):
            low[i, j] = (a[i, j] - np.dot(low[i, :j], low[j, :j])) / low[j, j]
    return low


def stream_normals(key0, key1, member: int, layer: int, role: int, count: int) -> np.ndarray:
    """The first ``count`` normals of the (member, layer, role) stream."""
    n_ticks = (count + 3) // 4
    counter = np.zeros((n_ticks, 4), dtype=np.uint64)
    counter[:, 0] = np.arange(n_ticks, dtype=np.uint64)
    counter[:, 1] = np.uint64(member)
    counter[:, 2] = np.uint64((layer << 3) | role)
    counter[:, 3] = np.uint64(1)
    bits = philox4x64(counter, key0, key1).reshape(-1)
    return normals_from_uniforms(uniforms_from_bits(bits))[:count]


def member_payload(member: int, ctx: dict, layout: PayloadLayout) -> np.ndarray:
    """Simulate one member and return its flat statistics payload."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _member_payload(member, ctx, layout)


def _member_payload(member: int, ctx: dict, layout: PayloadLayout) -> np.ndarray:
    n = ctx["n"]
    npts = ctx["n_points"]
    depth = ctx["depth"]
    eps = ctx["eps"]
    alpha = ctx["alpha"]
    cw = ctx["cw"]
    cb = ctx["cb"]
    act = ctx["act"]
    key0, key1 = ctx["key0"], ctx["key1"]
    pairs = ctx["pairs"]
    pa, pb = pairs[:, 0], pairs[:, 1]
    heavy = layout.heavy
    eps2 = eps * eps
    a2 = alpha * alpha

    payload = np.zeros(layout.total)
    s_all = layout.s_all_view(payload)

    z = stream_normals(key0, key1, member, 0, ROLE_INIT, n * npts).reshape(n, npts)
    phi = z @ ctx["chol0"].T
    g_cur = phi.T @ phi / n
    e1 = g_cur - ctx["k00"]
    gpair_prev = np.empty(layout.p)
    qh_stash = np.empty((npts, npts))

    for ell in range(depth + 1):
        sphi = act.deriv(phi, 0)
        s_mat = sphi.T @ sphi / n
        q_hat = cb + cw * s_mat
        s_all[ell] = s_mat
        if not np.isfinite(g_cur[0, 0]):
            raise NumericError(f"member {member} diverged at layer {ell}")

        slot = ctx["cp_slot"][ell]
        if slot >= 0:
            d1 = act.deriv(phi, 1)
            d2 = act.deriv(phi, 2)
            cpv = lambda name: layout.cp_view(payload, name, slot)  # noqa: E731
            cpv("g")[:] = g_cur
            cpv("g2")[:] = g_cur * g_cur
            cpv("s")[:] = s_mat
            cpv("s2")[:] = s_mat * s_mat
            s10 = d1.T @ sphi / n
            s11 = d1.T @ d1 / n
            s20 = d2.T @ sphi / n
            cpv("s10")[:] = s10
            cpv("s10_2")[:] = s10 * s10
            cpv("s11")[:] = s11
            cpv("s11_2")[:] = s11 * s11
            cpv("s20")[:] = s20
            cpv("s20_2")[:] = s20 * s20
            cpv("e1")[:] = e1
            cpv("e1_2")[:] = e1 * e1
            gpair = g_cur[pa, pb]
            gg = np.outer(gpair, gpair)
            cpv("gg")[:] = gg
            cpv("gg2")[:] = gg * gg
            sm = wishart_pair_product(g_cur, q_hat)
            cpv("sm")[:] = sm
            cpv("sm2")[:] = sm * sm
            if heavy:
                pv = phi[:, pa] * phi[:, pb]
                p4 = pv.T @ pv
                a4 = (n * n * gg - p4) / (n * (n - 1))
                cpv("a4")[:] = a4
                cpv("a4_2")[:] = a4 * a4

        if ell == depth:
            break

        ps = ctx["pair_slot"][ell]
        if ps >= 0:
            gpair_prev[:] = g_cur[pa, pb]
            if heavy:
                qh_stash[:] = q_hat

        low = robust_cholesky(q_hat)
        z = stream_normals(key0, key1, member, ell, ROLE_INCREMENT, n * npts).reshape(n, npts)
        phi = alpha * phi + eps * (z @ low.T)
        g_new = phi.T @ phi / n
        e1 = a2 * e1 + (g_new - a2 * g_cur - eps2 * q_hat)
        g_cur = g_new

        if ps >= 0:
            gpair = g_cur[pa, pb]
            gg_new = np.outer(gpair, gpair)
            gg_old = np.outer(gpair_prev, gpair_prev)
            x = ctx["chi_pairs"][ps] @ gg_old
            y = n * (gg_new - gg_old - eps2 * (x + x.T))
            k0lo = ctx["k0p_lo"][ps]
            k0hi = ctx["k0p_hi"][ps]
            psi = n * (
                np.outer(gpair, k0hi) + np.outer(k0hi, gpair)
                - np.outer(gpair_prev, k0lo) - np.outer(k0lo, gpair_prev)
            )
            rv = y - psi
            layout.pair_view(payload, "rv", ps)[:] = rv
            layout.pair_view(payload, "rv2", ps)[:] = rv * rv
            if heavy:
                pv = phi[:, pa] * phi[:, pb]
                p4 = pv.T @ pv
                qq = omega(qh_stash)
                br = (p4 - n * gg_new) / (n - 1) - qq
                layout.pair_view(payload, "br", ps)[:] = br
                layout.pair_view(payload, "br2", ps)[:] = br * br
                layout.pair_view(payload, "qq", ps)[:] = qq
                layout.pair_view(payload, "qq2", ps)[:] = qq * qq

    return payload


def run_range(start: int, end: int, ctx: dict, layout: PayloadLayout) -> DyadicAccumulator:
    acc = DyadicAccumulator(layout.total)
    for m in range(start, end):
        acc.push_leaf(m, member_payload(m, ctx, layout))
    return acc
