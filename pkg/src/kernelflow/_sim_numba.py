"""Compiled ensemble simulation backend (numba).

Mirrors ``_sim_numpy`` member for member: same Philox streams, same
Box-Muller transform, same payload layout.  Members are reduced through the
same aligned dyadic tree, so results are independent of thread count and
block partitioning.

Aligned power-of-two blocks collapse to a single tree node each and are the
parallel work items; ragged head/tail ranges run in a sequential fragment
kernel that returns its maximal dyadic nodes.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .activations import ACT_ERF, ACT_LINEAR, ACT_TANH

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH11 = np.uint64(11)
_INV53 = 2.0**-53
_TWO_PI = 2.0 * math.pi
_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_CTR_SALT = np.uint64(1)
_ONE = np.uint64(1)

_FASTKW = dict(cache=True, fastmath=True, inline="always")


@njit(**_FASTKW)
def _mulhi(a, b):
    a_lo = a & _MASK32
    a_hi = a >> _SH32
    b_lo = b & _MASK32
    b_hi = b >> _SH32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _SH32)
    w1 = t & _MASK32
    w2 = t >> _SH32
    t2 = a_lo * b_hi + w1
    return a_hi * b_hi + w2 + (t2 >> _SH32)


@njit(**_FASTKW)
def _philox_tick(c0, c1, c2, c3, key0, key1):
    k0 = key0
    k1 = key1
    for _ in range(10):
        hi0 = _mulhi(_M0, c0)
        lo0 = _M0 * c0
        hi1 = _mulhi(_M1, c2)
        lo1 = _M1 * c2
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        k0 = k0 + _W0
        k1 = k1 + _W1
    return c0, c1, c2, c3


@njit(**_FASTKW)
def _fill_normals(buf, count, key0, key1, member, layer_role):
    c1 = np.uint64(member)
    c2 = np.uint64(layer_role)
    n_ticks = (count + 3) // 4
    idx = 0
    for t in range(n_ticks):
        o0, o1, o2, o3 = _philox_tick(np.uint64(t), c1, c2, _CTR_SALT, key0, key1)
        u0 = np.float64((o0 >> _SH11) | _ONE) * _INV53
        u1 = np.float64((o1 >> _SH11) | _ONE) * _INV53
        u2 = np.float64((o2 >> _SH11) | _ONE) * _INV53
        u3 = np.float64((o3 >> _SH11) | _ONE) * _INV53
        r0 = math.sqrt(-2.0 * math.log(u0))
        th0 = _TWO_PI * u1
        r1 = math.sqrt(-2.0 * math.log(u2))
        th1 = _TWO_PI * u3
        # sin recovered from cos: cheaper than a second trig call, and the
        # numpy twin applies the same formula so streams stay comparable
        c0_ = math.cos(th0)
        s0_ = math.sqrt(max(1.0 - c0_ * c0_, 0.0))
        if th0 > math.pi:
            s0_ = -s0_
        c1_ = math.cos(th1)
        s1_ = math.sqrt(max(1.0 - c1_ * c1_, 0.0))
        if th1 > math.pi:
            s1_ = -s1_
        if idx < count:
            buf[idx] = r0 * c0_
            idx += 1
        if idx < count:
            buf[idx] = r0 * s0_
            idx += 1
        if idx < count:
            buf[idx] = r1 * c1_
            idx += 1
        if idx < count:
            buf[idx] = r1 * s1_
            idx += 1


@njit(**_FASTKW)
def _act_val(code, x):
    if code == ACT_TANH:
        return math.tanh(x)
    if code == ACT_ERF:
        return math.erf(x)
    return x


@njit(cache=True, inline="always")
def _chol_psd(a, low, rel_tol):
    """Lower Cholesky of a PSD matrix; zero pivot for degenerate directions.

    Returns 0 on success, 1 if a significantly negative pivot shows up.
    """
    npts = a.shape[0]
    scale = 0.0
    for j in range(npts):
        if not math.isfinite(a[j, j]):
            return 1
        if a[j, j] > scale:
            scale = a[j, j]
    for j in range(npts):
        acc = a[j, j]
        for k in range(j):
            acc -= low[j, k] * low[j, k]
        if acc <= rel_tol * scale:
            if acc < -1e-8 * (scale if scale > 0 else 1e-300):
                return 1
            for i in range(npts):
                low[i, j] = 0.0
            continue
        low[j, j] = math.sqrt(acc)
        for i in range(j + 1, npts):
            acc2 = a[i, j]
            for k in range(j):
                acc2 -= low[i, k] * low[j, k]
            low[i, j] = acc2 / low[j, j]
        for i in range(j):
            low[i, j] = 0.0
    return 0


@njit(cache=True)
def _member_into(
    payload, member,
    n, npts, depth, eps, alpha, cw, cb, act_code,
    key0, key1,
    chol0, k00, cp_slot, pair_slot, pa, pb, chi_pairs, k0p_lo, k0p_hi,
    heavy, cp_block, pair_block, pair_base, s_all_offset,
    # scratch
    phi, sphi, d1, d2, zbuf, s_mat, q_hat, low, g_cur, g_new, e1,
    gpair, gpair_prev, qh_stash, gg_old, xc, pv, p4,
):
    """Simulate one member, writing its statistics payload. 0 = ok."""
    p = pa.shape[0]
    p2 = p * p
    k2 = npts * npts
    eps2 = eps * eps
    a2 = alpha * alpha
    nf = float(n)

    _fill_normals(zbuf, n * npts, key0, key1, member, 0)
    for i in range(n):
        for a in range(npts):
            acc = 0.0
            for c in range(a + 1):
                acc += zbuf[i * npts + c] * chol0[a, c]
            phi[i, a] = acc
    for a in range(npts):
        for b in range(a, npts):
            acc = 0.0
            for i in range(n):
                acc += phi[i, a] * phi[i, b]
            g_cur[a, b] = acc / nf
            g_cur[b, a] = g_cur[a, b]
    for a in range(npts):
        for b in range(npts):
            e1[a, b] = g_cur[a, b] - k00[a, b]

    for ell in range(depth + 1):
        for i in range(n):
            for a in range(npts):
                sphi[i, a] = _act_val(act_code, phi[i, a])
        for a in range(npts):
            for b in range(a, npts):
                acc = 0.0
                for i in range(n):
                    acc += sphi[i, a] * sphi[i, b]
                s_mat[a, b] = acc / nf
                s_mat[b, a] = s_mat[a, b]
        for a in range(npts):
            for b in range(npts):
                q_hat[a, b] = cb + cw * s_mat[a, b]
        base = s_all_offset + ell * k2
        for a in range(npts):
            for b in range(npts):
                payload[base + a * npts + b] = s_mat[a, b]
        if not math.isfinite(g_cur[0, 0]):
            return ell + 1

        slot = cp_slot[ell]
        if slot >= 0:
            # first/second activation derivatives at the checkpoint
            for i in range(n):
                for a in range(npts):
                    if act_code == ACT_TANH:
                        t = sphi[i, a]
                        u = 1.0 - t * t
                        d1[i, a] = u
                        d2[i, a] = -2.0 * t * u
                    elif act_code == ACT_ERF:
                        x = phi[i, a]
                        g = _TWO_OVER_SQRT_PI * math.exp(-x * x)
                        d1[i, a] = g
                        d2[i, a] = -2.0 * x * g
                    else:
                        d1[i, a] = 1.0
                        d2[i, a] = 0.0
            cbase = slot * cp_block
            # g, g2, s, s2
            for a in range(npts):
                for b in range(npts):
                    o = a * npts + b
                    gv = g_cur[a, b]
                    sv = s_mat[a, b]
                    payload[cbase + o] = gv
                    payload[cbase + k2 + o] = gv * gv
                    payload[cbase + 2 * k2 + o] = sv
                    payload[cbase + 3 * k2 + o] = sv * sv
            # s10, s11, s20 (+ squares)
            for a in range(npts):
                for b in range(npts):
                    acc10 = 0.0
                    acc11 = 0.0
                    acc20 = 0.0
                    for i in range(n):
                        acc10 += d1[i, a] * sphi[i, b]
                        acc11 += d1[i, a] * d1[i, b]
                        acc20 += d2[i, a] * sphi[i, b]
                    v10 = acc10 / nf
                    v11 = acc11 / nf
                    v20 = acc20 / nf
                    o = a * npts + b
                    payload[cbase + 4 * k2 + o] = v10
                    payload[cbase + 5 * k2 + o] = v10 * v10
                    payload[cbase + 6 * k2 + o] = v11
                    payload[cbase + 7 * k2 + o] = v11 * v11
                    payload[cbase + 8 * k2 + o] = v20
                    payload[cbase + 9 * k2 + o] = v20 * v20
            # e1
            for a in range(npts):
                for b in range(npts):
                    o = a * npts + b
                    ev = e1[a, b]
                    payload[cbase + 10 * k2 + o] = ev
                    payload[cbase + 11 * k2 + o] = ev * ev
            # pair-space products
            for q in range(p):
                gpair[q] = g_cur[pa[q], pb[q]]
            pfb = cbase + 12 * k2
            for qa in range(p):
                for qb in range(p):
                    o = qa * p + qb
                    ggv = gpair[qa] * gpair[qb]
                    payload[pfb + o] = ggv
                    payload[pfb + p2 + o] = ggv * ggv
                    a_, b_ = pa[qa], pb[qa]
                    c_, d_ = pa[qb], pb[qb]
                    smv = (
                        g_cur[a_, c_] * q_hat[b_, d_]
                        + g_cur[a_, d_] * q_hat[b_, c_]
                        + g_cur[b_, c_] * q_hat[a_, d_]
                        + g_cur[b_, d_] * q_hat[a_, c_]
                    )
                    payload[pfb + 2 * p2 + o] = smv
                    payload[pfb + 3 * p2 + o] = smv * smv
            if heavy:
                for q in range(p):
                    for i in range(n):
                        pv[i, q] = phi[i, pa[q]] * phi[i, pb[q]]
                for qa in range(p):
                    for qb in range(qa, p):
                        acc = 0.0
                        for i in range(n):
                            acc += pv[i, qa] * pv[i, qb]
                        p4[qa, qb] = acc
                        p4[qb, qa] = acc
                for qa in range(p):
                    for qb in range(p):
                        o = qa * p + qb
                        a4v = (nf * nf * gpair[qa] * gpair[qb] - p4[qa, qb]) / (nf * (nf - 1.0))
                        payload[pfb + 4 * p2 + o] = a4v
                        payload[pfb + 5 * p2 + o] = a4v * a4v

        if ell == depth:
            break

        ps = pair_slot[ell]
        if ps >= 0:
            for q in range(p):
                gpair_prev[q] = g_cur[pa[q], pb[q]]
            if heavy:
                for a in range(npts):
                    for b in range(npts):
                        qh_stash[a, b] = q_hat[a, b]

        if _chol_psd(q_hat, low, 1e-10) != 0:
            return ell + 1
        _fill_normals(zbuf, n * npts, key0, key1, member, (ell << 3) | 1)
        for i in range(n):
            for a in range(npts):
                acc = 0.0
                for c in range(a + 1):
                    acc += zbuf[i * npts + c] * low[a, c]
                phi[i, a] = alpha * phi[i, a] + eps * acc
        for a in range(npts):
            for b in range(a, npts):
                acc = 0.0
                for i in range(n):
                    acc += phi[i, a] * phi[i, b]
                g_new[a, b] = acc / nf
                g_new[b, a] = g_new[a, b]
        for a in range(npts):
            for b in range(npts):
                e1[a, b] = a2 * e1[a, b] + (g_new[a, b] - a2 * g_cur[a, b] - eps2 * q_hat[a, b])
        for a in range(npts):
            for b in range(npts):
                g_cur[a, b] = g_new[a, b]

        if ps >= 0:
            for q in range(p):
                gpair[q] = g_cur[pa[q], pb[q]]
            for qa in range(p):
                for qb in range(p):
                    gg_old[qa, qb] = gpair_prev[qa] * gpair_prev[qb]
            for qa in range(p):
                for qb in range(p):
                    acc = 0.0
                    for qc in range(p):
                        acc += chi_pairs[ps, qa, qc] * gg_old[qc, qb]
                    xc[qa, qb] = acc
            tbase = pair_base + ps * pair_block
            for qa in range(p):
                for qb in range(p):
                    o = qa * p + qb
                    yv = nf * (
                        gpair[qa] * gpair[qb]
                        - gg_old[qa, qb]
                        - eps2 * (xc[qa, qb] + xc[qb, qa])
                    )
                    psiv = nf * (
                        gpair[qa] * k0p_hi[ps, qb] + k0p_hi[ps, qa] * gpair[qb]
                        - gpair_prev[qa] * k0p_lo[ps, qb] - k0p_lo[ps, qa] * gpair_prev[qb]
                    )
                    rvv = yv - psiv
                    payload[tbase + o] = rvv
                    payload[tbase + p2 + o] = rvv * rvv
            if heavy:
                for q in range(p):
                    for i in range(n):
                        pv[i, q] = phi[i, pa[q]] * phi[i, pb[q]]
                for qa in range(p):
                    for qb in range(qa, p):
                        acc = 0.0
                        for i in range(n):
                            acc += pv[i, qa] * pv[i, qb]
                        p4[qa, qb] = acc
                        p4[qb, qa] = acc
                for qa in range(p):
                    for qb in range(p):
                        o = qa * p + qb
                        a_, b_ = pa[qa], pb[qa]
                        c_, d_ = pa[qb], pb[qb]
                        qqv = qh_stash[a_, c_] * qh_stash[b_, d_] + qh_stash[a_, d_] * qh_stash[b_, c_]
                        brv = (p4[qa, qb] - nf * gpair[qa] * gpair[qb]) / (nf - 1.0) - qqv
                        payload[tbase + 2 * p2 + o] = brv
                        payload[tbase + 3 * p2 + o] = brv * brv
                        payload[tbase + 4 * p2 + o] = qqv
                        payload[tbase + 5 * p2 + o] = qqv * qqv
    return 0


@njit(cache=True)
def _simulate_span(
    start, end,
    n, npts, depth, eps, alpha, cw, cb, act_code, key0, key1,
    chol0, k00, cp_slot, pair_slot, pa, pb, chi_pairs, k0p_lo, k0p_hi,
    heavy, cp_block, pair_block, pair_base, s_all_offset, total,
    stack, stack_lv, stack_ix,
):
    """Simulate members [start, end), reducing into the aligned dyadic stack.

    Returns (n_nodes, error_member_plus_1); on error the stack is invalid.
    """
    p = pa.shape[0]
    phi = np.empty((n, npts))
    sphi = np.empty((n, npts))
    d1 = np.empty((n, npts))
    d2 = np.empty((n, npts))
    zbuf = np.empty(n * npts)
    s_mat = np.empty((npts, npts))
    q_hat = np.empty((npts, npts))
    low = np.empty((npts, npts))
    g_cur = np.empty((npts, npts))
    g_new = np.empty((npts, npts))
    e1 = np.empty((npts, npts))
    gpair = np.empty(p)
    gpair_prev = np.empty(p)
    qh_stash = np.empty((npts, npts))
    gg_old = np.empty((p, p))
    xc = np.empty((p, p))
    pv = np.empty((n, p))
    p4 = np.empty((p, p))
    leaf = np.zeros(total)

    top = 0
    for m in range(start, end):
        status = _member_into(
            leaf, m,
            n, npts, depth, eps, alpha, cw, cb, act_code, key0, key1,
            chol0, k00, cp_slot, pair_slot, pa, pb, chi_pairs, k0p_lo, k0p_hi,
            heavy, cp_block, pair_block, pair_base, s_all_offset,
            phi, sphi, d1, d2, zbuf, s_mat, q_hat, low, g_cur, g_new, e1,
            gpair, gpair_prev, qh_stash, gg_old, xc, pv, p4,
        )
        if status != 0:
            return 0, m + 1
        stack[top, :] = leaf
        stack_lv[top] = 0
        stack_ix[top] = m
        top += 1
        while (
            top >= 2
            and stack_lv[top - 1] == stack_lv[top - 2]
            and stack_ix[top - 1] & 1 == 1
            and stack_ix[top - 2] == stack_ix[top - 1] - 1
        ):
            for j in range(total):
                stack[top - 2, j] += stack[top - 1, j]
            stack_ix[top - 2] >>= 1
            stack_lv[top - 2] += 1
            top -= 1
    return top, 0


@njit(cache=True, parallel=True)
def _run_aligned_blocks(
    block0, n_blocks, block_log2,
    n, npts, depth, eps, alpha, cw, cb, act_code, key0, key1,
    chol0, k00, cp_slot, pair_slot, pa, pb, chi_pairs, k0p_lo, k0p_hi,
    heavy, cp_block, pair_block, pair_base, s_all_offset, total,
    out, err,
):
    """Each aligned 2^k block reduces to exactly one dyadic node."""
    for ib in prange(n_blocks):
        stack = np.empty((block_log2 + 2, total))
        stack_lv = np.empty(block_log2 + 2, dtype=np.int64)
        stack_ix = np.empty(block_log2 + 2, dtype=np.int64)
        start = (block0 + ib) << block_log2
        end = start + (1 << block_log2)
        n_nodes, bad = _simulate_span(
            start, end,
            n, npts, depth, eps, alpha, cw, cb, act_code, key0, key1,
            chol0, k00, cp_slot, pair_slot, pa, pb, chi_pairs, k0p_lo, k0p_hi,
            heavy, cp_block, pair_block, pair_base, s_all_offset, total,
            stack, stack_lv, stack_ix,
        )
        if bad != 0:
            err[ib] = bad
        else:
            out[ib, :] = stack[0]
