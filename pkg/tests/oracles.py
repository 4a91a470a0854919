"""Independent finite-difference oracles for the derivative operators.

These differentiate the production expectation map numerically and never
touch the integration-by-parts assembly they are checking.
"""

import numpy as np

from kernelflow.gaussian_ops import q_map
from kernelflow.pairspace import pair_count, pair_list, to_pairvec


def chi_fd(k, cw, act, quad, rel_step=1e-4):
    """Central finite differences of q_map along symmetrized pair bumps."""
    p = pair_count(k.shape[0])
    pl = pair_list(k.shape[0])
    out = np.zeros((p, p))
    for j, (c, d) in enumerate(pl):
        h = rel_step * max(abs(k[c, d]), 1.0)
        kp = k.copy()
        km = k.copy()
        kp[c, d] += h
        kp[d, c] = kp[c, d]
        km[c, d] -= h
        km[d, c] = km[c, d]
        qp = q_map(kp, cw, 0.0, act, quad)
        qm = q_map(km, cw, 0.0, act, quad)
        out[:, j] = to_pairvec((qp - qm) / (2 * h))
    return out


def d2q_fd(k, v, cw, act, quad, rel_step=1e-3, richardson=True):
    """Second-difference Hessian of q_map contracted with v.

    Richardson extrapolation removes the leading O(h^2) truncation term.
    """

    def second_diff(h_scale):
        p = pair_count(k.shape[0])
        pl = pair_list(k.shape[0])
        out = np.zeros_like(k)

        def bump(mat, a, b, h):
            nxt = mat.copy()
            nxt[a, b] += h
            nxt[b, a] = nxt[a, b]
            return nxt

        for i, (a, b) in enumerate(pl):
            hi = h_scale * max(abs(k[a, b]), 1.0)
            for j, (c, d) in enumerate(pl):
                if v[i, j] == 0.0:
                    continue
                hj = h_scale * max(abs(k[c, d]), 1.0)
                qpp = q_map(bump(bump(k, a, b, hi), c, d, hj), cw, 0.0, act, quad)
                qpm = q_map(bump(bump(k, a, b, hi), c, d, -hj), cw, 0.0, act, quad)
                qmp = q_map(bump(bump(k, a, b, -hi), c, d, hj), cw, 0.0, act, quad)
                qmm = q_map(bump(bump(k, a, b, -hi), c, d, -hj), cw, 0.0, act, quad)
                out = out + v[i, j] * (qpp - qpm - qmp + qmm) / (4 * hi * hj)
        return out

    coarse = second_diff(rel_step)
    if not richardson:
        return coarse
    fine = second_diff(rel_step / 2)
    return (4.0 * fine - coarse) / 3.0


def random_psd_kernels(count, n_points, seed):
    """Random PSD kernels from the interior of the cone.

    Correlations are damped towards the identity so the finite-difference
    bumps never approach the PSD boundary, where the expectation map loses
    smoothness and no FD oracle is meaningful.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = rng.normal(size=(n_points, n_points + 3))
        c = a @ a.T
        d = np.sqrt(np.diag(c))
        corr = 0.7 * (c / np.outer(d, d)) + 0.3 * np.eye(n_points)
        var = rng.uniform(0.5, 3.5, size=n_points)
        out.append(corr * np.outer(np.sqrt(var), np.sqrt(var)))
    return out
