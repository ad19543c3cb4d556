"""Compiled inner loops; each mirrors a numpy reference in its calling module."""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def census_loss_grad(gray, ref_soft, offsets, weight, eps_c, eta):
    """Fused census loss and its gradient w.r.t. the warped gray image.

    ``ref_soft`` is ``(H, W, K)`` soft ternary signatures of the reference,
    ``offsets`` is ``(K, 2)`` integer ``(dy, dx)`` pairs; neighbours are
    clamped to the border.
    """
    h, w = gray.shape
    n_off = offsets.shape[0]
    grad = np.zeros((h, w))
    coef = np.empty(n_off)
    qy = np.empty(n_off, dtype=np.int64)
    qx = np.empty(n_off, dtype=np.int64)
    loss = 0.0
    for i in range(h):
        for j in range(w):
            wt = weight[i, j]
            if wt == 0.0:
                continue
            c = gray[i, j]
            dist = 0.0
            for k in range(n_off):
                y = min(max(i + offsets[k, 0], 0), h - 1)
                x = min(max(j + offsets[k, 1], 0), w - 1)
                qy[k] = y
                qx[k] = x
                d = gray[y, x] - c
                root = np.sqrt(d * d + eps_c * eps_c)
                s = d / root
                ds = eps_c * eps_c / (root * root * root)
                delta = s - ref_soft[i, j, k]
                r2 = np.sqrt(delta * delta + eta * eta)
                dist += r2 - eta
                coef[k] = delta / r2 * ds
            dist /= n_off
            pen = np.sqrt(dist * dist + eta * eta)
            loss += wt * pen
            scale = wt * dist / pen / n_off
            for k in range(n_off):
                g = scale * coef[k]
                grad[qy[k], qx[k]] += g
                grad[i, j] -= g
    return loss, grad
