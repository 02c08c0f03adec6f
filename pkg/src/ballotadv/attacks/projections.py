"""Projections onto the perturbation sets used by the attacks.

Every function accepts a single vector ``(d,)`` or a batch ``(n, d)`` and
works row by row.  Budgets may be scalars or per-row arrays.
"""
from __future__ import annotations

import numpy as np

from ..data import HEIGHT, WIDTH


def _rows(delta):
    d = np.asarray(delta, dtype=np.float64)
    return (d[None, :], True) if d.ndim == 1 else (d, False)


def _out(x, single):
    return x[0] if single else x


def _col(v, n):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,))[:, None]


def project_linf(delta, epsilon):
    """Clamp each component to ``[-epsilon, epsilon]``."""
    d, single = _rows(delta)
    e = _col(epsilon, len(d))
    return _out(np.minimum(np.maximum(d, -e), e), single)


def project_l2(delta, epsilon):
    """Radial rescaling onto the l2 ball."""
    d, single = _rows(delta)
    e = _col(epsilon, len(d))
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    factor = np.where(norm > e, e / np.where(norm > 0, norm, 1.0), 1.0)
    return _out(d * factor, single)


def project_l1(delta, epsilon):
    """Euclidean projection onto the l1 ball by sorting and soft-thresholding.

    With ``u`` the magnitudes sorted in decreasing order and ``c`` their
    running sums, the threshold is ``(c_r - eps) / r`` for the largest ``r``
    with ``u_r > (c_r - eps) / r``.
    """
    d, single = _rows(delta)
    n, dim = d.shape
    e = _col(epsilon, n)[:, 0]
    a = np.abs(d)
    outside = a.sum(axis=1) > e
    out = d.copy()
    if outside.any():
        ao, eo = a[outside], e[outside]
        u = -np.sort(-ao, axis=1)
        cs = np.cumsum(u, axis=1)
        r = np.arange(1, dim + 1)
        cond = u * r > cs - eo[:, None]
        rho = dim - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = (cs[np.arange(len(u)), rho] - eo) / (rho + 1)
        out[outside] = np.sign(d[outside]) * np.maximum(ao - theta[:, None], 0.0)
    return _out(out, single)


def topk_mask(delta, k):
    """Boolean mask of the ``k`` largest magnitudes per row; ties go to the lowest index."""
    d, single = _rows(delta)
    n, dim = d.shape
    kk = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,))
    a = np.abs(d)
    if np.all(kk >= dim):
        return _out(np.ones_like(a, dtype=bool), single)
    kc = np.clip(kk, 1, dim)
    if np.all(kc == kc[0]):
        thr = -np.partition(-a, kc[0] - 1, axis=1)[:, kc[0] - 1]
    else:
        thr = -np.sort(-a, axis=1)[np.arange(n), kc - 1]
    above = a > thr[:, None]
    # Fill the remaining slots with the earliest entries equal to the threshold.
    need = kc - above.sum(axis=1)
    tied = a == thr[:, None]
    mask = above | (tied & (np.cumsum(tied, axis=1) <= need[:, None]))
    mask &= (kk >= 1)[:, None]
    return _out(mask, single)


def project_l0_topk(delta, k):
    """Keep the ``k`` largest-magnitude components and zero the rest."""
    d, single = _rows(delta)
    return _out(np.where(topk_mask(d, k), d, 0.0), single)


def project_l0_linf(delta, k, epsilon):
    """Clamp to ``[-epsilon, epsilon]`` first, then keep the top ``k``."""
    return project_l0_topk(project_linf(delta, epsilon), k)


def sigma_map(image):
    """Per-pixel local deviation bound.

    ``sigma_ij`` is the smaller of the population standard deviations of the
    horizontal and vertical three-pixel neighbourhoods through ``(i, j)``;
    border pixels use the two-pixel one-sided neighbourhood.  Deviations are
    taken relative to the centre pixel, so constant neighbourhoods give 0
    exactly.  Accepts ``(40, 50)``, ``(2000,)`` or ``(n, 2000)``.
    """
    x = np.asarray(image, dtype=np.float64)
    shape = x.shape
    imgs = x.reshape(-1, HEIGHT, WIDTH)

    def directional(a, axis):
        diff_prev = np.zeros_like(a)
        diff_next = np.zeros_like(a)
        count = np.ones_like(a)
        sl = [slice(None)] * 3
        lo, hi = list(sl), list(sl)
        lo[axis], hi[axis] = slice(1, None), slice(None, -1)
        lo, hi = tuple(lo), tuple(hi)
        diff_prev[lo] = a[hi] - a[lo]
        diff_next[hi] = a[lo] - a[hi]
        count[lo] += 1
        count[hi] += 1
        s1 = diff_prev + diff_next
        s2 = diff_prev ** 2 + diff_next ** 2
        var = s2 / count - (s1 / count) ** 2
        return np.sqrt(np.maximum(var, 0.0))

    return np.minimum(directional(imgs, 2), directional(imgs, 1)).reshape(shape)


def project_l0_sigma(delta, image, k, kappa, sigma=None):
    """Clamp each component to ``kappa * sigma_ij`` of ``image``, then keep the top ``k``."""
    d, single = _rows(delta)
    sig = sigma_map(image) if sigma is None else np.asarray(sigma, dtype=np.float64)
    bound = _col(kappa, len(d)) * np.reshape(sig, (-1, d.shape[1]))
    return _out(project_l0_topk(np.minimum(np.maximum(d, -bound), bound), k), single)


def project_box(delta, x):
    """Clip ``delta`` so that ``x + delta`` stays in ``[0, 1]``."""
    return np.minimum(np.maximum(delta, -x), 1.0 - x)
