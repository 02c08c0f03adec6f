"""Independent reference implementations used by the tests.

Nothing here calls the code under test except through its public forward
pass and loss values.
"""
import itertools
import math

import numpy as np


def central_difference(f, x, coords, step=1e-4):
    """Central finite differences of scalar ``f`` at flat indices ``coords`` of ``x``."""
    out = []
    for i in coords:
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += step
        xm.flat[i] -= step
        out.append((f(xp) - f(xm)) / (2 * step))
    return np.array(out)


def max_relative_error(analytic, numeric):
    """Largest entrywise gap, relative to the largest entry magnitude."""
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def l1_projection_bisection(v, eps, iters=200):
    """Euclidean projection onto the l1 ball by bisection on the soft threshold."""
    v = np.asarray(v, dtype=np.float64)
    if np.abs(v).sum() <= eps:
        return v.copy()
    lo, hi = 0.0, float(np.abs(v).max())
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(np.abs(v) - mid, 0).sum() > eps:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0)


def best_k_subset(v, k):
    """Exhaustive search for the k-subset that retains the most l2 mass."""
    v = np.asarray(v, dtype=np.float64)
    best, best_mass = None, -1.0
    for subset in itertools.combinations(range(v.size), min(k, v.size)):
        mass = float(np.sum(v[list(subset)] ** 2))
        if mass > best_mass:
            best, best_mass = subset, mass
    return best_mass


def ssim_brute(a, b, win=8, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM over all win x win windows, looping window by window."""
    h, w = a.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            pa = a[i:i + win, j:j + win].ravel()
            pb = b[i:i + win, j:j + win].ravel()
            ma, mb = pa.mean(), pb.mean()
            va, vb = ((pa - ma) ** 2).mean(), ((pb - mb) ** 2).mean()
            cov = ((pa - ma) * (pb - mb)).mean()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def ce_reference(z0, z1, label):
    """Cross-entropy evaluated with mpmath at 50 digits."""
    import mpmath
    mpmath.mp.dps = 50
    zs = [mpmath.mpf(z0), mpmath.mpf(z1)]
    return float(mpmath.log(mpmath.exp(zs[0]) + mpmath.exp(zs[1])) - zs[label])


def linear_linf_optimum(w, b, x, label, eps):
    """Max DLR loss of a symmetric two-logit linear model over the l-inf ball and [0,1] box.

    DLR for label y is ``-(z_y - z_other) = 2 s`` for y = 0 and ``-2 s`` for
    y = 1, with ``s = w.x + b``; the problem separates per coordinate.
    """
    sign = 1.0 if label == 0 else -1.0
    c = sign * w
    lo = np.maximum(-eps, -x)
    hi = np.minimum(eps, 1 - x)
    delta = np.where(c > 0, hi, lo)
    delta = np.where(c == 0, 0.0, delta)
    s = float(w @ (x + delta) + b)
    return 2.0 * sign * s, x + delta


def sigma_map_reference(img):
    """Per-pixel min of horizontal and vertical 3-neighbourhood standard deviations."""
    h, w = img.shape
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            horiz = img[i, max(j - 1, 0):min(j + 2, w)]
            vert = img[max(i - 1, 0):min(i + 2, h), j]
            out[i, j] = min(np.std(horiz), np.std(vert))
    return out


def two_bin_kl(p_dark, q_dark, eps=1e-9):
    """KL between two-bin histograms after adding eps to each normalized bin."""
    p = np.array([p_dark, 1 - p_dark]) + eps
    q = np.array([q_dark, 1 - q_dark]) + eps
    p, q = p / p.sum(), q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def ssim_constant(a, b, c1=0.01 ** 2):
    """SSIM of two constant patches: only the luminance term survives."""
    return (2 * a * b + c1) / (a * a + b * b + c1)


def isclose(a, b, tol):
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


def moments_by_enumeration(p_b, delta, p_c):
    """Mean and variance of one counted vote by listing every (ballot, compromised) outcome.

    Vote values: -1 for A, +1 for B, 0 for blank or discarded.  A compromised
    ballot gets an extra A mark, so a blank becomes A, A stays A and B turns
    into a discarded overvote.
    """
    p_a = p_b - delta
    p_0 = 1 - p_a - p_b
    outcomes = []
    for value, p in ((-1, p_a), (1, p_b), (0, p_0)):
        outcomes.append(((1 - p_c) * p, value))
        outcomes.append((p_c * p, 0 if value == 1 else -1))
    mean = sum(p * w for p, w in outcomes)
    return mean, sum(p * (w - mean) ** 2 for p, w in outcomes)
