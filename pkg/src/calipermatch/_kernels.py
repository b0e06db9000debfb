"""Compiled inner loops for Gaussian kernel sums.

Every estimator in the variance module reduces to sums of the form
sum_j w_j K((z_j - p)/gamma) or the same with K' = -u K(u), evaluated at many
points p. The loops below take pre-sorted sources plus per-point index
windows (sources outside |u| > cutoff contribute below 1e-17 each and are
skipped), accumulate in fixed j-order, and write one value per point, so
results are bit-reproducible regardless of how callers schedule work.
"""

import math

import numpy as np
from numba import njit

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@njit(cache=True)
def score_space_sums(z, y, pts, jlo, jhi, gamma):
    """Raw kernel sums over sources z (sorted) with outcomes y.

    For each point p: s0 = sum K(u), s1 = sum y K(u), s2 = sum y^2 K(u),
    t0 = sum K'(u), t1 = sum y K'(u), with u = (z_j - p)/gamma.
    Normalisation (1/(N gamma) etc.) is applied by the caller.
    """
    npts = pts.shape[0]
    s0 = np.zeros(npts)
    s1 = np.zeros(npts)
    s2 = np.zeros(npts)
    t0 = np.zeros(npts)
    t1 = np.zeros(npts)
    inv_g = 1.0 / gamma
    for i in range(npts):
        p = pts[i]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        b0 = 0.0
        b1 = 0.0
        for j in range(jlo[i], jhi[i]):
            u = (z[j] - p) * inv_g
            k = INV_SQRT_2PI * math.exp(-0.5 * u * u)
            kp = -u * k
            yj = y[j]
            a0 += k
            a1 += yj * k
            a2 += yj * yj * k
            b0 += kp
            b1 += yj * kp
        s0[i] = a0
        s1[i] = a1
        s2[i] = a2
        t0[i] = b0
        t1[i] = b1
    return s0, s1, s2, t0, t1


@njit(cache=True)
def weighted_prime_sums(z, weights, pts, jlo, jhi, gamma):
    """Raw K'-sums for a stack of weight columns.

    weights has shape (n_sources, n_cols); output (n_points, n_cols) holds
    sum_j weights[j, c] * K'((z_j - p_i)/gamma).
    """
    npts = pts.shape[0]
    ncols = weights.shape[1]
    out = np.zeros((npts, ncols))
    inv_g = 1.0 / gamma
    for i in range(npts):
        p = pts[i]
        for j in range(jlo[i], jhi[i]):
            u = (z[j] - p) * inv_g
            kp = -u * INV_SQRT_2PI * math.exp(-0.5 * u * u)
            for c in range(ncols):
                out[i, c] += weights[j, c] * kp
    return out


@njit(cache=True)
def cheb_eval_matrix(node_x, node_vals, lo, width, pts):
    """Barycentric evaluation of piecewise-Chebyshev interpolants.

    node_x has shape (n_intervals, q+1) holding Chebyshev points of the
    second kind per interval; node_vals holds the function values with one
    column per interpolated function. Points are assigned to intervals by
    position, so evaluation is O(q) per point.
    """
    n_int = node_x.shape[0]
    q1 = node_x.shape[1]
    ncols = node_vals.shape[2]
    out = np.empty((pts.shape[0], ncols))
    for i in range(pts.shape[0]):
        x = pts[i]
        k = int((x - lo) / width)
        if k < 0:
            k = 0
        if k >= n_int:
            k = n_int - 1
        den = 0.0
        hit = -1
        sign = 1.0
        num = np.zeros(ncols)
        for j in range(q1):
            dx = x - node_x[k, j]
            if dx == 0.0:
                hit = j
                break
            w = sign
            if j == 0 or j == q1 - 1:
                w *= 0.5
            r = w / dx
            den += r
            for c in range(ncols):
                num[c] += r * node_vals[k, j, c]
            sign = -sign
        if hit >= 0:
            for c in range(ncols):
                out[i, c] = node_vals[k, hit, c]
        else:
            for c in range(ncols):
                out[i, c] = num[c] / den
    return out


CHEB_DEGREE = 20
CHEB_INTERVAL_BANDWIDTHS = 0.75  # interval width as a multiple of gamma


def chebyshev_grid(lo, hi, gamma, degree=CHEB_DEGREE,
                   interval_scale=CHEB_INTERVAL_BANDWIDTHS):
    """Per-interval Chebyshev nodes covering [lo, hi] at resolution ~gamma."""
    span = hi - lo
    n_int = max(1, int(np.ceil(span / (interval_scale * gamma))))
    width = span / n_int
    j = np.arange(degree + 1)
    tau = np.cos(np.pi * j / degree)
    mids = lo + (np.arange(n_int) + 0.5) * width
    node_x = mids[:, None] + 0.5 * width * tau[None, :]
    return node_x, lo, width


def interp_worthwhile(npts, jlo, jhi, span, gamma,
                      degree=CHEB_DEGREE, interval_scale=CHEB_INTERVAL_BANDWIDTHS,
                      n_sources=0):
    """Cost model: use interpolation when direct summation is dearer than
    building node values plus barycentric evaluation."""
    if span <= 0 or gamma <= 0:
        return False
    direct = float(np.sum(jhi - jlo))
    n_nodes = (int(np.ceil(span / (interval_scale * gamma))) + 1) * (degree + 1)
    build = float(n_nodes) * max(1.0, float(n_sources))
    evaluate = float(npts) * (degree + 1)
    return direct > 4e6 and direct > 2.0 * (build + evaluate)


def source_windows(z_sorted, pts, gamma, cutoff):
    """Index window [jlo, jhi) of sources within cutoff*gamma of each point.

    cutoff=None disables truncation (every source enters every sum).
    """
    n = z_sorted.shape[0]
    if cutoff is None or not np.isfinite(cutoff):
        jlo = np.zeros(pts.shape[0], dtype=np.int64)
        jhi = np.full(pts.shape[0], n, dtype=np.int64)
        return jlo, jhi
    radius = cutoff * gamma
    jlo = np.searchsorted(z_sorted, pts - radius, side="left").astype(np.int64)
    jhi = np.searchsorted(z_sorted, pts + radius, side="right").astype(np.int64)
    return jlo, jhi


def score_space_sums_numpy(z, y, pts, gamma):
    """Reference implementation of score_space_sums over the full source set,
    blocked to bound memory. Used to validate the compiled path."""
    npts = pts.shape[0]
    out = [np.zeros(npts) for _ in range(5)]
    block = max(1, int(2e6 / max(1, z.shape[0])))
    for start in range(0, npts, block):
        p = pts[start:start + block]
        u = (z[None, :] - p[:, None]) / gamma
        k = INV_SQRT_2PI * np.exp(-0.5 * u * u)
        kp = -u * k
        out[0][start:start + block] = k.sum(axis=1)
        out[1][start:start + block] = k @ y
        out[2][start:start + block] = k @ (y * y)
        out[3][start:start + block] = kp.sum(axis=1)
        out[4][start:start + block] = kp @ y
    return tuple(out)


def weighted_prime_sums_numpy(z, weights, pts, gamma):
    """Reference implementation of weighted_prime_sums."""
    npts = pts.shape[0]
    out = np.zeros((npts, weights.shape[1]))
    block = max(1, int(2e6 / max(1, z.shape[0])))
    for start in range(0, npts, block):
        p = pts[start:start + block]
        u = (z[None, :] - p[:, None]) / gamma
        kp = -u * INV_SQRT_2PI * np.exp(-0.5 * u * u)
        out[start:start + block] = kp @ weights
    return out
