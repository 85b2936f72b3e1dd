"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``sq_dists``, ``mmd2_grad``, ``rotate_images``,
``patch_mask``) dispatch to whichever version is faster when numba is
available and enabled (see the note at the bottom), otherwise to numpy. Both
versions are importable directly for benchmarking and cross-checking.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

# ---------------------------------------------------------------------------
# pairwise squared distances


def sq_dists_np(A, B):
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    D = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(D, 0.0, out=D)
    return D


@njit(cache=True)
def sq_dists_nb(A, B):
    n, d = A.shape
    m = B.shape[0]
    D = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            D[i, j] = s
    return D


# ---------------------------------------------------------------------------
# biased MMD^2 with RBF kernel exp(-|a-b|^2 / (2 sigma)), plus gradients


def mmd2_grad_np(A, B, sigma):
    n = A.shape[0]
    m = B.shape[0]
    Kaa = np.exp(-sq_dists_np(A, A) / (2.0 * sigma))
    Kbb = np.exp(-sq_dists_np(B, B) / (2.0 * sigma))
    Kab = np.exp(-sq_dists_np(A, B) / (2.0 * sigma))
    val = Kaa.sum() / (n * n) + Kbb.sum() / (m * m) - 2.0 * Kab.sum() / (n * m)
    dA = -(2.0 / (n * n * sigma)) * (A * Kaa.sum(1)[:, None] - Kaa @ A)
    dA += (2.0 / (n * m * sigma)) * (A * Kab.sum(1)[:, None] - Kab @ B)
    dB = -(2.0 / (m * m * sigma)) * (B * Kbb.sum(1)[:, None] - Kbb @ B)
    dB += (2.0 / (n * m * sigma)) * (B * Kab.sum(0)[:, None] - Kab.T @ A)
    return val, dA, dB


@njit(cache=True)
def _pair_term_nb(A, B, sigma, GA, GB, scale):
    # sum_ij k(a_i, b_j); accumulates scale * d/dA into GA and scale * d/dB into GB.
    # Self and cross terms share this loop so identical inputs cancel exactly.
    n, d = A.shape
    m = B.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            kv = np.exp(-s / (2.0 * sigma))
            total += kv
            c = scale * kv / sigma
            for k in range(d):
                t = c * (A[i, k] - B[j, k])
                GA[i, k] -= t
                GB[j, k] += t
    return total


@njit(cache=True)
def mmd2_grad_nb(A, B, sigma):
    n, d = A.shape
    m = B.shape[0]
    dA = np.zeros((n, d))
    dB = np.zeros((m, d))
    saa = _pair_term_nb(A, A, sigma, dA, dA, 1.0 / (n * n))
    sbb = _pair_term_nb(B, B, sigma, dB, dB, 1.0 / (m * m))
    sab = _pair_term_nb(A, B, sigma, dA, dB, -2.0 / (n * m))
    val = saa / (n * n) + sbb / (m * m) - 2.0 * sab / (n * m)
    return val, dA, dB


# ---------------------------------------------------------------------------
# bilinear rotation of flattened square images about their centre


def _rotation_sources(side, angle_deg):
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    ctr = (side - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float), indexing="ij")
    x = cc - ctr
    y = ctr - rr
    # inverse map: rotate output coordinates clockwise to find the source
    xs = c * x + s * y
    ys = -s * x + c * y
    src_c = xs + ctr
    src_r = ctr - ys
    # snap float noise so that 90-degree multiples are exact permutations
    src_c = np.where(np.abs(src_c - np.round(src_c)) < 1e-9, np.round(src_c), src_c)
    src_r = np.where(np.abs(src_r - np.round(src_r)) < 1e-9, np.round(src_r), src_r)
    return src_r.ravel(), src_c.ravel()


def rotate_images_np(images, side, angle_deg):
    sr, sc = _rotation_sources(side, angle_deg)
    r0 = np.floor(sr).astype(np.int64)
    c0 = np.floor(sc).astype(np.int64)
    fr = sr - r0
    fc = sc - c0
    imgs = images.reshape(images.shape[0], side, side)
    out = np.zeros((images.shape[0], side * side))
    for dr, dc, w in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                      (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
        r = r0 + dr
        c = c0 + dc
        ok = (r >= 0) & (r < side) & (c >= 0) & (c < side) & (w != 0.0)
        out[:, ok] += w[ok] * imgs[:, r[ok], c[ok]]
    return out


@njit(cache=True)
def _rotate_nb(images, side, sr, sc):
    n = images.shape[0]
    out = np.zeros((n, side * side))
    for p in range(side * side):
        r0 = int(np.floor(sr[p]))
        c0 = int(np.floor(sc[p]))
        fr = sr[p] - r0
        fc = sc[p] - c0
        for q in range(4):
            dr = q // 2
            dc = q % 2
            w = (fr if dr else 1.0 - fr) * (fc if dc else 1.0 - fc)
            r = r0 + dr
            c = c0 + dc
            if w == 0.0 or r < 0 or r >= side or c < 0 or c >= side:
                continue
            src = r * side + c
            for i in range(n):
                out[i, p] += w * images[i, src]
    return out


def rotate_images_nb(images, side, angle_deg):
    sr, sc = _rotation_sources(side, angle_deg)
    return _rotate_nb(np.ascontiguousarray(images, dtype=np.float64), side, sr, sc)


# ---------------------------------------------------------------------------
# square-patch masks


def patch_mask_np(n, side, patch, tops, lefts):
    M = np.ones((n, side, side))
    r = np.arange(side)
    rows = (r[None, :] >= tops[:, None]) & (r[None, :] < tops[:, None] + patch)
    cols = (r[None, :] >= lefts[:, None]) & (r[None, :] < lefts[:, None] + patch)
    M[rows[:, :, None] & cols[:, None, :]] = 0.0
    return M.reshape(n, side * side)


@njit(cache=True)
def patch_mask_nb(n, side, patch, tops, lefts):
    M = np.ones((n, side * side))
    for i in range(n):
        for r in range(tops[i], tops[i] + patch):
            for c in range(lefts[i], lefts[i] + patch):
                M[i, r * side + c] = 0.0
    return M


# The distance-based kernels stay on numpy either way: their inner products
# go through BLAS, which beats the compiled loops at every size measured by
# benchmarks/bench_kernels.py. The image kernels gain 5-9x from numba.
sq_dists = sq_dists_np
mmd2_grad = mmd2_grad_np
if HAVE_NUMBA:
    rotate_images = rotate_images_nb
    patch_mask = patch_mask_nb
else:
    rotate_images = rotate_images_np
    patch_mask = patch_mask_np
