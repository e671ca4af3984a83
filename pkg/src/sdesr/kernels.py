"""Hot inner loops, each with a numba kernel and a numpy fallback.

The public functions dispatch on :data:`sdesr._accel.USE_NUMBA`. Both paths
are kept importable (``*_numba`` / ``*_numpy``) so tests and the benchmark can
compare them directly.
"""

import numpy as np

from sdesr._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# 3x3 convolution lowering (NHWC). Column layout is (dy, dx, channel).


def im2col3x3_numpy(xp):
    """Unfold a padded ``(B, H+2, W+2, C)`` batch into ``(B, H, W, 9*C)``."""
    b, hp, wp, c = xp.shape
    h, w = hp - 2, wp - 2
    cols = np.empty((b, h, w, 9 * c), dtype=xp.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[..., k * c:(k + 1) * c] = xp[:, dy:dy + h, dx:dx + w, :]
            k += 1
    return cols


def col2im3x3_numpy(dcols):
    """Adjoint of :func:`im2col3x3_numpy`; returns the padded gradient."""
    b, h, w, c9 = dcols.shape
    c = c9 // 9
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., k * c:(k + 1) * c]
            k += 1
    return dxp


@njit
def im2col3x3_numba(xp):
    b, hp, wp, c = xp.shape
    h, w = hp - 2, wp - 2
    cols = np.empty((b, h, w, 9 * c), dtype=xp.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                k = 0
                for dy in range(3):
                    for dx in range(3):
                        for ch in range(c):
                            cols[n, i, j, k + ch] = xp[n, i + dy, j + dx, ch]
                        k += c
    return cols


@njit
def col2im3x3_numba(dcols):
    b, h, w, c9 = dcols.shape
    c = c9 // 9
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    for n in range(b):
        for i in range(h):
            for j in range(w):
                k = 0
                for dy in range(3):
                    for dx in range(3):
                        for ch in range(c):
                            dxp[n, i + dy, j + dx, ch] += dcols[n, i, j, k + ch]
                        k += c
    return dxp


# ---------------------------------------------------------------------------
# Separable "valid" filtering of a 2-D array (SSIM windows).


def filter2d_valid_numpy(img, k):
    kn = k.shape[0]
    h, w = img.shape
    tmp = np.zeros((h - kn + 1, w), dtype=np.float64)
    for a in range(kn):
        tmp += k[a] * img[a:a + h - kn + 1, :]
    out = np.zeros((h - kn + 1, w - kn + 1), dtype=np.float64)
    for a in range(kn):
        out += k[a] * tmp[:, a:a + w - kn + 1]
    return out


@njit
def filter2d_valid_numba(img, k):
    kn = k.shape[0]
    h, w = img.shape
    ho, wo = h - kn + 1, w - kn + 1
    tmp = np.zeros((ho, w))
    for i in range(ho):
        for a in range(kn):
            ka = k[a]
            for j in range(w):
                tmp[i, j] += ka * img[i + a, j]
    out = np.zeros((ho, wo))
    for i in range(ho):
        for j in range(wo):
            s = 0.0
            for a in range(kn):
                s += k[a] * tmp[i, j + a]
            out[i, j] = s
    return out


# ---------------------------------------------------------------------------
# 5-point Laplacian on the interior of a 2-D array.


def laplacian_numpy(img):
    return (img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:]
            - 4.0 * img[1:-1, 1:-1])


@njit
def laplacian_numba(img):
    h, w = img.shape
    out = np.empty((h - 2, w - 2))
    for i in range(1, h - 1):
        for j in range(1, w - 1):
            out[i - 1, j - 1] = (img[i - 1, j] + img[i + 1, j] + img[i, j - 1]
                                 + img[i, j + 1] - 4.0 * img[i, j])
    return out


# ---------------------------------------------------------------------------
# Euler-Maruyama for scalar affine SDEs dx = a(t) x dt + g(t) dw.


def affine_em_numpy(x0, a, g, dt, z, save_at):
    """Integrate all paths; ``z`` holds one standard normal row per step.

    ``save_at`` is a sorted array of step counts at which to snapshot the
    state (0 means the initial state).
    """
    x = np.array(x0, dtype=np.float64, copy=True)
    out = np.empty((save_at.shape[0], x.shape[0]))
    sq = np.sqrt(dt)
    s = 0
    while s < save_at.shape[0] and save_at[s] == 0:
        out[s] = x
        s += 1
    for k in range(a.shape[0]):
        x = x + a[k] * x * dt + g[k] * sq * z[k]
        while s < save_at.shape[0] and save_at[s] == k + 1:
            out[s] = x
            s += 1
    return out


@njit
def affine_em_numba(x0, a, g, dt, z, save_at):
    x = x0.astype(np.float64).copy()
    p = x.shape[0]
    out = np.empty((save_at.shape[0], p))
    sq = np.sqrt(dt)
    s = 0
    while s < save_at.shape[0] and save_at[s] == 0:
        out[s] = x
        s += 1
    for k in range(a.shape[0]):
        ak = a[k] * dt
        gk = g[k] * sq
        for i in range(p):
            x[i] = x[i] + ak * x[i] + gk * z[k, i]
        while s < save_at.shape[0] and save_at[s] == k + 1:
            out[s] = x
            s += 1
    return out


if USE_NUMBA:
    im2col3x3 = im2col3x3_numba
    col2im3x3 = col2im3x3_numba
    filter2d_valid = filter2d_valid_numba
    laplacian = laplacian_numba
    affine_em = affine_em_numba
else:
    im2col3x3 = im2col3x3_numpy
    col2im3x3 = col2im3x3_numpy
    filter2d_valid = filter2d_valid_numpy
    laplacian = laplacian_numpy
    affine_em = affine_em_numpy
