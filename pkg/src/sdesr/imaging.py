"""Resampling helpers shared by degradation and metrics.

Images are ``(H, W)`` or ``(H, W, C)`` arrays, optionally with leading batch
axes; the spatial axes are always the two axes preceding the channel axis when
``channels_last`` is true (default for 3-D+ inputs is ``(..., H, W, C)``).
"""

from functools import lru_cache

import numpy as np


def _cubic(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


@lru_cache(maxsize=64)
def bicubic_matrix(n_in, n_out):
    """``(n_out, n_in)`` bicubic resampling matrix (Keys kernel, a = -0.5).

    Pixel centres are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the scale factor so the filter also anti-aliases.
    Border samples are clamped; rows sum to one so constants are preserved.
    """
    scale = n_in / n_out
    support = 2.0 * max(scale, 1.0)
    stretch = max(scale, 1.0)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) * scale - 0.5
        lo = int(np.floor(centre - support)) + 1
        hi = int(np.floor(centre + support))
        idx = np.arange(lo, hi + 1)
        w = _cubic((idx - centre) / stretch)
        np.add.at(mat[i], np.clip(idx, 0, n_in - 1), w)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def _spatial_axes(img):
    return (-3, -2) if img.ndim >= 3 else (-2, -1)


def resize_bicubic(img, out_hw):
    img = np.asarray(img)
    ay, ax = _spatial_axes(img)
    my = bicubic_matrix(img.shape[ay], out_hw[0]).astype(img.dtype, copy=False)
    mx = bicubic_matrix(img.shape[ax], out_hw[1]).astype(img.dtype, copy=False)
    out = np.moveaxis(np.tensordot(my, img, axes=([1], [img.ndim + ay])), 0, ay)
    out = np.moveaxis(np.tensordot(mx, out, axes=([1], [out.ndim + ax])), 0, ax)
    return out


def downsample_area(img, factor):
    """Block-mean downsampling by an integer factor."""
    img = np.asarray(img)
    ay, _ = _spatial_axes(img)
    h, w = img.shape[ay], img.shape[ay + 1]
    if h % factor or w % factor:
        raise ValueError(f"image {h}x{w} not divisible by factor {factor}")
    shape = img.shape[:img.ndim + ay] + (h // factor, factor, w // factor, factor) + img.shape[img.ndim + ay + 2:]
    y0 = img.ndim + ay
    return img.reshape(shape).mean(axis=(y0 + 1, y0 + 3))


def upsample_nearest(img, factor):
    img = np.asarray(img)
    ay, ax = _spatial_axes(img)
    return np.repeat(np.repeat(img, factor, axis=ay), factor, axis=ax)
