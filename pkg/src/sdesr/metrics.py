"""Image quality metrics, feature cosine similarity and correlation helpers.

All images are ``(H, W)`` or ``(H, W, C)`` arrays with values in [0, 1].
"""

import csv
import math
import struct
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from sdesr.kernels import filter2d_valid, laplacian
from sdesr.sde import make_rng
from sdesr.training import downsample

PSNR_CAP_DB = 100.0
CONSISTENCY_SCALE = 1e4


class MetricError(ValueError):
    pass


def _as_hwc(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise MetricError(f"expected an (H, W[, C]) image, got shape {img.shape}")
    return img


def _same_shape(a, b):
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """PSNR in dB for data range 1; identical images give ``inf``."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def ssim(a, b, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM over the valid window positions, averaged across channels."""
    a, b = _same_shape(a, b)
    if a.shape[0] < win_size or a.shape[1] < win_size:
        raise MetricError(f"image {a.shape[:2]} smaller than the {win_size}x{win_size} window")
    k = gaussian_window(win_size, sigma)
    c1, c2 = k1**2, k2**2
    vals = []
    for ch in range(a.shape[2]):
        x = np.ascontiguousarray(a[..., ch])
        y = np.ascontiguousarray(b[..., ch])
        mx, my = filter2d_valid(x, k), filter2d_valid(y, k)
        sxx = filter2d_valid(x * x, k) - mx * mx
        syy = filter2d_valid(y * y, k) - my * my
        sxy = filter2d_valid(x * y, k) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def consistency(sr, y_lr, spec):
    """MSE between the downsampled SR image and the low-resolution input."""
    d = downsample(_as_hwc(sr), spec)
    return mse(d, y_lr)


# ---------------------------------------------------------------------------
# features


def cosine_similarity(z1, z2):
    z1 = np.asarray(z1, dtype=np.float64).ravel()
    z2 = np.asarray(z2, dtype=np.float64).ravel()
    if z1.shape != z2.shape:
        raise MetricError(f"feature length mismatch: {z1.size} vs {z2.size}")
    n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
    if n1 == 0 or n2 == 0:
        raise MetricError("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(z1, z2) / (n1 * n2), -1.0, 1.0))


def average_cs(pairs):
    """Mean and standard deviation of pairwise cosine similarities."""
    sims = [cosine_similarity(a, b) for a, b in pairs]
    if not sims:
        raise MetricError("average_cs needs at least one pair")
    return float(np.mean(sims)), float(np.std(sims))


def _gray(img):
    return _as_hwc(img).mean(axis=2)


def _projection(in_dim, out_dim):
    return make_rng(20220812, in_dim, out_dim).standard_normal((in_dim, out_dim)) / math.sqrt(out_dim)


def default_feature_extract(img, dim=512, block=8, n_orient=8):
    """Deterministic unit-norm embedding of an image.

    Per ``block x block`` tile: mean, standard deviation and a gradient
    orientation histogram (unsigned, magnitude weighted). The concatenation
    plus a constant term is mapped to ``dim`` values by a fixed seeded random
    projection and normalised.
    """
    g = _gray(img)
    h, w = (g.shape[0] // block) * block, (g.shape[1] // block) * block
    if h == 0 or w == 0:
        raise MetricError(f"image {g.shape} smaller than one {block}x{block} block")
    gy, gx = np.gradient(g)
    g, gy, gx = g[:h, :w], gy[:h, :w], gx[:h, :w]
    tiles = g.reshape(h // block, block, w // block, block).swapaxes(1, 2)
    means = tiles.mean(axis=(2, 3)).ravel()
    stds = tiles.std(axis=(2, 3)).ravel()
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    bins = np.minimum((ang / np.pi * n_orient).astype(np.int64), n_orient - 1)
    ti = (np.arange(h)[:, None] // block) * (w // block) + np.arange(w)[None, :] // block
    hist = np.zeros((ti.max() + 1) * n_orient)
    np.add.at(hist, (ti * n_orient + bins).ravel(), mag.ravel())
    feat = np.concatenate([[1.0], means, stds, hist])
    z = feat @ _projection(feat.size, dim)
    return z / np.linalg.norm(z)


FVEC_MAGIC = b"FVEC"
FVEC_VERSION = 1


def write_fvec(path, z):
    z = np.ascontiguousarray(z, dtype="<f4").ravel()
    Path(path).write_bytes(FVEC_MAGIC + struct.pack("<III", FVEC_VERSION, z.size, 0) + z.tobytes())


def read_fvec(path):
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != FVEC_MAGIC:
        raise MetricError(f"{path}: not a feature-vector file")
    version, dim, _ = struct.unpack("<III", buf[4:16])
    if version != FVEC_VERSION:
        raise MetricError(f"{path}: unsupported version {version}")
    if len(buf) != 16 + 4 * dim:
        raise MetricError(f"{path}: expected {dim} floats, file holds {(len(buf) - 16) // 4}")
    return np.frombuffer(buf, dtype="<f4", offset=16).astype(np.float64)


# ---------------------------------------------------------------------------
# smoothness and correlation


def high_frequency_energy(img):
    """Mean squared 5-point Laplacian response over the image interior."""
    x = _as_hwc(img)
    return float(np.mean([np.mean(laplacian(np.ascontiguousarray(x[..., c])) ** 2) for c in range(x.shape[2])]))


Correlation = namedtuple("Correlation", "pearson spearman")


def metric_correlation(xs, ys):
    """Pearson and Spearman coefficients; ``nan`` when either input is constant."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise MetricError("inputs must be 1-D and of equal length")
    if xs.size < 3:
        raise MetricError("need at least 3 points")
    if np.ptp(xs) == 0 or np.ptp(ys) == 0:
        return Correlation(math.nan, math.nan)
    return Correlation(float(stats.pearsonr(xs, ys)[0]), float(stats.spearmanr(xs, ys)[0]))


# ---------------------------------------------------------------------------
# reports

METRIC_COLUMNS = ("psnr_db", "ssim", "consistency_x1e4", "cosine")


@dataclass
class MetricReport:
    records: list = field(default_factory=list)

    def add(self, image_id, psnr_db, ssim_val, consistency_mse, cosine):
        self.records.append({
            "image_id": image_id,
            "psnr_db": psnr_db,
            "ssim": ssim_val,
            "consistency_x1e4": consistency_mse * CONSISTENCY_SCALE,
            "cosine": cosine,
        })

    def __len__(self):
        return len(self.records)

    def column(self, name, capped=True):
        vals = np.array([r[name] for r in self.records], dtype=np.float64)
        if capped and name == "psnr_db":
            vals = np.minimum(vals, PSNR_CAP_DB)
        return vals

    def aggregates(self):
        if not self.records:
            raise MetricError("empty report")
        return {c: (float(self.column(c).mean()), float(self.column(c).std())) for c in METRIC_COLUMNS}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("image_id",) + METRIC_COLUMNS)
            for r in self.records:
                w.writerow([r["image_id"]] + [f"{min(r[c], PSNR_CAP_DB) if c == 'psnr_db' else r[c]:.10g}"
                                              for c in METRIC_COLUMNS])

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("metric", "mean", "std", "L"))
            for c, (m, s) in self.aggregates().items():
                w.writerow([c, f"{m:.10g}", f"{s:.10g}", len(self)])


def evaluate_image(sr, hr, y_lr, spec, features=None):
    """Metrics for one SR/HR pair; ``features`` optionally gives ``(z_sr, z_hr)``."""
    if features is None:
        features = (default_feature_extract(sr), default_feature_extract(hr))
    return psnr(sr, hr), ssim(sr, hr), consistency(sr, y_lr, spec), cosine_similarity(*features)
