"""Image ingestion, synthetic toy faces, test-set sampling and checkpoints."""

import hashlib
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from sdesr.sde import make_rng

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm")


class DataError(ValueError):
    pass


@dataclass
class DatasetHandle:
    """In-memory image set; ``images`` is ``(N, H, W, C)`` float32 in [0, 1]."""

    source: str
    images: np.ndarray
    names: list
    split_seed: int = 0
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise DataError("duplicate image names in dataset")

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]


# ---------------------------------------------------------------------------
# raster files


def read_image(path):
    with Image.open(path) as im:
        im.load()
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.uint8)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr.astype(np.float32) / np.float32(255.0)


def to_uint8(img):
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img):
    """Write an ``(H, W, C)`` image in [0, 1] as 8-bit PNG or PGM/PPM."""
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".pgm", ".ppm") else "PNG"
    Image.fromarray(arr).save(path, format=fmt)


def load_image_dir(path, expected_shape=None, manifest=None):
    """Load every raster image in ``path`` (sorted by name).

    Unreadable files and files whose shape differs from ``expected_shape`` (or
    from the first readable image) are skipped and listed in
    ``handle.rejected`` as ``(name, reason)`` pairs.
    """
    path = Path(path)
    if manifest is not None:
        names = [ln.strip() for ln in Path(manifest).read_text().splitlines() if ln.strip()]
    else:
        names = sorted(p.name for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not names:
        raise DataError(f"no images found in {path}")
    images, kept, rejected = [], [], []
    shape = tuple(expected_shape) if expected_shape is not None else None
    for name in names:
        try:
            img = read_image(path / name)
        except Exception as exc:  # PIL raises a variety of types
            rejected.append((name, f"unreadable: {exc}"))
            log.warning("skipping %s: %s", name, exc)
            continue
        if shape is None:
            shape = img.shape
        if len(shape) == 2:
            shape = shape + (img.shape[-1],)
        if img.shape != shape:
            rejected.append((name, f"shape {img.shape} != {shape}"))
            continue
        images.append(img)
        kept.append(name)
    if not images:
        raise DataError(f"no usable images in {path}: {rejected}")
    return DatasetHandle("directory", np.stack(images), kept, rejected=rejected)


# ---------------------------------------------------------------------------
# synthetic faces


def _soft(d, width):
    return 0.5 * (1.0 + np.tanh(d / width))


def synth_face(shape, rng):
    h, w = shape[:2]
    yy, xx = np.meshgrid((np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w, indexing="ij")
    px = 1.0 / max(h, w)

    img = rng.uniform(0.1, 0.4) + rng.uniform(-0.15, 0.15) * (xx - 0.5) + rng.uniform(-0.15, 0.15) * (yy - 0.5)

    cx, cy = 0.5 + rng.uniform(-0.07, 0.07), 0.52 + rng.uniform(-0.05, 0.05)
    ax, ay = rng.uniform(0.26, 0.36), rng.uniform(0.34, 0.44)
    skin = rng.uniform(0.55, 0.9)
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    head = _soft(1.0 - r, 0.6 * px / min(ax, ay))
    img = img * (1 - head) + skin * head

    ex, ey = rng.uniform(0.09, 0.15), rng.uniform(0.06, 0.13)
    er = rng.uniform(0.03, 0.05)
    dark = rng.uniform(0.35, 0.6)
    for sx in (-1.0, 1.0):
        d2 = (xx - (cx + sx * ex)) ** 2 + (yy - (cy - ey)) ** 2
        img = img - dark * skin * np.exp(-0.5 * d2 / er**2) * head

    mr = rng.uniform(0.08, 0.14)
    my = cy + rng.uniform(0.06, 0.12) - mr * rng.uniform(0.4, 0.9)
    thick = rng.uniform(0.015, 0.03)
    dm = np.sqrt((xx - cx) ** 2 + (yy - my) ** 2)
    ring = np.exp(-0.5 * ((dm - mr) / thick) ** 2)
    lower = _soft(yy - my - 0.3 * mr, px)
    img = img - rng.uniform(0.25, 0.5) * skin * ring * lower * head

    img = img + 0.01 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)[..., None]


def synth_faces(n, shape=(32, 32), seed=0):
    """``n`` procedural grayscale toy faces; image ``i`` depends only on (seed, i)."""
    if shape[0] < 16 or shape[1] < 16:
        raise DataError("synthetic faces need at least 16x16 pixels")
    imgs = np.stack([synth_face(shape, make_rng(seed, i)) for i in range(n)]).astype(np.float32)
    names = [f"face_{i:05d}.png" for i in range(n)]
    return DatasetHandle("synthetic", imgs, names, split_seed=seed)


def sample_test_set(handle, count, seed):
    """Uniform sample of ``count`` images without replacement (returns indices, images)."""
    if count > len(handle):
        raise DataError(f"requested {count} images from a dataset of {len(handle)}")
    idx = make_rng(seed).permutation(len(handle))[:count]
    return idx, handle.images[idx]


def image_digest(img):
    return hashlib.sha256(np.ascontiguousarray(img).tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"SDESR1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    """Weights plus the metadata needed to rebuild the model.

    ``meta`` holds string key/value pairs (sde kind, schedule, architecture,
    training step, seed ...); ``arrays`` maps names to float32 arrays.
    """

    meta: dict
    arrays: dict
    version: int = VERSION


def save_checkpoint(ckpt, path):
    """Write atomically: the file appears under ``path`` only when complete."""
    path = Path(path)
    meta_lines = []
    for k, v in {**ckpt.meta, "n_arrays": len(ckpt.arrays)}.items():
        k, v = str(k), str(v)
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"metadata entry {k!r} cannot be encoded")
        meta_lines.append(f"{k}={v}")
    meta = "\n".join(meta_lines).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(meta)), meta]
    for name, arr in ckpt.arrays.items():
        a = np.asarray(arr, dtype="<f4")  # keeps 0-d shapes; tobytes is C order
        nb = name.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", a.ndim),
                  struct.pack(f"<{a.ndim}I", *a.shape), a.tobytes()]
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"checkpoint truncated at byte {len(self.buf)} (needed {self.pos + n})")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic)")
    rd = _Reader(buf)
    rd.take(len(MAGIC))
    version = rd.u32()
    if version != VERSION:
        raise VersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    meta_text = rd.take(rd.u32()).decode("utf-8")
    meta = dict(line.split("=", 1) for line in meta_text.splitlines() if line)
    n_arrays = int(meta.pop("n_arrays", -1))
    arrays = {}
    while rd.pos < len(buf):
        name = rd.take(rd.u32()).decode("utf-8")
        ndim = rd.u32()
        shape = struct.unpack(f"<{ndim}I", rd.take(4 * ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if n_arrays >= 0 and len(arrays) != n_arrays:
        raise TruncatedError(f"{path}: found {len(arrays)} of {n_arrays} arrays")
    return Checkpoint(meta, arrays, version)
