"""Desk-scale image sources.

``shapes``
    Procedural rectangles and ellipses. The class fixes shape kind, colour
    and the quadrant the shape is centred in; size and exact position are
    jittered per sample.
``grayscale-digits:IMAGES[:LABELS]``
    An MNIST-format (IDX) image file, optionally with its label file,
    resized to the configured resolution.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

N_SHAPE_CLASSES = 4

# class -> (is_ellipse, rgb colour, centre as a fraction of the image)
_SHAPE_CLASSES = (
    (False, (0.95, 0.25, 0.20), (0.30, 0.30)),
    (True, (0.20, 0.85, 0.30), (0.30, 0.70)),
    (False, (0.25, 0.35, 0.95), (0.70, 0.70)),
    (True, (0.95, 0.85, 0.20), (0.70, 0.30)),
)
_BACKGROUND = 0.05


@dataclass
class Dataset:
    images: np.ndarray  # (count, C, H, W) in [0, 1]
    labels: np.ndarray  # (count,)

    def __len__(self) -> int:
        return len(self.images)


def _shape_image(rng: np.random.Generator, label: int, channels: int, h: int, w: int) -> np.ndarray:
    ellipse, colour, (cy, cx) = _SHAPE_CLASSES[label]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    cy = cy * h + rng.uniform(-0.08, 0.08) * h
    cx = cx * w + rng.uniform(-0.08, 0.08) * w
    ry = rng.uniform(0.15, 0.28) * h
    rx = rng.uniform(0.15, 0.28) * w
    if ellipse:
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    else:
        inside = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    rgb = np.asarray(colour)
    if channels == 1:
        levels = np.asarray([0.35 + 0.2 * label])
    else:
        levels = np.resize(rgb, channels)
    img = np.full((channels, h, w), _BACKGROUND)
    img[:, inside] = levels[:, None]
    return img


def make_shapes(count: int, channels: int = 3, size: int | tuple[int, int] = 16, seed: int = 0) -> Dataset:
    if channels < 1 or channels > 3:
        raise ConfigError("shapes supports 1 to 3 channels")
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, N_SHAPE_CLASSES, size=count)
    images = np.stack([_shape_image(rng, int(k), channels, h, w) for k in labels]) if count else np.zeros((0, channels, h, w))
    return Dataset(images.astype(np.float64), labels.astype(np.int64))


def read_idx(path) -> np.ndarray:
    """Read an IDX (MNIST-format) file, optionally gzip-compressed."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read dataset file {path}: {exc}") from exc
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise ConfigError(f"{path} is not an unsigned-byte IDX file")
    ndim = raw[3]
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ConfigError(f"{path}: payload size does not match header {dims}")
    return data.reshape(dims)


def _resize(images: np.ndarray, h: int, w: int) -> np.ndarray:
    if images.shape[1:] == (h, w):
        return images
    from PIL import Image

    return np.stack([
        np.asarray(Image.fromarray(img).resize((w, h), Image.BILINEAR)) for img in images
    ])


def make_digits(spec: str, count: int, channels: int, h: int, w: int, seed: int = 0) -> Dataset:
    parts = spec.split(":")[1:]
    if not parts or not parts[0]:
        raise ConfigError("grayscale-digits needs a path: grayscale-digits:IMAGES[:LABELS]")
    raw = read_idx(parts[0])
    if raw.ndim != 3:
        raise ConfigError("digit image file must be three-dimensional (count, rows, cols)")
    labels = read_idx(parts[1]).astype(np.int64) if len(parts) > 1 and parts[1] else np.zeros(len(raw), dtype=np.int64)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(len(raw))[:count])
    imgs = _resize(raw[idx], h, w).astype(np.float64) / 255.0
    imgs = np.repeat(imgs[:, None], channels, axis=1)
    return Dataset(imgs, labels[idx])


def make_dataset(spec: str, count: int, channels: int = 3, image_h: int = 16, image_w: int = 16, seed: int = 0) -> Dataset:
    """Build a deterministic dataset from a generator spec string."""
    name = spec.split(":", 1)[0]
    if name == "shapes":
        return make_shapes(count, channels, (image_h, image_w), seed)
    if name == "grayscale-digits":
        return make_digits(spec, count, channels, image_h, image_w, seed)
    raise ConfigError(f"unknown dataset spec {spec!r}")
