"""8-bit grayscale output (binary PGM) with a fixed intensity window."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError


def to_uint8(img, window) -> np.ndarray:
    """Clip to ``window = (lo, hi)`` and map linearly onto 0..255."""
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ConfigError(f"window must satisfy lo < hi, got {window}")
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[-1] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {img.shape}")
    scaled = (np.clip(img, lo, hi) - lo) / (hi - lo)
    return np.rint(scaled * 255).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> Path:
    path = Path(path)
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or parts[3] != b"255":
        raise ConfigError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def render_heatmap(img, window, path) -> Path:
    return write_pgm(path, to_uint8(img, window))


def panel(images, windows, gap: int = 2) -> np.ndarray:
    """Side-by-side strip of equally sized images, each with its own window."""
    tiles = [to_uint8(im, win) for im, win in zip(images, windows)]
    h = tiles[0].shape[0]
    spacer = np.full((h, gap), 255, dtype=np.uint8)
    out = []
    for t in tiles:
        out += [t, spacer]
    return np.concatenate(out[:-1], axis=1)


def robust_window(img, q: float = 99.5):
    """``(0, percentile)`` window for non-negative maps such as heatmaps."""
    hi = float(np.percentile(img, q))
    return (0.0, hi if hi > 0 else 1.0)
