"""Out-of-distribution inputs with ground-truth masks of the changed region."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError
from .operators import NoiseModel, gaussian_noise

# Dove in flight, facing left; unit box with y pointing down.
DOVE = np.array([
    (0.00, 0.42), (0.08, 0.33), (0.14, 0.30), (0.20, 0.33), (0.30, 0.38),
    (0.38, 0.20), (0.48, 0.05), (0.60, 0.00), (0.58, 0.12), (0.66, 0.06),
    (0.64, 0.20), (0.72, 0.16), (0.66, 0.32), (0.56, 0.42), (0.78, 0.44),
    (1.00, 0.36), (0.96, 0.50), (1.00, 0.62), (0.78, 0.56), (0.60, 0.64),
    (0.40, 0.66), (0.24, 0.58), (0.14, 0.50), (0.08, 0.47), (0.00, 0.45),
])


def _polygon_area(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def dove_mask(image_size: int, area_fraction: float = 0.03) -> np.ndarray:
    """Binary bird silhouette covering about ``area_fraction`` of an image."""
    from skimage.draw import polygon

    scale = np.sqrt(area_fraction * image_size**2 / _polygon_area(DOVE))
    h = int(np.ceil(DOVE[:, 1].max() * scale)) + 1
    w = int(np.ceil(DOVE[:, 0].max() * scale)) + 1
    rr, cc = polygon(DOVE[:, 1] * scale, DOVE[:, 0] * scale, shape=(h, w))
    mask = np.zeros((h, w), dtype=bool)
    mask[rr, cc] = True
    rows = np.flatnonzero(mask.any(1))
    cols = np.flatnonzero(mask.any(0))
    return mask[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def salt_pepper_half(clean, amount: float = 0.1, side: str | None = None, seed: int = 0,
                     noise: NoiseModel | None = None):
    """Swap the Gaussian noise for salt-and-pepper noise in one image half.

    The untouched half carries exactly the Gaussian noise realisation of
    ``noise`` (so it matches the in-distribution input bitwise); in the
    selected half a fraction ``amount`` of pixels is set to 0 or 1 with
    equal probability and all others stay clean.  ``side`` is ``"left"``,
    ``"right"`` or ``None`` for a seeded coin flip.

    Returns ``((x_tilde_ood, clean), region_mask)``; inputs are clipped to
    [0, 1] like the in-distribution pipeline.
    """
    if not 0 < amount <= 1:
        raise ConfigError(f"salt-and-pepper amount must lie in (0, 1], got {amount}")
    clean = np.asarray(clean, dtype=np.float64)
    noise = noise or NoiseModel()
    rng = np.random.default_rng([seed, 3])
    if side is None:
        side = "left" if rng.uniform() < 0.5 else "right"
    if side not in ("left", "right"):
        raise ConfigError(f"side must be 'left' or 'right', got {side!r}")
    h, w = clean.shape[:2]
    region = np.zeros((h, w), dtype=bool)
    if side == "left":
        region[:, : w // 2] = True
    else:
        region[:, w // 2:] = True
    x_ood = clean + gaussian_noise(clean.shape, noise)
    x_ood[region] = clean[region]
    cells = np.flatnonzero(region)
    hit = rng.choice(cells, size=int(round(amount * cells.size)), replace=False)
    x_ood.flat[hit] = (rng.uniform(size=hit.size) < 0.5).astype(np.float64)
    return (np.clip(x_ood, 0.0, 1.0), clean), region


def insert_silhouette(clean, shape, intensity: float = 1.0, position=None, seed: int = 0):
    """Paint ``shape`` (binary mask) with constant ``intensity`` into the image.

    ``position`` is the top-left corner ``(row, col)``; ``None`` draws it
    uniformly among placements that fit.  Returns ``(ood_image, region_mask)``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    shape = np.asarray(shape, dtype=bool)
    if not 0 <= intensity <= 1:
        raise ContractError("intensity must lie in [0, 1]")
    h, w = clean.shape[:2]
    sh, sw = shape.shape
    if sh > h or sw > w:
        raise ContractError(f"shape {shape.shape} does not fit into image {clean.shape}")
    if position is None:
        rng = np.random.default_rng([seed, 4])
        position = (int(rng.integers(0, h - sh + 1)), int(rng.integers(0, w - sw + 1)))
    r, c = position
    if r < 0 or c < 0 or r + sh > h or c + sw > w:
        raise ContractError(f"shape placed at {position} leaves the image")
    region = np.zeros((h, w), dtype=bool)
    region[r:r + sh, c:c + sw] = shape
    out = clean.copy()
    out[region] = intensity
    return out, region
