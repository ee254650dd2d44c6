"""Synthetic training images and LR/HR pair handling."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError
from .image import crop_to_multiple, degrade, read_png, to_tensor


def synthetic_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Piecewise-smooth RGB scene: a colour gradient with random rectangles,
    discs, straight edges and stripe patches. Returns uint8 (size, size, 3)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    c0, c1, c2 = rng.uniform(0, 1, (3, 3))
    img = c0 + (c1 - c0) * xx[..., None] + (c2 - c0) * yy[..., None]
    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0, 1, 3)
        kind = rng.integers(4)
        if kind == 0:
            x0, x1 = np.sort(rng.uniform(0, 1, 2))
            y0, y1 = np.sort(rng.uniform(0, 1, 2))
            mask = (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
        elif kind == 1:
            cx, cy = rng.uniform(0, 1, 2)
            r = rng.uniform(0.08, 0.35)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
        elif kind == 2:
            theta = rng.uniform(0, np.pi)
            offset = rng.uniform(-0.3, 0.3)
            mask = (xx - 0.5) * np.cos(theta) + (yy - 0.5) * np.sin(theta) > offset
        else:
            theta = rng.uniform(0, np.pi)
            period = rng.uniform(0.06, 0.2)
            phase = ((xx * np.cos(theta) + yy * np.sin(theta)) / period) % 1.0
            cx, cy = rng.uniform(0.2, 0.8, 2)
            r = rng.uniform(0.15, 0.4)
            mask = (phase < 0.5) & (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r)
        img = np.where(mask[..., None], colour, img)
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def synthetic_images(count: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(rng, size) for _ in range(count)]


def make_pairs(hr_images, scale: int):
    """(LR, HR) float32 (3, h, w) pairs in [0, 1]; HR cropped to a multiple of ``scale``."""
    pairs = []
    for hr in hr_images:
        hr = crop_to_multiple(hr, scale)
        lr = degrade(hr, scale)
        pairs.append((to_tensor(lr)[0], to_tensor(hr)[0]))
    return pairs


def list_pngs(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")


def load_pairs(hr_dir, scale: int, lr_dir=None):
    """Pairs from PNG folders. Without ``lr_dir`` the HR images are degraded on the fly;
    with it, LR files are matched to HR files by name."""
    pairs = []
    for path in list_pngs(hr_dir):
        hr = crop_to_multiple(read_png(path), scale)
        if lr_dir is None:
            lr = degrade(hr, scale)
        else:
            lr_path = Path(lr_dir) / path.name
            if not lr_path.exists():
                raise DataError(f"no LR image for {path.name} in {lr_dir}")
            lr = read_png(lr_path)
            if lr.shape[0] * scale != hr.shape[0] or lr.shape[1] * scale != hr.shape[1]:
                raise DataError(f"{path.name}: LR {lr.shape[:2]} x{scale} != HR {hr.shape[:2]}")
        pairs.append((to_tensor(lr)[0], to_tensor(hr)[0]))
    if not pairs:
        raise DataError(f"no PNG images in {hr_dir}")
    return pairs
