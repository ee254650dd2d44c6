"""Colour conversion, bicubic resampling, PNG I/O and Y-channel PSNR/SSIM.

Images at the file boundary are ``uint8`` arrays of shape (H, W, 3), RGB.
Y uses the BT.601 studio-swing transform (range 16..235) and is kept as
unrounded float64.
"""
from __future__ import annotations

import math
import os
import tempfile

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .errors import ConfigError, DataError

Y_COEFFS = (65.481, 128.553, 24.966)
SSIM_K1, SSIM_K2, SSIM_L = 0.01, 0.03, 255.0
SSIM_WINDOW, SSIM_SIGMA = 11, 1.5


def as_image(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigError(f"expected an (H, W, 3) RGB image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ConfigError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def rgb_to_y(img) -> np.ndarray:
    """BT.601 luma: 16 + (65.481 R + 128.553 G + 24.966 B) / 255."""
    rgb = np.asarray(img, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return 16.0 + (Y_COEFFS[0] * r + Y_COEFFS[1] * g + Y_COEFFS[2] * b) / 255.0


# tensors <-> images -------------------------------------------------------

def to_tensor(img) -> np.ndarray:
    """uint8 (H, W, 3) -> float32 (1, 3, H, W) in [0, 1]."""
    img = as_image(img)
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=np.float32) / np.float32(255.0)


def to_image(t) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) float in [0, 1] -> uint8, clamped and rounded."""
    t = np.asarray(t)
    if t.ndim == 4:
        if t.shape[0] != 1:
            raise ConfigError(f"to_image takes a single image, got batch of {t.shape[0]}")
        t = t[0]
    return np.clip(np.round(t.transpose(1, 2, 0).astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_png(path, img):
    """Write atomically (temporary file + rename)."""
    img = as_image(img)
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(img, "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# resampling ---------------------------------------------------------------

def cubic(x, a=-0.5):
    """Keys cubic convolution kernel."""
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    return np.where(
        ax <= 1, (a + 2) * ax3 - (a + 3) * ax2 + 1,
        np.where(ax < 2, a * ax3 - 5 * a * ax2 + 8 * a * ax - 4 * a, 0.0),
    )


def resize_matrix(in_len: int, out_len: int, antialias: bool = True) -> np.ndarray:
    """Dense (out_len, in_len) bicubic interpolation matrix.

    Sample centres follow the half-pixel convention, the kernel is stretched
    by 1/scale when shrinking (antialias), and out-of-range taps are mirrored
    symmetrically back into the signal.
    """
    if in_len < 1 or out_len < 1:
        raise ConfigError(f"resize lengths must be positive, got {in_len} -> {out_len}")
    scale = out_len / in_len
    width = 4.0
    stretch = scale if (antialias and scale < 1) else 1.0
    width /= stretch
    u = np.arange(1, out_len + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    w = stretch * cubic(stretch * (u[:, None] - idx))
    w /= w.sum(axis=1, keepdims=True)
    mirror = np.concatenate([np.arange(in_len), np.arange(in_len)[::-1]])
    cols = mirror[np.mod(idx.astype(np.int64) - 1, 2 * in_len)]
    mat = np.zeros((out_len, in_len))
    np.add.at(mat, (np.repeat(np.arange(out_len), taps), cols.ravel()), w.ravel())
    return mat


def resize_float(planes, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Bicubic resize of the last two axes of a float array, in float64."""
    a = np.asarray(planes, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"target size must be at least 1x1, got {out_h}x{out_w}")
    mh = resize_matrix(a.shape[-2], out_h, antialias)
    mw = resize_matrix(a.shape[-1], out_w, antialias)
    return mh @ a @ mw.T


def bicubic_resize(img, out_h: int, out_w: int, antialias: bool = True) -> np.ndarray:
    """Bicubic resize of an RGB uint8 image; result rounded back to uint8."""
    img = as_image(img)
    out = resize_float(img.transpose(2, 0, 1), out_h, out_w, antialias)
    return np.clip(np.round(out), 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()


def crop_to_multiple(img, s: int) -> np.ndarray:
    h, w = img.shape[:2]
    return img[: h - h % s, : w - w % s]


def degrade(hr, s: int) -> np.ndarray:
    """Bicubic (BI) degradation by an integer factor; HR must be a multiple of ``s``."""
    hr = as_image(hr)
    h, w = hr.shape[:2]
    if s < 1:
        raise ConfigError(f"scale must be positive, got {s}")
    if h % s or w % s:
        raise ConfigError(f"HR size {h}x{w} not divisible by scale {s}; crop to a multiple first")
    if s == 1:
        return hr.copy()
    return bicubic_resize(hr, h // s, w // s)


def nearest_upscale(img, s: int) -> np.ndarray:
    return np.repeat(np.repeat(as_image(img), s, axis=0), s, axis=1)


# metrics ------------------------------------------------------------------

def _y_pair(a, b, border_crop):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ConfigError(f"image size mismatch: {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    c = border_crop
    if c < 0 or h <= 2 * c or w <= 2 * c:
        raise ConfigError(f"border_crop={c} leaves nothing of a {h}x{w} image")
    ya, yb = rgb_to_y(a), rgb_to_y(b)
    if c:
        ya, yb = ya[c:-c, c:-c], yb[c:-c, c:-c]
    return ya, yb


def psnr_planes(ya, yb, peak=255.0) -> float:
    mse = float(np.mean((np.asarray(ya, np.float64) - np.asarray(yb, np.float64)) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr_y(a, b, border_crop: int = 0) -> float:
    """PSNR in dB between the Y planes; ``math.inf`` for identical planes."""
    return psnr_planes(*_y_pair(a, b, border_crop))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    r = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[r:-r, r:-r] if r else y


def ssim_planes(ya, yb) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows."""
    ya, yb = np.asarray(ya, np.float64), np.asarray(yb, np.float64)
    if min(ya.shape) < SSIM_WINDOW:
        raise ConfigError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {ya.shape}")
    g = gaussian_window()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    saa = _filter_valid(ya * ya, g) - mu_a * mu_a
    sbb = _filter_valid(yb * yb, g) - mu_b * mu_b
    sab = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim_y(a, b, border_crop: int = 0) -> float:
    return ssim_planes(*_y_pair(a, b, border_crop))
