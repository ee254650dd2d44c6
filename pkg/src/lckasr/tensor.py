"""Dense NCHW tensor kernels.

Tensors are plain ``numpy.ndarray`` objects of rank 4 laid out as
(batch, channel, height, width), C-contiguous, ``float32`` by default.
Every kernel is dtype-generic so the same code runs on ``float64`` inputs
(used by the gradient checks).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import ConfigError

DTYPE = np.float32

__all__ = [
    "DTYPE",
    "ConvGeometry",
    "as_tensor",
    "conv2d",
    "gelu",
    "pixel_shuffle",
    "pixel_unshuffle",
    "channel_split",
    "channel_concat",
    "ewise_add",
    "ewise_mul",
    "replicate_channels",
    "count_macs",
]


def as_tensor(x, dtype=DTYPE) -> np.ndarray:
    """Return ``x`` as a contiguous rank-4 array of ``dtype``."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if arr.ndim != 4:
        raise ConfigError(f"expected a rank-4 NCHW tensor, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ConvGeometry:
    kernel_h: int
    kernel_w: int
    dilation_h: int = 1
    dilation_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    groups: int = 1
    has_bias: bool = True

    def __post_init__(self):
        for field in ("kernel_h", "kernel_w", "dilation_h", "dilation_w", "groups"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive, got {getattr(self, field)}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ConfigError("padding must be non-negative")

    @classmethod
    def same(cls, kernel, dilation=1, groups=1, bias=True) -> "ConvGeometry":
        """Geometry with zero 'same' padding for odd kernels.

        ``kernel`` and ``dilation`` accept an int or an (h, w) pair.
        """
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        dh, dw = (dilation, dilation) if np.isscalar(dilation) else dilation
        if kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError(f"'same' padding needs odd kernels, got {kh}x{kw}")
        return cls(kh, kw, dh, dw, dh * (kh - 1) // 2, dw * (kw - 1) // 2, groups, bias)

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        hout = h + 2 * self.pad_h - self.dilation_h * (self.kernel_h - 1)
        wout = w + 2 * self.pad_w - self.dilation_w * (self.kernel_w - 1)
        return hout, wout


# Active MAC counters; see ``count_macs``.
_mac_counters: list[list[int]] = []


@contextlib.contextmanager
def count_macs():
    """Count convolution multiply-accumulates executed inside the block.

    Yields a one-element list whose entry holds the running total.
    """
    counter = [0]
    _mac_counters.append(counter)
    try:
        yield counter
    finally:
        _mac_counters.remove(counter)


def check_conv(x_shape, weight_shape, bias_shape, geom: ConvGeometry) -> tuple[int, int]:
    """Validate a convolution call and return the output spatial size."""
    if len(x_shape) != 4:
        raise ConfigError(f"conv2d input must be rank 4, got shape {tuple(x_shape)}")
    if len(weight_shape) != 4:
        raise ConfigError(f"conv2d weight must be rank 4, got shape {tuple(weight_shape)}")
    _, cin, h, w = x_shape
    cout, cin_g, kh, kw = weight_shape
    g = geom.groups
    if (kh, kw) != (geom.kernel_h, geom.kernel_w):
        raise ConfigError(f"kernel size {kh}x{kw} disagrees with geometry {geom.kernel_h}x{geom.kernel_w}")
    if cin % g:
        raise ConfigError(f"input channels {cin} not divisible by groups {g}")
    if cout % g:
        raise ConfigError(f"output channels {cout} not divisible by groups {g}")
    if cin_g != cin // g:
        raise ConfigError(f"weight in-channels per group {cin_g} != input channels {cin} / groups {g}")
    if geom.has_bias != (bias_shape is not None):
        raise ConfigError("bias presence disagrees with geometry.has_bias")
    if bias_shape is not None and tuple(bias_shape) != (cout,):
        raise ConfigError(f"bias shape {tuple(bias_shape)} != ({cout},)")
    hout, wout = geom.output_hw(h, w)
    if hout < 1 or wout < 1:
        raise ConfigError(f"output spatial size {hout}x{wout} is empty")
    return hout, wout


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _tap_product(patch, w_tap, groups):
    """Channel mixing of one kernel tap: (N, Cin, H, W) x (Cout, Cin/g) -> (N, Cout, H, W)."""
    n, cin, h, w = patch.shape
    cout = w_tap.shape[0]
    if groups == 1:
        return np.matmul(w_tap, patch.reshape(n, cin, h * w)).reshape(n, cout, h, w)
    if groups == cin and cout == cin:
        return patch * w_tap[None, :, 0, None, None]
    cin_g, cout_g = cin // groups, cout // groups
    p = patch.reshape(n, groups, cin_g, h, w)
    wt = w_tap.reshape(groups, cout_g, cin_g)
    return np.einsum("goc,ngchw->ngohw", wt, p).reshape(n, cout, h, w)


def conv2d(x, weight, bias, geom: ConvGeometry) -> np.ndarray:
    """Zero-padded grouped, dilated 2-D cross-correlation.

    ``weight`` has shape (Cout, Cin/groups, kH, kW); ``bias`` is a (Cout,)
    vector or None.
    """
    hout, wout = check_conv(x.shape, weight.shape, None if bias is None else bias.shape, geom)
    n, cin = x.shape[:2]
    cout, cin_g, kh, kw = weight.shape
    for counter in _mac_counters:
        counter[0] += n * cout * cin_g * kh * kw * hout * wout

    dtype = np.result_type(x.dtype, weight.dtype)
    if kh == kw == 1 and geom.pad_h == geom.pad_w == 0:
        out = _tap_product(x, weight[:, :, 0, 0], geom.groups).astype(dtype, copy=False)
    else:
        xp = _pad(x, geom.pad_h, geom.pad_w)
        out = np.zeros((n, cout, hout, wout), dtype=dtype)
        dh, dw = geom.dilation_h, geom.dilation_w
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i * dh:i * dh + hout, j * dw:j * dw + wout]
                out += _tap_product(patch, weight[:, :, i, j], geom.groups)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def conv2d_grads(x, weight, grad_out, geom: ConvGeometry):
    """Gradients of ``conv2d`` w.r.t. input, weight and bias (bias grad always returned)."""
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    g = geom.groups
    hout, wout = grad_out.shape[2:]
    dh, dw = geom.dilation_h, geom.dilation_w
    ph, pw = geom.pad_h, geom.pad_w
    xp = _pad(x, ph, pw)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    gb = grad_out.sum(axis=(0, 2, 3))
    cout_g = cout // g
    go = grad_out.reshape(n, g, cout_g, hout * wout)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(i * dh, i * dh + hout), slice(j * dw, j * dw + wout))
            patch = xp[sl]
            w_tap = weight[:, :, i, j]
            if g == cin and cout == cin:
                gxp[sl] += grad_out * w_tap[None, :, 0, None, None]
                gw[:, 0, i, j] = np.einsum("nchw,nchw->c", grad_out, patch)
                continue
            if g == 1:
                p = patch.reshape(n, cin, hout * wout)
                go1 = grad_out.reshape(n, cout, hout * wout)
                gw[:, :, i, j] = np.tensordot(go1, p, axes=([0, 2], [0, 2]))
                gxp[sl] += np.matmul(w_tap.T, go1).reshape(n, cin, hout, wout)
                continue
            p = patch.reshape(n, g, cin_g, hout * wout)
            wt = w_tap.reshape(g, cout_g, cin_g)
            # (g, cout_g, cin_g): sum over n and pixels of go x p
            gw[:, :, i, j] = np.einsum("ngop,ngcp->goc", go, p).reshape(cout, cin_g)
            gxp[sl] += np.einsum("goc,ngop->ngcp", wt, go).reshape(n, cin, hout, wout)
    gx = gxp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else gxp
    return np.ascontiguousarray(gx), gw, gb


_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def normal_cdf(x) -> np.ndarray:
    return (0.5 * (1.0 + erf(x * _SQRT1_2))).astype(x.dtype, copy=False)


def gelu(x) -> np.ndarray:
    """Exact GELU, x * Phi(x) with Phi the standard normal CDF."""
    return x * normal_cdf(x)


def gelu_grad(x, cdf=None) -> np.ndarray:
    """d/dx GELU = Phi(x) + x * phi(x); pass ``cdf`` to reuse Phi(x) from the forward pass."""
    if cdf is None:
        cdf = normal_cdf(x)
    pdf = np.exp(-0.5 * x * x) * x.dtype.type(_INV_SQRT_2PI)
    return cdf + x * pdf


def pixel_shuffle(x, r: int) -> np.ndarray:
    """Rearrange (N, C*r^2, H, W) into (N, C, H*r, W*r).

    out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]
    """
    n, c, h, w = x.shape
    if r < 1:
        raise ConfigError(f"upscale factor must be positive, got {r}")
    if c % (r * r):
        raise ConfigError(f"channels {c} not divisible by r^2 = {r * r}")
    co = c // (r * r)
    return np.ascontiguousarray(
        x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)
    )


def pixel_unshuffle(x, r: int) -> np.ndarray:
    """Inverse of ``pixel_shuffle``."""
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ConfigError(f"spatial size {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        x.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    )


def channel_split(x, parts) -> list[np.ndarray]:
    if sum(parts) != x.shape[1]:
        raise ConfigError(f"split parts {list(parts)} sum to {sum(parts)}, expected channels {x.shape[1]}")
    if any(p < 1 for p in parts):
        raise ConfigError(f"split parts must be positive, got {list(parts)}")
    bounds = np.cumsum([0, *parts])
    return [x[:, a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def channel_concat(inputs) -> np.ndarray:
    inputs = list(inputs)
    if not inputs:
        raise ConfigError("concat of an empty list")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ConfigError(f"concat mismatch: N/H/W of {t.shape} vs {ref}")
    return np.concatenate(inputs, axis=1)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ConfigError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def ewise_add(a, b) -> np.ndarray:
    _same_shape(a, b, "ewise_add")
    return a + b


def ewise_mul(a, b) -> np.ndarray:
    _same_shape(a, b, "ewise_mul")
    return a * b


def replicate_channels(x, n: int) -> np.ndarray:
    """Stack ``n`` copies of ``x`` along the channel axis."""
    if n < 1:
        raise ConfigError(f"replication factor must be positive, got {n}")
    return np.tile(x, (1, n, 1, 1))
