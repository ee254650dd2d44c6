"""Building blocks: multi-scale blueprint separable conv, large-kernel attention
variants and the multi-scale attention residual block.

Blocks hold no tensors. Each one lists its convolution layers (``convs``) so
a parameter store can be allocated, and evaluates against an ops namespace
``F`` (either :mod:`lckasr.tensor` or a :class:`lckasr.autodiff.Tape`) and a
name -> tensor mapping ``p``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor
from .errors import ConfigError
from .tensor import ConvGeometry

ATTENTION_KINDS = ("lka", "lska", "lcka", "none")


@dataclass(frozen=True)
class AttentionVariant:
    kind: str = "lcka"
    kernel: int = 5
    dilation: int = 3

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention variant {self.kind!r}; expected one of {ATTENTION_KINDS}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"attention kernel must be a positive odd count, got {self.kernel}")
        if self.dilation < 1:
            raise ConfigError(f"attention dilation must be positive, got {self.dilation}")


@dataclass(frozen=True)
class Conv:
    """One convolution layer with 'same' zero padding."""

    name: str
    cin: int
    cout: int
    kernel: tuple[int, int] = (1, 1)
    dilation: tuple[int, int] = (1, 1)
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.cin % self.groups or self.cout % self.groups:
            raise ConfigError(
                f"{self.name}: groups {self.groups} must divide in/out channels {self.cin}/{self.cout}"
            )

    @property
    def geometry(self) -> ConvGeometry:
        return ConvGeometry.same(self.kernel, self.dilation, self.groups, self.bias)

    @property
    def kind(self) -> str:
        if self.kernel == (1, 1) and self.groups == 1:
            return "pointwise"
        if self.groups == self.cin == self.cout:
            return "depthwise-dilated" if self.dilation != (1, 1) else "depthwise"
        return "conv"

    def shapes(self) -> Iterator[tuple[str, tuple[int, ...]]]:
        kh, kw = self.kernel
        yield f"{self.name}.weight", (self.cout, self.cin // self.groups, kh, kw)
        if self.bias:
            yield f"{self.name}.bias", (self.cout,)

    @property
    def num_params(self) -> int:
        kh, kw = self.kernel
        return self.cout * (self.cin // self.groups) * kh * kw + (self.cout if self.bias else 0)

    def __call__(self, F, p, x):
        bias = p[f"{self.name}.bias"] if self.bias else None
        return F.conv2d(x, p[f"{self.name}.weight"], bias, self.geometry)


def depthwise(name, channels, kernel, dilation=(1, 1), bias=True) -> Conv:
    return Conv(name, channels, channels, kernel, dilation, groups=channels, bias=bias)


class MBSConv:
    """Point-wise conv followed by a depth-wise stage that splits channels evenly
    across ``kernels``. ``kernels=(3,)`` is a plain blueprint separable conv."""

    def __init__(self, name, cin, cout, kernels=(1, 3, 5), bias=True):
        if cout % len(kernels):
            raise ConfigError(
                f"{name}: output channels {cout} not divisible into {len(kernels)} equal groups"
            )
        self.name = name
        self.group = cout // len(kernels)
        self.pw = Conv(f"{name}.pw", cin, cout, bias=bias)
        self.dw = [depthwise(f"{name}.dw{k}", self.group, (k, k), bias=bias) for k in kernels]

    def convs(self) -> list[Conv]:
        return [self.pw, *self.dw]

    def __call__(self, F, p, x):
        x = self.pw(F, p, x)
        if len(self.dw) == 1:
            return self.dw[0](F, p, x)
        parts = F.channel_split(x, [self.group] * len(self.dw))
        return F.channel_concat([conv(F, p, part) for conv, part in zip(self.dw, parts)])


class Attention:
    """Large-kernel attention: depth-wise spatial branch, point-wise mix, then
    element-wise product with the module input.

    Spatial branch per variant (k = kernel, d = dilation):
      lka:  k x k  ->  k x k dilated
      lska: 1 x k  ->  k x 1  ->  1 x k dilated  ->  k x 1 dilated
      lcka: 1 x k  ->  1 x k dilated  ->  k x 1  ->  k x 1 dilated
      none: identity, no parameters
    """

    def __init__(self, name, channels, variant: AttentionVariant, bias=True):
        self.name = name
        self.variant = variant
        k, d, c = variant.kernel, variant.dilation, channels
        dw_h = depthwise(f"{name}.dw_h", c, (1, k), bias=bias)
        dw_v = depthwise(f"{name}.dw_v", c, (k, 1), bias=bias)
        dwd_h = depthwise(f"{name}.dwd_h", c, (1, k), (1, d), bias=bias)
        dwd_v = depthwise(f"{name}.dwd_v", c, (k, 1), (d, 1), bias=bias)
        if variant.kind == "lka":
            self.spatial = [
                depthwise(f"{name}.dw", c, (k, k), bias=bias),
                depthwise(f"{name}.dwd", c, (k, k), (d, d), bias=bias),
            ]
        elif variant.kind == "lska":
            self.spatial = [dw_h, dw_v, dwd_h, dwd_v]
        elif variant.kind == "lcka":
            self.spatial = [dw_h, dwd_h, dw_v, dwd_v]
        else:
            self.spatial = []
        self.pw = Conv(f"{name}.pw", c, c, bias=bias) if variant.kind != "none" else None

    def convs(self) -> list[Conv]:
        return [*self.spatial, self.pw] if self.pw is not None else []

    def branch(self, F, p, x):
        """The linear depth-wise chain, before the point-wise mix."""
        for conv in self.spatial:
            x = conv(F, p, x)
        return x

    def __call__(self, F, p, x):
        if self.pw is None:
            return x
        return F.ewise_mul(self.pw(F, p, self.branch(F, p, x)), x)


class MARB:
    """Multi-scale attention residual block.

    ``stages`` distillation steps each peel off a point-wise C -> C*ratio
    feature and refine the running feature with MBSConv plus a shallow
    residual and GELU. A final MBSConv C -> C*ratio gives the last distilled
    feature. The distilled features are concatenated, fused back to C with a
    point-wise conv and GELU, passed through attention and a point-wise conv,
    and added to the block input.
    """

    def __init__(self, name, channels, variant: AttentionVariant, distill_ratio=0.5,
                 stages=3, kernels=(1, 3, 5), bias=True):
        dc = channels * distill_ratio
        if dc != int(dc) or dc < 1:
            raise ConfigError(f"{name}: C*distill_ratio = {dc} is not a positive whole number")
        dc = int(dc)
        self.name = name
        self.distilled = dc
        self.distill = [Conv(f"{name}.distill{i}", channels, dc, bias=bias) for i in range(stages)]
        self.refine = [MBSConv(f"{name}.refine{i}", channels, channels, kernels, bias) for i in range(stages)]
        self.last = MBSConv(f"{name}.last", channels, dc, kernels, bias)
        self.fuse = Conv(f"{name}.fuse", dc * (stages + 1), channels, bias=bias)
        self.attn = Attention(f"{name}.attn", channels, variant, bias)
        self.out = Conv(f"{name}.out", channels, channels, bias=bias)

    def convs(self) -> list[Conv]:
        layers = []
        for d, r in zip(self.distill, self.refine):
            layers += [d, *r.convs()]
        return layers + [*self.last.convs(), self.fuse, *self.attn.convs(), self.out]

    def __call__(self, F, p, x):
        r = x
        distilled = []
        for d, refine in zip(self.distill, self.refine):
            distilled.append(d(F, p, r))
            r = F.gelu(F.ewise_add(refine(F, p, r), r))
        distilled.append(self.last(F, p, r))
        y = F.gelu(self.fuse(F, p, F.channel_concat(distilled)))
        y = self.out(F, p, self.attn(F, p, y))
        return F.ewise_add(y, x)


def impulse_response(variant: AttentionVariant, size: int | None = None):
    """Response of the attention spatial branch, all kernels set to ones, to a
    centred unit impulse on a single-channel plane."""
    attn = Attention("probe", 1, variant, bias=False)
    span = variant.dilation * (variant.kernel - 1) + variant.kernel
    size = size or 2 * span + 1
    x = np.zeros((1, 1, size, size))
    x[0, 0, size // 2, size // 2] = 1.0
    p = {}
    for conv in attn.spatial:
        for name, shape in conv.shapes():
            p[name] = np.ones(shape)
    return attn.branch(tensor, p, x)[0, 0]
