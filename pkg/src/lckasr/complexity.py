"""Parameter counts, Multi-Adds and receptive-field probing.

The layer walk here is written out independently of the block classes so
that its totals can be checked against allocated parameter stores and
instrumented forward passes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .blocks import ATTENTION_KINDS, AttentionVariant, impulse_response
from .model import CONV_BLOCKS, ModelConfig

REPORT_HEADER = ("name", "kind", "params", "macs")
VARIANT_HEADER = (
    "variant", "params", "params_k", "multiadds", "multiadds_g",
    "spatial_params_per_channel", "rf_height", "rf_width", "psnr_db",
)
CONVENTIONS = (
    "Multi-Adds count convolution multiply-accumulates only; element-wise products, GELU and pixel shuffle count zero.",
    "Every layer, including the reconstruction conv before pixel shuffle, runs at LR size = output size // scale.",
)


@dataclass(frozen=True)
class LayerRow:
    name: str
    kind: str
    params: int
    macs_per_pixel: int
    macs: int | None = None


@dataclass
class ComplexityReport:
    rows: list[LayerRow]
    fingerprint: int
    canonical: str
    out_h: int | None = None
    out_w: int | None = None
    lr_h: int | None = None
    lr_w: int | None = None

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_macs(self) -> int | None:
        if self.out_h is None:
            return None
        return sum(r.macs for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.name, r.kind, r.params, "" if r.macs is None else r.macs])
        w.writerow(["TOTAL", "", self.total_params, "" if self.total_macs is None else self.total_macs])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"# config fingerprint {self.fingerprint:#018x}"]
        lines += [f"# {line}" for line in self.canonical.splitlines()]
        if self.out_h is not None:
            lines.append(f"# output {self.out_w}x{self.out_h}, trunk (LR) {self.lr_w}x{self.lr_h}")
        width = max(len(r.name) for r in self.rows) if self.rows else 4
        lines.append(f"{'name':<{width}}  {'kind':<17}  {'params':>9}  {'macs':>14}")
        for r in self.rows:
            macs = "" if r.macs is None else f"{r.macs:,}"
            lines.append(f"{r.name:<{width}}  {r.kind:<17}  {r.params:>9,}  {macs:>14}")
        lines.append(f"{'TOTAL':<{width}}  {'':<17}  {self.total_params:>9,}  "
                     f"{'' if self.total_macs is None else format(self.total_macs, ','):>14}")
        lines.append(f"Params: {self.total_params / 1e3:.2f} K")
        if self.total_macs is not None:
            lines.append(f"Multi-Adds: {self.total_macs / 1e9:.2f} G")
        lines += [f"* {c}" for c in CONVENTIONS]
        return "\n".join(lines) + "\n"


def spatial_params_per_channel(variant: AttentionVariant) -> int:
    """Depth-wise kernel weights per channel in the attention branch (no biases)."""
    k = variant.kernel
    return {"lka": 2 * k * k, "lska": 4 * k, "lcka": 4 * k, "none": 0}[variant.kind]


def conv_params(cin: int, cout: int, kh: int = 1, kw: int = 1, groups: int = 1, bias: bool = True) -> int:
    """outC * (inC / groups) * kH * kW, plus outC with a bias."""
    return cout * (cin // groups) * kh * kw + (cout if bias else 0)


def conv_macs(cin: int, cout: int, kh: int, kw: int, groups: int, h: int, w: int) -> int:
    """Multiply-accumulates of one convolution producing an h x w map."""
    return h * w * cout * (cin // groups) * kh * kw


def _layer_rows(config: ModelConfig) -> list[LayerRow]:
    config.validate()
    kernels = CONV_BLOCKS[config.conv_block]
    bias = config.bias
    c = config.channels
    dc = int(c * config.distill_ratio)
    rows: list[LayerRow] = []

    def conv(name, cin, cout, kh=1, kw=1, groups=1):
        per_px = conv_macs(cin, cout, kh, kw, groups, 1, 1)
        if kh == kw == 1 and groups == 1:
            kind = "pointwise"
        elif groups == cin == cout:
            kind = "depthwise"
        else:
            kind = "conv"
        rows.append(LayerRow(name, kind, conv_params(cin, cout, kh, kw, groups, bias), per_px))

    def mbs(name, cin, cout):
        conv(f"{name}.pw", cin, cout)
        g = cout // len(kernels)
        for k in kernels:
            conv(f"{name}.dw{k}", g, g, k, k, g)

    def attention(name):
        v = config.attention
        k = v.kernel
        if v.kind == "none":
            return
        if v.kind == "lka":
            conv(f"{name}.dw", c, c, k, k, c)
            conv(f"{name}.dwd", c, c, k, k, c)
        else:
            order = ["dw_h", "dw_v", "dwd_h", "dwd_v"] if v.kind == "lska" else ["dw_h", "dwd_h", "dw_v", "dwd_v"]
            for part in order:
                kh, kw = (1, k) if part.endswith("_h") else (k, 1)
                conv(f"{name}.{part}", c, c, kh, kw, c)
        conv(f"{name}.pw", c, c)

    mbs("shallow", 3 * config.replication, c)
    for b in range(config.blocks):
        pre = f"marb.{b}"
        for i in range(config.stages):
            conv(f"{pre}.distill{i}", c, dc)
            mbs(f"{pre}.refine{i}", c, c)
        mbs(f"{pre}.last", c, dc)
        conv(f"{pre}.fuse", dc * (config.stages + 1), c)
        attention(f"{pre}.attn")
        conv(f"{pre}.out", c, c)
    conv("fusion.pw", c * config.blocks, c)
    mbs("fusion.smooth", c, c)
    conv("recon", c, 3 * config.scale**2, 3, 3)
    return rows


def count_params(config: ModelConfig) -> ComplexityReport:
    return ComplexityReport(_layer_rows(config), config.fingerprint, config.canonical())


def count_multiadds(config: ModelConfig, out_h: int = 720, out_w: int = 1280) -> ComplexityReport:
    """MACs for an ``out_h`` x ``out_w`` SR output; the trunk runs at (out // scale)."""
    lr_h, lr_w = out_h // config.scale, out_w // config.scale
    rows = [
        LayerRow(r.name, r.kind, r.params, r.macs_per_pixel, r.macs_per_pixel * lr_h * lr_w)
        for r in _layer_rows(config)
    ]
    return ComplexityReport(rows, config.fingerprint, config.canonical(), out_h, out_w, lr_h, lr_w)


@dataclass(frozen=True)
class ReceptiveField:
    height: int
    width: int
    dense: bool


def probe_receptive_field(variant: AttentionVariant) -> ReceptiveField:
    """Bounding box and density of the attention branch's impulse response."""
    if variant.kind == "none":
        return ReceptiveField(1, 1, True)
    resp = impulse_response(variant)
    rows, cols = np.nonzero(resp)
    box = resp[rows.min():rows.max() + 1, cols.min():cols.max() + 1]
    return ReceptiveField(box.shape[0], box.shape[1], bool(np.all(box != 0)))


@dataclass
class VariantRow:
    variant: str
    params: int
    multiadds: int
    spatial_params_per_channel: int
    rf: ReceptiveField
    psnr_db: float | None = None


@dataclass
class VariantTable:
    rows: list[VariantRow] = field(default_factory=list)
    out_h: int = 720
    out_w: int = 1280

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(VARIANT_HEADER)
        for r in self.rows:
            w.writerow([
                r.variant, r.params, f"{r.params / 1e3:.2f}", r.multiadds, f"{r.multiadds / 1e9:.2f}",
                r.spatial_params_per_channel, r.rf.height, r.rf.width,
                "" if r.psnr_db is None else f"{r.psnr_db:.4f}",
            ])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"{'variant':<8} {'Paras (K)':>10} {'Multi-Adds (G)':>15} {'spatial/ch':>11} {'RF':>7} {'PSNR (dB)':>10}"]
        for r in self.rows:
            psnr = "" if r.psnr_db is None else f"{r.psnr_db:.2f}"
            lines.append(
                f"{r.variant:<8} {r.params / 1e3:>10.2f} {r.multiadds / 1e9:>15.2f} "
                f"{r.spatial_params_per_channel:>11} {f'{r.rf.height}x{r.rf.width}':>7} {psnr:>10}"
            )
        lines.append(f"* output {self.out_w}x{self.out_h}")
        lines += [f"* {c}" for c in CONVENTIONS]
        return "\n".join(lines) + "\n"


def compare_variants(config: ModelConfig, out_h: int = 720, out_w: int = 1280,
                     psnr: dict[str, float] | None = None) -> VariantTable:
    """Params, Multi-Adds and receptive field for each attention variant of ``config``."""
    table = VariantTable(out_h=out_h, out_w=out_w)
    for kind in ATTENTION_KINDS:
        variant = AttentionVariant(kind, config.attention.kernel, config.attention.dilation)
        cfg = config.with_(attention=variant)
        rep = count_multiadds(cfg, out_h, out_w)
        table.rows.append(VariantRow(
            kind, rep.total_params, rep.total_macs, spatial_params_per_channel(variant),
            probe_receptive_field(variant), (psnr or {}).get(kind),
        ))
    return table
