"""LCAN network assembly, parameter store, initialization and weight files."""
from __future__ import annotations

import os
import struct
import tempfile
from collections.abc import Mapping
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor
from .blocks import MARB, AttentionVariant, Conv, MBSConv
from .errors import ConfigError, FormatError, NumericError

FORMAT_VERSION = 1
MAGIC = b"LCW1"
CONV_BLOCKS = {"mbsconv": (1, 3, 5), "bsconv": (3,)}


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 2
    channels: int = 48
    blocks: int = 8
    replication: int = 3
    attention: AttentionVariant = field(default_factory=AttentionVariant)
    distill_ratio: float = 0.5
    stages: int = 3
    conv_block: str = "mbsconv"
    bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.attention, str):
            object.__setattr__(self, "attention", AttentionVariant(self.attention))
        self.validate()

    def validate(self):
        c = self.channels
        if self.scale < 1:
            raise ConfigError(f"scale={self.scale} violates: s >= 1")
        if c < 3 or c % 3:
            raise ConfigError(f"channels={c} violates: C divisible by 3")
        if c * self.distill_ratio != int(c * self.distill_ratio) or c * self.distill_ratio < 1:
            raise ConfigError(f"channels={c}, distill_ratio={self.distill_ratio} violates: C*distill_ratio whole")
        if self.conv_block not in CONV_BLOCKS:
            raise ConfigError(f"conv_block={self.conv_block!r} not in {sorted(CONV_BLOCKS)}")
        n_kernels = len(CONV_BLOCKS[self.conv_block])
        if int(c * self.distill_ratio) % n_kernels:
            raise ConfigError(
                f"channels={c} violates: distilled width C*distill_ratio divisible by {n_kernels}"
            )
        for name in ("blocks", "replication", "stages"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}={getattr(self, name)} must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    def canonical(self) -> str:
        """Architecture fields as sorted ``key=value`` lines; the seed is excluded."""
        fields = {
            "scale": self.scale,
            "channels": self.channels,
            "blocks": self.blocks,
            "replication": self.replication,
            "attention": self.attention.kind,
            "attn_kernel": self.attention.kernel,
            "attn_dilation": self.attention.dilation,
            "distill_ratio": repr(float(self.distill_ratio)),
            "stages": self.stages,
            "conv_block": self.conv_block,
            "bias": str(bool(self.bias)).lower(),
        }
        return "".join(f"{k}={fields[k]}\n" for k in sorted(fields))

    @property
    def fingerprint(self) -> int:
        return fnv1a64(self.canonical().encode("utf-8"))

    def with_(self, **changes) -> "ModelConfig":
        return replace(self, **changes)


class LCAN:
    """Layer layout of the network for one config."""

    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        kernels = CONV_BLOCKS[config.conv_block]
        c, b = config.channels, config.bias
        self.shallow = MBSConv("shallow", 3 * config.replication, c, kernels, b)
        self.marbs = [
            MARB(f"marb.{k}", c, config.attention, config.distill_ratio, config.stages, kernels, b)
            for k in range(config.blocks)
        ]
        self.fusion_pw = Conv("fusion.pw", c * config.blocks, c, bias=b)
        self.fusion_conv = MBSConv("fusion.smooth", c, c, kernels, b)
        self.recon = Conv("recon", c, 3 * config.scale**2, (3, 3), bias=b)

    def convs(self) -> list[Conv]:
        layers = list(self.shallow.convs())
        for m in self.marbs:
            layers += m.convs()
        return layers + [self.fusion_pw, *self.fusion_conv.convs(), self.recon]

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [s for conv in self.convs() for s in conv.shapes()]

    def __call__(self, F, p, x):
        f0 = self.shallow(F, p, F.replicate_channels(x, self.config.replication))
        f = f0
        outs = []
        for m in self.marbs:
            f = m(F, p, f)
            outs.append(f)
        fused = self.fusion_conv(F, p, F.gelu(self.fusion_pw(F, p, F.channel_concat(outs))))
        y = self.recon(F, p, F.ewise_add(fused, f0))
        return F.pixel_shuffle(y, self.config.scale)


class ParamStore(Mapping):
    """Ordered name -> tensor mapping with the config fingerprint it was built for."""

    def __init__(self, tensors, fingerprint: int, version: int = FORMAT_VERSION):
        self.tensors = dict(tensors)
        self.fingerprint = fingerprint
        self.version = version

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def __setitem__(self, name, value):
        if name not in self.tensors:
            raise KeyError(name)
        if value.shape != self.tensors[name].shape:
            raise ConfigError(f"{name}: shape {value.shape} != {self.tensors[name].shape}")
        self.tensors[name] = value

    def num_scalars(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.tensors.items()}, self.fingerprint, self.version)

    def equals(self, other: "ParamStore") -> bool:
        """Bit-identical names, shapes and data."""
        if list(self) != list(other) or self.fingerprint != other.fingerprint:
            return False
        return all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes() for k in self
        )

    def check(self, config: ModelConfig):
        if self.fingerprint != config.fingerprint:
            raise FormatError(
                f"config fingerprint mismatch: store {self.fingerprint:#018x}, config {config.fingerprint:#018x}"
            )


def _rng_for(seed: int, name: str) -> np.random.Generator:
    h = fnv1a64(name.encode("utf-8"))
    return np.random.default_rng([seed & 0xFFFFFFFF, seed >> 32, h & 0xFFFFFFFF, h >> 32])


def build(config: ModelConfig) -> ParamStore:
    """Allocate and initialize every parameter.

    Weights are drawn uniformly from +-1/sqrt(fan_in) with a generator keyed
    by (seed, parameter name); biases start at zero. The wider +-sqrt(6/fan_in)
    bound overflows float32: the attention product squares the gain per block.
    """
    tensors = {}
    for name, shape in LCAN(config).shapes():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=tensor.DTYPE)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = _rng_for(config.seed, name).uniform(-bound, bound, shape).astype(tensor.DTYPE)
    return ParamStore(tensors, config.fingerprint)


def _as_batch(lr_image):
    x = np.asarray(lr_image)
    if x.ndim == 3:
        x = x[None]
    return tensor.as_tensor(x, dtype=x.dtype if x.dtype == np.float64 else tensor.DTYPE)


def check_finite(params: Mapping):
    for name, t in params.items():
        if not np.all(np.isfinite(t)):
            raise NumericError(f"parameter {name} has non-finite values")


def forward(params: Mapping, config: ModelConfig, lr_image) -> np.ndarray:
    """Super-resolve ``lr_image`` of shape (3, H, W) or (N, 3, H, W)."""
    x = _as_batch(lr_image)
    if x.shape[1] != 3:
        raise ConfigError(f"expected RGB input, got {x.shape[1]} channels")
    check_finite(params)
    return LCAN(config)(tensor, params, x)


def dihedral(x, k: int, flip: bool):
    """Rotate the spatial plane by k*90 degrees, after an optional horizontal flip."""
    if flip:
        x = x[..., ::-1]
    return np.rot90(x, k, axes=(-2, -1))


def dihedral_inverse(x, k: int, flip: bool):
    x = np.rot90(x, -k, axes=(-2, -1))
    if flip:
        x = x[..., ::-1]
    return x


DIHEDRAL = [(k, flip) for flip in (False, True) for k in range(4)]


def forward_ensemble(params: Mapping, config: ModelConfig, lr_image, fn=None) -> np.ndarray:
    """Self-ensemble: mean of the network over the 8 dihedral transforms, each mapped back.

    ``fn(params, config, x)`` defaults to :func:`forward`.
    """
    fn = fn or forward
    x = _as_batch(lr_image)
    acc = None
    for k, flip in DIHEDRAL:
        xt = np.ascontiguousarray(dihedral(x, k, flip))
        y = dihedral_inverse(fn(params, config, xt), k, flip).astype(np.float64)
        acc = y if acc is None else acc + y
    return (acc / len(DIHEDRAL)).astype(x.dtype)


# weight files -------------------------------------------------------------

def save(params: ParamStore, path):
    """Write the little-endian ``LCW1`` weight format atomically."""
    check_finite(params)
    chunks = [MAGIC, struct.pack("<IQI", params.version, params.fingerprint, len(params))]
    for name, t in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", t.ndim))
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    path = os.fspath(path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def loads(data: bytes, config: ModelConfig | None = None) -> ParamStore:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'LCW1'", 0)
    version, fingerprint, count = struct.unpack("<IQI", take(16, "header"))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    if config is not None and fingerprint != config.fingerprint:
        raise FormatError(
            f"config fingerprint mismatch: file {fingerprint:#018x}, config {config.fingerprint:#018x}", 8
        )
    tensors = {}
    for _ in range(count):
        entry_at = pos
        (n,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = take(n, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("entry name is not valid UTF-8", entry_at + 2) from None
        if name in tensors:
            raise FormatError(f"duplicate entry {name!r}", entry_at)
        (rank,) = struct.unpack("<B", take(1, "rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, "dims"))
        size = int(np.prod(dims, dtype=np.int64))
        raw = take(4 * size, f"data of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(tensor.DTYPE).reshape(dims)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", pos)
    store = ParamStore(tensors, fingerprint, version)
    if config is not None:
        expected = LCAN(config).shapes()
        got = [(k, v.shape) for k, v in tensors.items()]
        if got != expected:
            raise FormatError("parameter names/shapes do not match the config layout", 24)
    return store


def load(path, config: ModelConfig | None = None) -> ParamStore:
    """Read a weight file; with ``config`` the fingerprint and layout are verified."""
    with open(path, "rb") as fh:
        return loads(fh.read(), config)
