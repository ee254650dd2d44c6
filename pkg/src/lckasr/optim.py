"""Adan optimizer and EMA shadow weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .model import ParamStore


@dataclass
class AdanState:
    """Adan moments for every parameter.

    ``betas`` are decay factors in the (0.98, 0.92, 0.99) convention: ``m``
    averages gradients, ``v`` gradient differences and ``n`` the squared
    Nesterov-corrected gradient ``g + beta2 * (g - g_prev)``.
    """

    lr: float = 5e-3
    betas: tuple[float, float, float] = (0.98, 0.92, 0.99)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    n: dict = field(default_factory=dict)
    prev_grad: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.betas) != 3 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError(f"Adan betas must be three values in [0, 1), got {self.betas}")
        if self.lr < 0 or self.eps < 0 or self.weight_decay < 0:
            raise ConfigError("lr, eps and weight_decay must be non-negative")


def adan_step(params: ParamStore | dict, grads: Mapping[str, np.ndarray], state: AdanState):
    """One Adan update applied in place to ``params``; returns (params, state)."""
    b1, b2, b3 = state.betas
    state.step += 1
    t = state.step
    bc1, bc2, bc3 = 1.0 - b1**t, 1.0 - b2**t, 1.0 - b3**t
    lr, eps, wd = state.lr, state.eps, state.weight_decay
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.n[name] = np.zeros_like(p)
            state.prev_grad[name] = g.copy()
        elif state.m[name].shape != p.shape:
            raise ConfigError(f"{name}: optimizer state shape {state.m[name].shape} != {p.shape}")
        m, v, n = state.m[name], state.v[name], state.n[name]
        diff = g - state.prev_grad[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * diff
        nesterov = g + b2 * diff
        n *= b3
        n += (1.0 - b3) * nesterov * nesterov
        update = (m / bc1 + b2 * v / bc2) / (np.sqrt(n / bc3) + eps)
        new = (p - lr * update) / (1.0 + lr * wd)
        params[name] = new.astype(p.dtype, copy=False)
        state.prev_grad[name] = g.copy()
    return params, state


@dataclass
class EmaState:
    """Shadow weights updated as shadow <- decay * shadow + (1 - decay) * param.

    With ``debias`` the shadow starts at zero and is read out divided by
    1 - decay**updates, so the starting point carries no weight. Otherwise the
    shadow is read out as is.
    """

    shadow: dict
    decay: float = 0.999
    fingerprint: int = 0
    updates: int = 0
    debias: bool = False
    dtypes: dict | None = None

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ConfigError(f"EMA decay must be in [0, 1), got {self.decay}")

    @classmethod
    def from_params(cls, params: ParamStore, decay: float = 0.999) -> "EmaState":
        """Shadow initialized to a copy of ``params``."""
        return cls({k: v.copy() for k, v in params.items()}, decay, params.fingerprint)

    @classmethod
    def zeros_like(cls, params: ParamStore, decay: float = 0.999) -> "EmaState":
        """Zero shadow with bias-corrected read-out; kept in float64 so a constant
        parameter reads back exactly."""
        shadow = {k: np.zeros(v.shape, np.float64) for k, v in params.items()}
        dtypes = {k: v.dtype for k, v in params.items()}
        return cls(shadow, decay, params.fingerprint, debias=True, dtypes=dtypes)


def ema_update(ema: EmaState, params: Mapping[str, np.ndarray]) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * param, written as a step toward
    the parameter so a shadow equal to its parameter stays bit-identical."""
    alpha = 1.0 - ema.decay
    for name, p in params.items():
        s = ema.shadow[name]
        if s.shape != p.shape:
            raise ConfigError(f"{name}: EMA shadow shape {s.shape} != parameter shape {p.shape}")
        s += (alpha * (p - s)).astype(s.dtype, copy=False)
    ema.updates += 1
    return ema


def ema_apply(ema: EmaState) -> ParamStore:
    """The averaged weights as a new store."""
    if not ema.debias:
        return ParamStore({k: v.copy() for k, v in ema.shadow.items()}, ema.fingerprint)
    if ema.updates == 0:
        raise ConfigError("a zero-started EMA has no average before its first update")
    scale = 1.0 / (1.0 - ema.decay**ema.updates)
    dtypes = ema.dtypes or {}
    return ParamStore(
        {k: (v * scale).astype(dtypes.get(k, v.dtype)) for k, v in ema.shadow.items()}, ema.fingerprint
    )
