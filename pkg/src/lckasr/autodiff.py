"""Tape-based reverse-mode differentiation over the tensor kernels.

A :class:`Tape` exposes the same operation names as :mod:`lckasr.tensor`
(``conv2d``, ``gelu``, ``pixel_shuffle``, ...) so that block code written
against an ops namespace runs unchanged in eager or recording mode::

    tape = Tape()
    w = tape.leaf(weight, "conv.weight")
    y = tape.conv2d(tape.constant(x), w, None, geom)
    loss = tape.mean(y)
    grads = backward(tape, loss)   # {"conv.weight": ndarray}
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError


class Var:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray):
        self.tape = tape
        self.id = id
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.value.shape})"


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int
    # maps the output gradient to one gradient (or None) per input
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.values: list[np.ndarray] = []
        self.names: dict[int, str] = {}

    # leaves ---------------------------------------------------------------

    def _new(self, value) -> Var:
        self.values.append(value)
        return Var(self, len(self.values) - 1, value)

    def leaf(self, value, name: str | None = None) -> Var:
        """Register a differentiable input; named leaves are reported by ``backward``."""
        v = self._new(np.asarray(value))
        if name is not None:
            if name in self.names.values():
                raise ConfigError(f"duplicate leaf name {name!r}")
            self.names[v.id] = name
        return v

    def constant(self, value) -> Var:
        return self._new(np.asarray(value))

    def _var(self, x) -> Var:
        if isinstance(x, Var):
            if x.tape is not self:
                raise ConfigError("variable belongs to a different tape")
            return x
        return self.constant(x)

    def _record(self, op, inputs: Sequence[Var], value, backward) -> Var:
        out = self._new(value)
        self.nodes.append(Node(op, tuple(v.id for v in inputs), out.id, backward))
        return out

    # operations -----------------------------------------------------------

    def conv2d(self, x, weight, bias, geom: T.ConvGeometry) -> Var:
        x, weight = self._var(x), self._var(weight)
        ins = [x, weight]
        if bias is not None:
            bias = self._var(bias)
            ins.append(bias)
        value = T.conv2d(x.value, weight.value, None if bias is None else bias.value, geom)
        xv, wv = x.value, weight.value

        def grad(g):
            gx, gw, gb = T.conv2d_grads(xv, wv, g, geom)
            return (gx, gw, gb) if bias is not None else (gx, gw)

        return self._record("conv2d", ins, value, grad)

    def gelu(self, x) -> Var:
        x = self._var(x)
        xv = x.value
        cdf = T.normal_cdf(xv)
        return self._record("gelu", [x], xv * cdf, lambda g: (g * T.gelu_grad(xv, cdf),))

    def pixel_shuffle(self, x, r: int) -> Var:
        x = self._var(x)
        return self._record("pixel_shuffle", [x], T.pixel_shuffle(x.value, r),
                            lambda g: (T.pixel_unshuffle(g, r),))

    def channel_split(self, x, parts) -> list[Var]:
        x = self._var(x)
        pieces = T.channel_split(x.value, parts)
        shape = x.value.shape
        outs = []
        start = 0
        for piece in pieces:
            lo, hi = start, start + piece.shape[1]
            start = hi

            def grad(g, lo=lo, hi=hi):
                full = np.zeros(shape, dtype=g.dtype)
                full[:, lo:hi] = g
                return (full,)

            outs.append(self._record("split", [x], piece, grad))
        return outs

    def channel_concat(self, inputs) -> Var:
        ins = [self._var(t) for t in inputs]
        value = T.channel_concat([t.value for t in ins])
        bounds = np.cumsum([0] + [t.value.shape[1] for t in ins])

        def grad(g):
            return tuple(g[:, a:b] for a, b in zip(bounds[:-1], bounds[1:]))

        return self._record("concat", ins, value, grad)

    def ewise_add(self, a, b) -> Var:
        a, b = self._var(a), self._var(b)
        return self._record("add", [a, b], T.ewise_add(a.value, b.value), lambda g: (g, g))

    def ewise_mul(self, a, b) -> Var:
        a, b = self._var(a), self._var(b)
        av, bv = a.value, b.value
        return self._record("mul", [a, b], T.ewise_mul(av, bv), lambda g: (g * bv, g * av))

    def replicate_channels(self, x, n: int) -> Var:
        x = self._var(x)
        c = x.value.shape[1]

        def grad(g):
            return (g.reshape(g.shape[0], n, c, *g.shape[2:]).sum(axis=1),)

        return self._record("replicate", [x], T.replicate_channels(x.value, n), grad)

    def mean(self, x) -> Var:
        x = self._var(x)
        shape, size = x.value.shape, x.value.size
        value = np.asarray(x.value.mean(dtype=np.float64), dtype=x.value.dtype)
        return self._record("mean", [x], value, lambda g: (np.full(shape, g / size, dtype=x.value.dtype),))

    def l1_loss(self, pred, target) -> Var:
        pred, target = self._var(pred), self._var(target)
        diff = pred.value - target.value
        value = l1_loss(pred.value, target.value)
        size = diff.size

        def grad(g):
            s = np.sign(diff) * (g / size)
            return (s, -s)

        return self._record("l1_loss", [pred, target], value, grad)


def l1_loss(pred, target) -> np.ndarray:
    """Mean absolute error over every element (batch included), as a 0-d array."""
    if pred.shape != target.shape:
        raise ConfigError(f"l1_loss: shape mismatch {pred.shape} vs {target.shape}")
    return np.asarray(np.abs(pred - target).mean(dtype=np.float64), dtype=np.result_type(pred, target))


def _run(tape: Tape, loss: Var) -> dict[int, np.ndarray]:
    if loss.tape is not tape:
        raise ConfigError("loss was recorded on a different tape")
    if loss.value.size != 1 or loss.value.ndim > 1:
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        if node.output > loss.id:
            continue
        g = grads.pop(node.output, None)
        if g is None:
            continue
        for i, gi in zip(node.inputs, node.backward(g)):
            if gi is None:
                continue
            if i in grads:
                grads[i] = grads[i] + gi
            else:
                grads[i] = gi
    return grads


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` for every named leaf; unreached leaves get zeros."""
    grads = _run(tape, loss)
    out = {}
    for vid, name in tape.names.items():
        value = tape.values[vid]
        g = grads.get(vid)
        out[name] = np.zeros_like(value) if g is None else np.asarray(g, dtype=value.dtype).reshape(value.shape)
    return out


def grad(tape: Tape, loss: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Gradients of ``loss`` for arbitrary leaves ``wrt``."""
    grads = _run(tape, loss)
    return [
        np.zeros_like(v.value) if v.id not in grads else np.asarray(grads[v.id]).reshape(v.shape)
        for v in wrt
    ]
