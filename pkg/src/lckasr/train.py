"""Desk-scale training loop: L1 loss, Adan, EMA."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .errors import DataError
from .model import LCAN, ModelConfig, ParamStore, build
from .optim import AdanState, EmaState, adan_step, ema_apply, ema_update

log = logging.getLogger(__name__)

TRACE_HEADER = ("iteration", "loss", "learning_rate", "seconds_elapsed")


@dataclass(frozen=True)
class Schedule:
    iters: int = 1_000_000
    batch: int = 64
    patch: int = 48
    lr: float = 5e-3
    betas: tuple[float, float, float] = (0.98, 0.92, 0.99)
    eps: float = 1e-8
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    augment: bool = False


@dataclass
class TraceRow:
    iteration: int
    loss: float
    learning_rate: float
    seconds_elapsed: float


@dataclass
class TrainResult:
    params: ParamStore
    """Bias-corrected EMA weights: the ones to use for inference."""
    raw: ParamStore
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.trace])


def sample_batch(pairs, scale, batch, patch, rng, augment=False):
    """Random aligned LR/HR crops; the LR crop is ``patch`` pixels square."""
    usable = [i for i, (lr, _) in enumerate(pairs) if lr.shape[1] >= patch and lr.shape[2] >= patch]
    if not usable:
        raise DataError(f"patch size {patch} is larger than every LR image")
    lrs, hrs = [], []
    for _ in range(batch):
        lr, hr = pairs[usable[rng.integers(len(usable))]]
        y = int(rng.integers(lr.shape[1] - patch + 1))
        x = int(rng.integers(lr.shape[2] - patch + 1))
        lp = lr[:, y:y + patch, x:x + patch]
        hp = hr[:, y * scale:(y + patch) * scale, x * scale:(x + patch) * scale]
        if augment:
            k, flip = int(rng.integers(4)), bool(rng.integers(2))
            if flip:
                lp, hp = lp[..., ::-1], hp[..., ::-1]
            lp, hp = np.rot90(lp, k, axes=(1, 2)), np.rot90(hp, k, axes=(1, 2))
        lrs.append(lp)
        hrs.append(hp)
    return np.ascontiguousarray(np.stack(lrs)), np.ascontiguousarray(np.stack(hrs))


def loss_and_grads(params, net: LCAN, lr_batch, hr_batch):
    tape = Tape()
    leaves = {name: tape.leaf(value, name) for name, value in params.items()}
    pred = net(tape, leaves, lr_batch)
    loss = tape.l1_loss(pred, hr_batch)
    return float(loss.value), backward(tape, loss)


def train(config: ModelConfig, dataset, schedule: Schedule, params: ParamStore | None = None,
          log_every: int = 0) -> TrainResult:
    """Train from ``params`` (fresh initialization by default).

    ``dataset`` is a sequence of (LR, HR) float32 (3, h, w) pairs with HR
    exactly ``config.scale`` times larger. Sampling is driven by
    ``config.seed``, so runs are deterministic.
    """
    if not dataset:
        raise DataError("empty dataset")
    for lr, hr in dataset:
        if hr.shape[1] != lr.shape[1] * config.scale or hr.shape[2] != lr.shape[2] * config.scale:
            raise DataError(f"HR {hr.shape} is not x{config.scale} of LR {lr.shape}")
    net = LCAN(config)
    params = (params or build(config)).copy()
    start_params = params.copy()
    ema = EmaState.zeros_like(params, schedule.ema_decay)
    state = AdanState(schedule.lr, schedule.betas, schedule.eps, schedule.weight_decay)
    rng = np.random.default_rng(config.seed)
    trace = []
    start = time.perf_counter()
    for it in range(schedule.iters):
        lr_b, hr_b = sample_batch(dataset, config.scale, schedule.batch, schedule.patch, rng, schedule.augment)
        loss, grads = loss_and_grads(params, net, lr_b, hr_b)
        adan_step(params, grads, state)
        ema_update(ema, params)
        trace.append(TraceRow(it, loss, schedule.lr, time.perf_counter() - start))
        if log_every and (it + 1) % log_every == 0:
            log.info("iter %d loss %.5f", it + 1, loss)
    averaged = ema_apply(ema) if ema.updates else start_params
    return TrainResult(averaged, params, trace)


def write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        for r in trace:
            w.writerow([r.iteration, repr(r.loss), repr(r.learning_rate), f"{r.seconds_elapsed:.3f}"])
