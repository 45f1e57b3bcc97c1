"""Adam + reduce-on-plateau training loop for the score-map network."""

from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .loss import DEFAULT_LAMBDA, batch_loss
from .model import FCN

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 16
    lr0: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    min_lr: float = 1e-7
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    plateau_threshold: float = 1e-4
    lam: float = DEFAULT_LAMBDA
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr0 > self.min_lr > 0:
            raise ValueError("need lr0 > min_lr > 0")
        if self.plateau_patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau factor must be in (0, 1)")


class PlateauScheduler:
    """Reduce the learning rate when the monitored loss stops improving.

    A value improves when it is below ``best - threshold``. After ``patience``
    consecutive non-improving epochs the rate is multiplied by ``factor``
    (never below ``min_lr``) and the counter restarts.
    """

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10,
                 threshold: float = 1e-4, min_lr: float = 1e-7):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.num_bad = 0

    def step(self, value: float) -> float:
        """Record one epoch's monitored value; return the rate for the next epoch."""
        if value < self.best - self.threshold:
            self.best = value
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad >= self.patience:
            if self.lr > self.min_lr:
                self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr


def replay_schedule(values: Sequence[float], cfg: TrainConfig = TrainConfig()) -> list[float]:
    """Learning rate used at each epoch given the per-epoch validation losses."""
    sched = PlateauScheduler(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience,
                             cfg.plateau_threshold, cfg.min_lr)
    lrs = []
    for v in values:
        lrs.append(sched.lr)
        sched.step(v)
    return lrs


@dataclass
class AdamState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


def adam_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place bias-corrected Adam update of ``params`` and ``state``."""
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1 - beta1**state.step
    bc2 = 1 - beta2**state.step
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            if g is None:
                g = torch.zeros_like(p)
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + eps))


@dataclass
class EpochRecord:
    epoch: int
    train_total: float
    train_gap: float
    train_patch: float
    val_total: float | None
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def lrs(self) -> list[float]:
        return [e.lr for e in self.epochs]

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_total", "train_gap", "train_patch", "val_total", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_total), repr(e.train_gap), repr(e.train_patch),
                            "" if e.val_total is None else repr(e.val_total), repr(e.lr)])


def evaluate_loss(model: FCN, cubes: np.ndarray, labels: np.ndarray, lam: float = DEFAULT_LAMBDA,
                  batch_size: int = 64) -> float:
    """Mean per-sample total loss in evaluation mode."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(cubes), batch_size):
            x = torch.as_tensor(cubes[i:i + batch_size], dtype=dtype)
            t = torch.as_tensor(labels[i:i + batch_size], dtype=dtype)
            loss, _, _ = batch_loss(model(x), t, lam)
            total += float(loss) * len(x)
    model.train(was_training)
    return total / len(cubes)


def train(model: FCN, train_set: tuple[np.ndarray, np.ndarray],
          val_set: tuple[np.ndarray, np.ndarray] | None, cfg: TrainConfig = TrainConfig()):
    """Train in place and return ``(model, history)``.

    With a validation set the plateau schedule follows the validation loss and
    the lowest-validation-loss weights are restored at the end. Without one the
    rate stays at ``lr0`` and the final weights are kept.
    """
    x_all, y_all = train_set
    if len(x_all) == 0:
        raise ValueError("empty training set")
    if len(x_all) != len(y_all):
        raise ValueError("cube and label counts differ")
    if x_all.shape[1] != model.cfg.input_channels:
        raise ValueError(f"cubes have {x_all.shape[1]} channels, model expects {model.cfg.input_channels}")
    if val_set is not None and len(val_set[0]) == 0:
        val_set = None

    rng = np.random.default_rng(cfg.seed)
    dtype = next(model.parameters()).dtype
    params = [p for p in model.parameters() if p.requires_grad]
    state = AdamState()
    sched = PlateauScheduler(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience,
                             cfg.plateau_threshold, cfg.min_lr)
    history = TrainHistory()
    best_loss, best_state = math.inf, None

    for epoch in range(1, cfg.max_epochs + 1):
        lr = sched.lr
        model.train()
        order = rng.permutation(len(x_all))
        sums = np.zeros(3)
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            x = torch.as_tensor(x_all[idx], dtype=dtype)
            t = torch.as_tensor(y_all[idx], dtype=dtype)
            total, l_gap, l_patch = batch_loss(model(x), t, cfg.lam)
            grads = torch.autograd.grad(total, params)
            adam_step(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            sums += np.array([total.item(), l_gap.item(), l_patch.item()]) * len(idx)
        sums /= len(order)

        val_loss = None
        if val_set is not None:
            val_loss = evaluate_loss(model, val_set[0], val_set[1], cfg.lam)
            if val_loss < best_loss:
                best_loss = val_loss
                best_state = copy.deepcopy(model.state_dict())
                history.best_epoch = epoch
            sched.step(val_loss)
        history.epochs.append(EpochRecord(epoch, *sums.tolist(), val_loss, lr))
        log.info("epoch %d train %.5f val %s lr %.2e", epoch, sums[0],
                 "-" if val_loss is None else f"{val_loss:.5f}", lr)

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        history.best_epoch = cfg.max_epochs
    model.eval()
    return model, history
