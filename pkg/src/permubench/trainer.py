"""Deterministic few-shot training loop.

One run seed drives three independent streams (init, subset draw, epoch
shuffles), so a (spec, dataset, config, seed) tuple fixes every float in
the returned parameters.  train() accepts a TrainData view that simply has
no test split, which keeps test-set access out of the loop by construction.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics, models
from .data import Dataset, ImageBatch, batches, epoch_seed, fewshot_subset
from .errors import TrainingError, UsageError

DEFAULT_SEEDS = (3, 5, 7, 11, 13)


@dataclass(frozen=True)
class TrainConfig:
    per_class: int = 50
    batch_size: int = 16
    epochs: int = 23
    seeds: tuple = DEFAULT_SEEDS
    lr: float = 1e-3
    optimizer: str = "adam"
    selection: str = "last_epoch"

    def __post_init__(self):
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")
        if self.per_class < 1 or self.batch_size < 1:
            raise UsageError("per_class and batch_size must be >= 1")
        if self.optimizer != "adam":
            raise UsageError(f"unsupported optimizer {self.optimizer!r}")
        if self.selection not in ("last_epoch", "best_val"):
            raise UsageError(f"unknown selection rule {self.selection!r}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainData:
    """The splits train() is allowed to see: no test split on this type."""

    name: str
    num_classes: int
    train: ImageBatch
    val: ImageBatch

    @staticmethod
    def from_dataset(ds: Dataset) -> "TrainData":
        return TrainData(name=ds.name, num_classes=ds.num_classes,
                         train=ds.train, val=ds.val)


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_metric: float):
        self.entries.append({"epoch": epoch, "train_loss": train_loss,
                             "val_metric": val_metric})

    def write(self, path):
        with open(path, "w") as fh:
            for row in self.entries:
                fh.write(json.dumps(row) + "\n")

    @staticmethod
    def read(path) -> "TrainLog":
        log = TrainLog()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log.entries.append(json.loads(line))
        return log


def init_adam(params: dict) -> dict:
    return {
        "t": 0,
        "m": {k: np.zeros_like(t.data) for k, t in params.items()},
        "v": {k: np.zeros_like(t.data) for k, t in params.items()},
    }


def adam_step(params: dict, grads: dict, state: dict, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update applied in place to params and state."""
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state["m"][name]
        v = state["v"][name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype, copy=False)


def _val_metric(spec, params, data: TrainData) -> float:
    fwd = lambda p, x: models.forward(spec, p, x)
    return metrics.evaluate(fwd, params, data.val, num_classes=data.num_classes).value


def train(spec: models.ModelSpec, data: TrainData, cfg: TrainConfig, seed: int):
    """Few-shot training: returns (params, TrainLog) for one run seed."""
    if isinstance(data, Dataset):
        raise UsageError("train() takes a TrainData view; use TrainData.from_dataset")
    run_spec = dataclasses.replace(spec, seed=int(seed))
    params = models.build(run_spec)
    subset = fewshot_subset(data, cfg.per_class, seed)
    state = init_adam(params)
    log = TrainLog()
    best = None

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for bi, b in enumerate(batches(subset, cfg.batch_size, epoch_seed(seed, data.name, epoch))):
            logits = models.forward(run_spec, params, b.images)
            loss = ad.cross_entropy(logits, b.labels)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value}", epoch=epoch, batch=bi)
            ad.backward(loss)
            grads = {k: t.grad for k, t in params.items()}
            adam_step(params, grads, state, cfg.lr)
            losses.append(value)
        val = _val_metric(run_spec, params, data)
        log.append(epoch, float(np.mean(losses)), val)
        if cfg.selection == "best_val" and (best is None or val > best[0]):
            best = (val, {k: ad.Tensor(t.data.copy(), requires_grad=True)
                          for k, t in params.items()})

    if cfg.selection == "best_val":
        params = best[1]
    return params, log
