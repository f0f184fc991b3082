"""Minibatch SGD with heavy-ball momentum and a warmup + cosine schedule."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .datasets import LabeledDataset
from .exceptions import DivergenceError, InvalidInput, ShapeError
from .linalg import RngState
from .model import MLP, init_network, loss_and_grad, predict

__all__ = ["PRESETS", "TrainConfig", "TrainLog", "evaluate", "fit_network", "lr_at", "preset", "train"]


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 4000
    batch_size: int = 128
    peak_lr: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup_frac: float = 0.05
    seed: int = 0
    eval_every: int = 200
    track_effrank: bool = True

    def validate(self) -> None:
        if self.steps < 0:
            raise InvalidInput("steps must be >= 0")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if not self.peak_lr > 0:
            raise InvalidInput("peak_lr must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidInput("momentum must lie in [0, 1)")
        if not 0 < self.warmup_frac < 1:
            raise InvalidInput("warmup_frac must lie in (0, 1)")
        if self.eval_every < 1:
            raise InvalidInput("eval_every must be >= 1")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InvalidInput(f"unknown training options: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


# Hyperparameter grids: rich lr {0.5, 1.0}, lazy lr {0.01, 0.05},
# batch {128, 256}, weight decay {0, 1e-4}. Presets take the first entry
# unless named otherwise.
PRESETS = {
    "rich": TrainConfig(peak_lr=0.5),
    "rich-lr1": TrainConfig(peak_lr=1.0),
    "lazy": TrainConfig(peak_lr=0.01),
    "lazy-lr05": TrainConfig(peak_lr=0.05),
    "rich-full": TrainConfig(steps=20000, peak_lr=0.5, eval_every=1000),
    "lazy-full": TrainConfig(steps=20000, peak_lr=0.01, eval_every=1000),
}

GRID = {
    "batch_size": (128, 256),
    "peak_lr": {"rich": (0.5, 1.0), "lazy": (0.01, 0.05)},
    "weight_decay": (0.0, 1e-4),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise InvalidInput(f"unknown training preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides)


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup to ``peak_lr`` then cosine decay to 0 at the final step."""
    warm = int(round(config.warmup_frac * config.steps))
    if step < warm:
        return config.peak_lr * step / warm
    span = config.steps - 1 - warm
    t = (step - warm) / span if span > 0 else 0.0
    return config.peak_lr * 0.5 * (1.0 + math.cos(math.pi * min(t, 1.0)))


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)

    COLUMNS = ("step", "train_loss", "train_acc", "val_acc", "effrank_W", "lr")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow({k: repr(r[k]) if isinstance(r[k], float) else r[k] for k in self.COLUMNS})
        return buf.getvalue()


def evaluate(net: MLP, data: LabeledDataset) -> float:
    """Fraction of rows whose predicted class equals the label."""
    if data.n == 0:
        raise InvalidInput("empty dataset")
    return float(np.mean(predict(net, data.X) == data.y))


def _record(net, data, val, config, step, lr):
    from .analysis import effective_rank

    loss, _ = loss_and_grad(net, data.X, data.y, config.weight_decay)
    return {
        "step": step,
        "train_loss": loss,
        "train_acc": evaluate(net, data),
        "val_acc": evaluate(net, val) if val is not None else float("nan"),
        "effrank_W": effective_rank(net.W) if config.track_effrank and np.any(net.W) else float("nan"),
        "lr": lr,
    }


def train(
    net: MLP,
    data: LabeledDataset,
    config: TrainConfig,
    val: Optional[LabeledDataset] = None,
):
    """Train a copy of ``net``; returns ``(trained_net, TrainLog)``.

    Update rule per step: ``v <- momentum * v - lr * g``; ``theta <- theta + v``.
    Minibatches come from epoch-wise shuffles of a stream derived from
    ``config.seed``. The input network is not modified.
    """
    config.validate()
    if net.d != data.d:
        raise ShapeError(f"network expects d={net.d}, data has d={data.d}")
    if net.c != data.num_classes:
        raise ShapeError(f"network has {net.c} outputs, data has {data.num_classes} classes")
    net = net.copy()
    log = TrainLog()
    if config.steps == 0:
        return net, log

    gen = RngState(config.seed, "train/shuffle").generator()
    n = data.n
    bs = min(config.batch_size, n)
    vW = np.zeros_like(net.W)
    vb = np.zeros_like(net.b)
    vA = np.zeros_like(net.A)
    order = gen.permutation(n)
    pos = 0
    log.records.append(_record(net, data, val, config, 0, lr_at(config, 0)))

    for step in range(config.steps):
        if pos + bs > n:
            order = gen.permutation(n)
            pos = 0
        idx = order[pos : pos + bs]
        pos += bs
        lr = lr_at(config, step)
        loss, g = loss_and_grad(net, data.X[idx], data.y[idx], config.weight_decay)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}", log=log)
        log.batch_losses.append(loss)
        vW *= config.momentum
        vW -= lr * g.dW
        vb *= config.momentum
        vb -= lr * g.db
        vA *= config.momentum
        vA -= lr * g.dA
        net.W += vW
        net.b += vb
        net.A += vA
        done = step + 1
        if done % config.eval_every == 0 or done == config.steps:
            rec = _record(net, data, val, config, done, lr)
            if not math.isfinite(rec["train_loss"]):
                raise DivergenceError(f"non-finite loss after step {done}", log=log)
            log.records.append(rec)
    return net, log


def fit_network(
    data: LabeledDataset,
    regime: str,
    config: TrainConfig,
    m: int = 100,
    val: Optional[LabeledDataset] = None,
):
    """Initialize a fresh network from ``config.seed`` and train it."""
    net = init_network(regime, m, data.d, data.num_classes, RngState(config.seed, "init"))
    return train(net, data, config, val)
