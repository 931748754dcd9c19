"""Seeded mini-batch SGD with momentum."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from grasplab.nn import autograd as ag
from grasplab.nn.model import LOSS_KINDS, forward_graph, loss_graph


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    loss_kind: str = "cross_entropy"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")

    def to_dict(self):
        return asdict(self)


def epoch_permutation(seed, epoch, n):
    """Batch order for one epoch, from a counter-based generator keyed on (seed, epoch)."""
    bitgen = np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
                              counter=[0, 0, 0, int(epoch)])
    return np.random.Generator(bitgen).permutation(n)


def sgd_train(model, x, y, cfg):
    """Train a copy of ``model`` on (x, y); the input checkpoint is untouched.

    Momentum follows the heavy-ball form ``v <- m v + g; p <- p - lr v``.
    """
    x = np.asarray(x, dtype=model.dtype)
    y = np.asarray(y)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ValueError("inputs and labels differ in length")
    params = [p.copy() for p in model.params]
    if cfg.epochs == 0:
        return model.with_params(params)
    velocity = [np.zeros_like(p) for p in params]
    lr = model.dtype.type(cfg.learning_rate)
    mom = model.dtype.type(cfg.momentum)
    n = len(x)
    for epoch in range(cfg.epochs):
        order = epoch_permutation(cfg.seed, epoch, n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tensors = [ag.Tensor(p, requires_grad=True) for p in params]
            out = forward_graph(model, ag.Tensor(x[idx]), tensors)
            loss = loss_graph(out, y[idx], cfg.loss_kind)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    f"non-finite loss {float(loss.data)} at epoch {epoch}, batch offset {start}")
            loss.backward()
            for p, v, t in zip(params, velocity, tensors):
                v *= mom
                v += t.grad
                p -= lr * v
    return model.with_params(params)
