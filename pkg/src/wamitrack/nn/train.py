"""Mini-batch training loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .network import Network, sgd_step

__all__ = ["TrainConfig", "train", "accuracy", "write_training_log"]

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    decay_at: float = 2.0 / 3.0  # fraction of epochs after which lr drops by 10x
    seed: int = 0


def accuracy(net: Network, out: np.ndarray, target: np.ndarray) -> float:
    target = np.asarray(target).reshape(out.shape)
    if net.loss == "cross_entropy":
        return float(np.mean(out.argmax(axis=1) == target.argmax(axis=1)))
    return float(np.mean((out > 0.5) == (target > 0.5)))


def train(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig | None = None,
          callback=None) -> list[tuple[int, float, float]]:
    """Train ``net`` in place; returns ``(epoch, mean loss, train accuracy)`` rows.

    Batches smaller than 2 are skipped because batch normalisation needs a
    spread. ``callback(epoch, loss, acc)`` is called after each epoch.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y, dtype=net.dtype)
    if len(x) != len(y):
        raise ValueError("inputs and targets differ in length")
    rng = np.random.default_rng(cfg.seed)
    decay_epoch = int(np.ceil(cfg.epochs * cfg.decay_at))
    history = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr * (0.1 if epoch >= decay_epoch else 1.0)
        order = rng.permutation(len(x))
        losses, hits, seen = [], 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            out = net.forward(x[idx], training=True)
            losses.append(net.backward(y[idx]) * len(idx))
            hits += accuracy(net, out, y[idx]) * len(idx)
            seen += len(idx)
            sgd_step(net, lr, cfg.momentum)
        row = (epoch + 1, float(sum(losses) / max(seen, 1)), float(hits / max(seen, 1)))
        history.append(row)
        log.info("epoch %d loss %.5f acc %.4f", *row)
        if callback is not None:
            callback(*row)
    return history


def write_training_log(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss", "accuracy"])
        for epoch, loss, acc in history:
            w.writerow([epoch, f"{loss:.6f}", f"{acc:.6f}"])
