"""Mini-batch SGD with weight decay for split networks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from mcdrop import rng
from mcdrop.datasets import augment
from mcdrop.errors import ConfigError, DimensionError, DivergenceError
from mcdrop.losses import (  # noqa: F401  (re-exported)
    LossKind,
    loss_categorical_cross_entropy,
    loss_cross_entropy,
    loss_euclidean,
)
from mcdrop.network import DropoutMask, SplitNetwork, backward, validate_split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    batch_size: int = 32
    iterations: int = 2000
    # (iteration, factor): from that iteration on the rate is multiplied by factor
    lr_drop: tuple[tuple[int, float], ...] = ()
    dropout_rate_train: float = 0.5
    base_seed: int = 0
    loss: LossKind = LossKind.CROSS_ENTROPY
    noise_sigma: float = 0.0
    max_translate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "loss", LossKind(self.loss))
        object.__setattr__(self, "lr_drop", tuple((int(i), float(f)) for i, f in self.lr_drop))
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 <= self.dropout_rate_train < 1.0:
            raise ConfigError(f"dropout_rate_train must lie in [0, 1), got {self.dropout_rate_train}")

    def rate_at(self, iteration: int) -> float:
        lr = self.learning_rate
        for start, factor in self.lr_drop:
            if iteration >= start:
                lr *= factor
        return lr


@dataclass
class TrainResult:
    net: SplitNetwork
    losses: list[float] = field(default_factory=list)


def sgd_step(params, grads, learning_rate: float, weight_decay: float = 0.0):
    """``w <- w - lr * (g + wd * w)`` for weights; biases are not decayed."""
    out = []
    for p, g in zip(params, grads):
        if p is None:
            out.append(None)
            continue
        q = {}
        for name, w in p.items():
            if g[name].shape != w.shape:
                raise DimensionError(f"gradient {name} shape {g[name].shape} != weight shape {w.shape}")
            decay = weight_decay if name == "W" else 0.0
            q[name] = w - learning_rate * (g[name] + decay * w)
        out.append(q)
    return out


def train(net: SplitNetwork, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Run ``cfg.iterations`` SGD steps; every random choice is seeded."""
    validate_split(net)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0 or y.shape[0] != n:
        raise ConfigError(f"need a nonempty dataset with matching labels, got {x.shape} and {y.shape}")
    batch = min(cfg.batch_size, n)
    keep = 1.0 - cfg.dropout_rate_train
    augmenting = cfg.noise_sigma > 0 or cfg.max_translate > 0
    params = list(net.params)
    losses: list[float] = []
    for it in range(cfg.iterations):
        idx = rng.stream(cfg.base_seed, rng.TRAIN_BATCHES, it).choice(n, size=batch, replace=False)
        xb = x[idx]
        if augmenting:
            xb = np.stack([
                augment(s, cfg.noise_sigma, cfg.max_translate, cfg.base_seed, it * batch + j) for j, s in enumerate(xb)
            ])
        current = net.with_params(params)
        mask = None
        if net.dropout_indices and keep < 1.0:
            mask = DropoutMask.sample(current, keep, cfg.base_seed, it, rng.TRAIN_DROPOUT, batch=batch)
        value, grads = backward(current, xb, y[idx], cfg.loss, mask)
        lr = cfg.rate_at(it)
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite batch loss at iteration {it} (learning rate {lr:g})")
        losses.append(value)
        params = sgd_step(params, grads, lr, cfg.weight_decay)
        if it % 500 == 0:
            log.debug("iteration %d loss %.6f lr %g", it, value, lr)
    return TrainResult(net.with_params(params), losses)
