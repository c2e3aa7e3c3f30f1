"""Top-k error, average precision and a paired permutation test."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from mcdrop import rng
from mcdrop.errors import DimensionError

log = logging.getLogger(__name__)

# permutations drawn per block; bounds memory at ~block * discordant bytes
_BLOCK = 8192


def _ranking(scores: np.ndarray) -> np.ndarray:
    # descending score, ties by ascending index
    return np.argsort(-scores, axis=-1, kind="stable")


def top_k_error(scores, labels, k: int) -> float:
    """Fraction of samples whose true class is not among the top ``k`` scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must be matching matrices")
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k must lie in [1, {scores.shape[1]}], got {k}")
    truth = labels.argmax(axis=1)
    top = _ranking(scores)[:, :k]
    hit = (top == truth[:, None]).any(axis=1)
    return float((~hit).mean())


class UndefinedAPError(ValueError):
    pass


def average_precision(scores, labels) -> float:
    """Non-interpolated AP: mean precision at the rank of each positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must be matching vectors")
    if not labels.any():
        raise UndefinedAPError("average precision needs at least one positive")
    hits = labels[_ranking(scores)]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def per_class_ap(scores, labels) -> list[float | None]:
    """AP per column; ``None`` for classes without positives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} must be matching matrices")
    out: list[float | None] = []
    for c in range(scores.shape[1]):
        try:
            out.append(average_precision(scores[:, c], labels[:, c]))
        except UndefinedAPError:
            log.warning("class %d has no positives; skipped in mAP", c)
            out.append(None)
    return out


def mean_average_precision(scores, labels) -> float:
    aps = [ap for ap in per_class_ap(scores, labels) if ap is not None]
    if not aps:
        raise UndefinedAPError("no class has positive labels")
    return float(np.mean(aps))


@dataclass(frozen=True)
class PermutationConfig:
    sigma_p: float = 0.001
    p_anchor: float = 0.5
    seed: int = 0
    n: int = field(init=False)

    def __post_init__(self):
        if not self.sigma_p > 0:
            raise ValueError(f"sigma_p must be positive, got {self.sigma_p}")
        if not 0.0 < self.p_anchor < 1.0:
            raise ValueError(f"p_anchor must lie in (0, 1), got {self.p_anchor}")
        object.__setattr__(self, "n", permutation_count(self.sigma_p, self.p_anchor))


def permutation_count(sigma_p: float, p_anchor: float = 0.5) -> int:
    """Permutations needed for a p-value standard deviation of ``sigma_p``."""
    # round away representation noise (0.25 / 0.001**2 is 250000.00000000003)
    raw = round(p_anchor * (1.0 - p_anchor) / sigma_p**2, 9)
    return max(1, math.ceil(raw))


@dataclass(frozen=True)
class PermutationResult:
    statistic: float
    n: int
    p_value: float
    seed: int


def paired_permutation_test(correct_a, correct_b, cfg: PermutationConfig) -> PermutationResult:
    """Two-sided sign-swap test on the difference of two error rates.

    Each permutation swaps the paired outcomes of every sample with
    probability 1/2. Samples where both classifiers agree cannot change the
    statistic, so only the discordant pairs are permuted. The p-value uses
    add-one smoothing and is never zero.
    """
    a = np.asarray(correct_a, dtype=np.int64)
    b = np.asarray(correct_b, dtype=np.int64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise DimensionError(f"need two equal-length nonempty outcome lists, got {a.shape} and {b.shape}")
    d = a[a != b] - b[a != b]
    observed = abs(int(d.sum()))
    statistic = observed / a.size
    n = cfg.n
    extreme = 0
    for start in range(0, n, _BLOCK):
        size = min(_BLOCK, n - start)
        if d.size == 0:
            extreme += size
            continue
        swaps = rng.stream(cfg.seed, rng.PERMUTATION, start).integers(0, 2, size=(size, d.size), dtype=np.int8)
        # swapping pair i flips the sign of d_i
        permuted = np.abs(((1 - 2 * swaps.astype(np.int64)) * d).sum(axis=1))
        extreme += int((permuted >= observed).sum())
    return PermutationResult(statistic=statistic, n=n, p_value=(1 + extreme) / (n + 1), seed=cfg.seed)
