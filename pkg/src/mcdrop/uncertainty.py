"""Monte-Carlo dropout sampling and the statistics built on it.

The feature part runs once; the head runs ``T`` times with masks keyed by
``(base_seed, t)``. The samples give a per-class predictive mean and
variance, a normal confidence interval around the mean, and the optimistic
(upper bound) and pessimistic (lower bound) scores.

By default the variance is the empirical one. Passing ``tau`` adds the
model-precision term ``1/tau`` to every variance entry; ``literal_mean_offset``
additionally adds it to the mean, which is the literal reading of the
original formulation and is kept only for fidelity experiments.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from mcdrop import rng
from mcdrop.errors import DimensionError, NumericalError
from mcdrop.network import DropoutMask, SplitNetwork, compute_features, forward_head, validate_split
from mcdrop.tensor import SQRT_NEGATIVE_TOLERANCE, sqrt

DEFAULT_ALPHA = 0.01


# --------------------------------------------------------------------------
# inverse normal CDF

# Acklam's rational approximation (relative error ~1.2e-9), polished with one
# Halley step against erfc to near machine precision.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02, 1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02, 6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00, -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00, 3.754408661907416e00)
_P_LOW = 0.02425


def _acklam(q: float) -> float:
    if q < _P_LOW:
        r = math.sqrt(-2.0 * math.log(q))
        num = ((((_C[0] * r + _C[1]) * r + _C[2]) * r + _C[3]) * r + _C[4]) * r + _C[5]
        return num / ((((_D[0] * r + _D[1]) * r + _D[2]) * r + _D[3]) * r + 1.0)
    if q > 1.0 - _P_LOW:
        return -_acklam(1.0 - q)
    r = q - 0.5
    s = r * r
    num = (((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * r
    return num / (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0)


def normal_quantile(q: float) -> float:
    """Inverse standard-normal CDF for ``0 < q < 1``."""
    q = float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {q}")
    if q == 0.5:
        return 0.0
    # evaluate in the lower tail and mirror, so z(q) = -z(1-q) exactly
    lower = min(q, 1.0 - q)
    x = _acklam(lower)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - lower
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    x = x - u / (1.0 + x * u / 2.0)
    return x if q < 0.5 else -x


# --------------------------------------------------------------------------
# configuration types


class BehaviorMode(str, enum.Enum):
    PLAIN = "plain"
    MEAN = "mean"
    OPTIMISTIC = "optimistic"
    PESSIMISTIC = "pessimistic"


@dataclass(frozen=True)
class ConfidenceConfig:
    alpha: float = DEFAULT_ALPHA
    z: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        object.__setattr__(self, "z", normal_quantile(1.0 - self.alpha / 2.0))


@dataclass(frozen=True)
class PrecisionParams:
    keep_prob: float
    length_scale_sq: float
    sample_count: int
    weight_decay: float

    def __post_init__(self):
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        for name in ("length_scale_sq", "sample_count", "weight_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def model_precision(params: PrecisionParams) -> float:
    """tau = p * l^2 / (2 N lambda)."""
    return params.keep_prob * params.length_scale_sq / (2.0 * params.sample_count * params.weight_decay)


@dataclass(frozen=True, eq=False)
class PredictiveStats:
    mean: np.ndarray
    variance: np.ndarray
    std: np.ndarray
    T: int
    tau_inverse_offset: float = 0.0


# --------------------------------------------------------------------------
# sampling and statistics


def sample_predictions(
    net: SplitNetwork,
    x,
    T: int,
    p_drop: float,
    base_seed: int,
    threads: int = 1,
) -> np.ndarray:
    """Run ``T`` dropout passes over cached features.

    ``x`` may be one sample or a batch. Returns an array with a leading axis
    of length ``T`` in pass order; pass ``t`` uses the mask keyed by
    ``(base_seed, t)``, shared by every sample in the batch.
    """
    validate_split(net)
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not 0.0 <= p_drop < 1.0:
        raise ValueError(f"p_drop must lie in [0, 1), got {p_drop}")
    features = compute_features(net, x)
    keep = 1.0 - p_drop

    def one(t: int) -> np.ndarray:
        return forward_head(net, features, DropoutMask.sample(net, keep, base_seed, t, rng.TEST_DROPOUT))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(one, range(T)))
    else:
        outs = [one(t) for t in range(T)]
    return np.stack(outs)


def predictive_stats(samples, tau: float | None = None, literal_mean_offset: bool = False) -> PredictiveStats:
    """Per-class predictive mean and variance over the leading sample axis.

    Both moments are taken about the first sample, so identical samples give
    back that sample exactly and zero variance. The variance is the
    population second moment minus the squared mean, clamped at zero; anything below ``-1e-12`` before the clamp is treated
    as a bug and raises :class:`NumericalError`.
    """
    try:
        s = np.asarray(samples, dtype=np.float64)
    except ValueError as exc:
        raise DimensionError(f"samples have inconsistent lengths: {exc}") from None
    if s.ndim < 2 or s.shape[0] < 1 or s.shape[-1] < 1:
        raise DimensionError(f"expected (T, ..., C) samples with T, C >= 1, got shape {s.shape}")
    T = s.shape[0]
    d = s - s[0]
    shift = d.mean(axis=0)
    mean = s[0] + shift
    var_hat = (d * d).mean(axis=0) - shift * shift
    if np.any(var_hat < -SQRT_NEGATIVE_TOLERANCE):
        raise NumericalError(f"empirical variance {var_hat.min():.3e} below tolerance")
    var_hat = np.maximum(var_hat, 0.0)
    offset = 0.0
    if tau is not None:
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        offset = 1.0 / tau
        var_hat = var_hat + offset
        if literal_mean_offset:
            mean = mean + offset
    elif literal_mean_offset:
        raise ValueError("literal_mean_offset needs tau")
    return PredictiveStats(mean=mean, variance=var_hat, std=sqrt(var_hat), T=T, tau_inverse_offset=offset)


def confidence_interval(stats: PredictiveStats, conf: ConfidenceConfig) -> tuple[np.ndarray, np.ndarray]:
    """Normal interval ``mean -/+ z * std / sqrt(T)``.

    Bounds are rounded outward: a positive half-width smaller than half an
    ulp of the mean still moves each bound one ulp away from it.
    """
    half = conf.z * stats.std / math.sqrt(stats.T)
    lo, hi = stats.mean - half, stats.mean + half
    lost = half > 0
    lo = np.where(lost & (lo >= stats.mean), np.nextafter(stats.mean, -np.inf), lo)
    hi = np.where(lost & (hi <= stats.mean), np.nextafter(stats.mean, np.inf), hi)
    return lo, hi


def required_T(mean: float, std: float, conf: ConfidenceConfig, rel_tolerance: float = 1.0) -> int:
    """Passes needed so the interval half-width is ``rel_tolerance * |mean|``."""
    if mean == 0:
        raise ZeroDivisionError("required_T is undefined for a zero mean")
    if std < 0:
        raise ValueError(f"std must be nonnegative, got {std}")
    if not rel_tolerance > 0:
        raise ValueError(f"rel_tolerance must be positive, got {rel_tolerance}")
    return max(1, math.ceil((conf.z * std / (rel_tolerance * mean)) ** 2))


def apply_behavior(
    stats: PredictiveStats | None,
    conf: ConfidenceConfig,
    mode: BehaviorMode | str,
    plain: np.ndarray | None = None,
) -> np.ndarray:
    """Scores under one behavior; optimistic/pessimistic are the CI bounds."""
    mode = BehaviorMode(mode)
    if mode is BehaviorMode.PLAIN:
        if plain is None:
            raise ValueError("plain mode needs the deterministic output")
        return np.asarray(plain, dtype=np.float64)
    if stats is None:
        raise ValueError(f"{mode.value} mode needs predictive statistics")
    if mode is BehaviorMode.MEAN:
        return stats.mean
    lower, upper = confidence_interval(stats, conf)
    return upper if mode is BehaviorMode.OPTIMISTIC else lower
