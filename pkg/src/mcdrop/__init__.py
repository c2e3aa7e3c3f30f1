"""Test-time Monte-Carlo dropout on a small numpy network engine.

The inference path evaluates a deterministic feature part once and the
dropout head ``T`` times, then turns the samples into a predictive mean,
variance, normal confidence interval and optimistic/pessimistic scores.
"""

from mcdrop.network import DropoutMask, SplitNetwork
from mcdrop.uncertainty import (
    BehaviorMode,
    ConfidenceConfig,
    PrecisionParams,
    PredictiveStats,
    apply_behavior,
    confidence_interval,
    model_precision,
    normal_quantile,
    predictive_stats,
    required_T,
    sample_predictions,
)

__all__ = [
    "BehaviorMode",
    "ConfidenceConfig",
    "DropoutMask",
    "PrecisionParams",
    "PredictiveStats",
    "SplitNetwork",
    "apply_behavior",
    "confidence_interval",
    "model_precision",
    "normal_quantile",
    "predictive_stats",
    "required_T",
    "sample_predictions",
]

__version__ = "0.1.0"
