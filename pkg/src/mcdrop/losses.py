"""Loss functions and their gradients with respect to the network output."""

from __future__ import annotations

import enum

import numpy as np

from mcdrop.errors import DimensionError, LabelError

CE_EPSILON = 1e-12


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    EUCLIDEAN = "euclidean"


def _check(y: np.ndarray, y_hat: np.ndarray) -> None:
    if y.shape != y_hat.shape:
        raise DimensionError(f"loss: label shape {y.shape} != prediction shape {y_hat.shape}")


def loss_euclidean(y, y_hat) -> float:
    """Half the squared L2 distance, summed over all entries."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check(y, y_hat)
    d = y - y_hat
    return float(np.sum(d * d) / 2.0)


def _check_binary(y: np.ndarray) -> None:
    if not np.all((y == 0.0) | (y == 1.0)):
        raise LabelError("cross-entropy labels must be 0 or 1")


def loss_cross_entropy(y, y_hat) -> float:
    """Binary cross entropy summed over outputs, for sigmoid heads.

    Predictions are clipped to ``[1e-12, 1 - 1e-12]`` first.
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check(y, y_hat)
    _check_binary(y)
    p = np.clip(y_hat, CE_EPSILON, 1.0 - CE_EPSILON)
    return float(-np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def loss_categorical_cross_entropy(y, y_hat) -> float:
    """Multiclass log loss ``-sum(y log y_hat)`` for softmax heads."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    _check(y, y_hat)
    _check_binary(y)
    p = np.clip(y_hat, CE_EPSILON, 1.0)
    return float(-np.sum(y * np.log(p)))
