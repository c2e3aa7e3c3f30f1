"""Dense float64 array primitives.

Tensors are plain :class:`numpy.ndarray` objects in C (row-major) order with
dtype float64. Every function here returns a new array and never writes to
its inputs.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from mcdrop.errors import DimensionError, NumericalError

# tolerated floating-point noise below zero before sqrt refuses
SQRT_NEGATIVE_TOLERANCE = 1e-12


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64)


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # rows are (n, h', w') positions, columns (c, i, j) patch entries
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    n, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)


def conv2d_valid(x, kernels, bias) -> np.ndarray:
    """Stride-1 valid cross-correlation plus per-output-channel bias.

    ``x`` is CHW (single image) or NCHW (batch); ``kernels`` is KCHW and
    ``bias`` has length K. The output has spatial size (H-kH+1, W-kW+1).
    """
    x = as_tensor(x)
    kernels = as_tensor(kernels)
    bias = as_tensor(bias)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: expected CHW/NCHW input and KCHW kernels, got {x.shape} and {kernels.shape}")
    k, c, kh, kw = kernels.shape
    if x.shape[1] != c:
        raise DimensionError(f"conv2d: input channels {x.shape[1]} != kernel channels {c} ({x.shape} vs {kernels.shape})")
    if kh > x.shape[2] or kw > x.shape[3]:
        raise DimensionError(f"conv2d: kernel {kernels.shape} larger than input {x.shape}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {k} output channels")
    n, _, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    out = _im2col(x, kh, kw) @ kernels.reshape(k, -1).T + bias
    out = np.ascontiguousarray(out.reshape(n, ho, wo, k).transpose(0, 3, 1, 2))
    return out[0] if single else out


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray):
    """Gradients of :func:`conv2d_valid` for a batch.

    Returns ``(grad_x, grad_kernels, grad_bias)``.
    """
    k, c, kh, kw = kernels.shape
    n, _, ho, wo = grad_out.shape
    go = grad_out.transpose(0, 2, 3, 1).reshape(-1, k)
    grad_k = (go.T @ _im2col(x, kh, kw)).reshape(kernels.shape)
    grad_b = go.sum(axis=0)
    dcols = (go @ kernels.reshape(k, -1)).reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    grad_x = np.zeros(x.shape)
    for i in range(kh):
        for j in range(kw):
            grad_x[:, :, i : i + ho, j : j + wo] += dcols[:, :, i, j]
    return grad_x, grad_k, grad_b


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return a * b


def scale(a, s: float) -> np.ndarray:
    return as_tensor(a) * float(s)


def square(a) -> np.ndarray:
    a = as_tensor(a)
    return a * a


def clampmin(a, lo: float) -> np.ndarray:
    return np.maximum(as_tensor(a), float(lo))


def sqrt(a, tolerance: float = SQRT_NEGATIVE_TOLERANCE) -> np.ndarray:
    """Elementwise square root; values in [-tolerance, 0) are treated as 0."""
    a = as_tensor(a)
    if np.any(a < -tolerance):
        raise NumericalError(f"sqrt of negative value {a.min():.3e} (tolerance {tolerance:g})")
    return np.sqrt(np.maximum(a, 0.0))


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "square": square,
    "sqrt": sqrt,
    "clampmin": clampmin,
}


def elementwise(op: str, *args) -> np.ndarray:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(ELEMENTWISE)}") from None
    return fn(*args)
