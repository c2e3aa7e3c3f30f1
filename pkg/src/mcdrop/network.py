"""Layers, the split feature/head network and dropout masks.

A :class:`SplitNetwork` is an ordered list of layers cut into a feature part
(deterministic, evaluated once per input and cached) and a head part (where
dropout lives, evaluated once per Monte-Carlo pass). Activations always
carry a leading batch axis internally; the public forward functions also
accept a single unbatched sample and return an unbatched result.

Dropout uses the inverted convention: surviving activations are multiplied
by ``1 / keep_prob`` so a pass with an all-ones mask is exactly the plain
deterministic pass.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from mcdrop import rng
from mcdrop.errors import ConfigError, DimensionError, SplitViolationError
from mcdrop.losses import LossKind, loss_categorical_cross_entropy, loss_cross_entropy, loss_euclidean
from mcdrop.tensor import as_tensor, conv2d_backward, conv2d_valid

Shape = tuple[int, ...]

_SIGMOID_LO = np.finfo(np.float64).tiny
_SIGMOID_HI = np.nextafter(1.0, 0.0)


# --------------------------------------------------------------------------
# layer specifications


@dataclass(frozen=True)
class Dense:
    """Fully connected layer; inputs of any shape are flattened first."""

    units: int
    kind = "dense"

    def out_shape(self, in_shape: Shape) -> Shape:
        return (self.units,)

    def param_shapes(self, in_shape: Shape) -> dict[str, Shape]:
        return {"W": (math.prod(in_shape), self.units), "b": (self.units,)}

    def fans(self, in_shape: Shape) -> tuple[int, int]:
        return math.prod(in_shape), self.units

    def flops(self, in_shape: Shape) -> int:
        return 2 * math.prod(in_shape) * self.units

    def forward(self, p, x):
        flat = x.reshape(x.shape[0], -1)
        return flat @ p["W"] + p["b"], (x.shape, flat)

    def backward(self, p, cache, gy):
        shape, flat = cache
        grads = {"W": flat.T @ gy, "b": gy.sum(axis=0)}
        return (gy @ p["W"].T).reshape(shape), grads


@dataclass(frozen=True)
class Conv:
    """Stride-1 valid convolution with ``channels`` square kernels."""

    channels: int
    kernel: int = 3
    kind = "conv"

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise DimensionError(f"conv expects a CHW input, got {in_shape}")
        c, h, w = in_shape
        if self.kernel > h or self.kernel > w:
            raise DimensionError(f"conv kernel {self.kernel} larger than input {in_shape}")
        return (self.channels, h - self.kernel + 1, w - self.kernel + 1)

    def param_shapes(self, in_shape: Shape) -> dict[str, Shape]:
        return {"W": (self.channels, in_shape[0], self.kernel, self.kernel), "b": (self.channels,)}

    def fans(self, in_shape: Shape) -> tuple[int, int]:
        k2 = self.kernel * self.kernel
        return in_shape[0] * k2, self.channels * k2

    def flops(self, in_shape: Shape) -> int:
        _, h, w = self.out_shape(in_shape)
        return 2 * self.channels * in_shape[0] * self.kernel**2 * h * w

    def forward(self, p, x):
        return conv2d_valid(x, p["W"], p["b"]), x

    def backward(self, p, x, gy):
        gx, gw, gb = conv2d_backward(x, p["W"], gy)
        return gx, {"W": gw, "b": gb}


@dataclass(frozen=True)
class ReLU:
    kind = "relu"

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, p, x):
        return np.maximum(x, 0.0), x > 0.0

    def backward(self, p, positive, gy):
        return gy * positive, {}


@dataclass(frozen=True)
class MaxPool2x2:
    """2x2 max pooling with stride 2; an odd trailing row/column is dropped."""

    kind = "maxpool2x2"

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3 or in_shape[1] < 2 or in_shape[2] < 2:
            raise DimensionError(f"maxpool2x2 expects CHW with H, W >= 2, got {in_shape}")
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    def forward(self, p, x):
        n, c, h, w = x.shape
        ho, wo = h // 2, w // 2
        blocks = x[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, 4)
        idx = blocks.argmax(axis=-1)  # first maximum wins ties
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0], (x.shape, idx)

    def backward(self, p, cache, gy):
        shape, idx = cache
        n, c, h, w = shape
        ho, wo = h // 2, w // 2
        routed = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(routed, idx[..., None], gy[..., None], axis=-1)
        routed = routed.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)
        gx = np.zeros(shape)
        gx[:, :, : 2 * ho, : 2 * wo] = routed
        return gx, {}


@dataclass(frozen=True)
class GlobalMaxPool:
    """Per-channel maximum over all spatial positions: CHW -> C."""

    kind = "globalmaxpool"

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 3:
            raise DimensionError(f"globalmaxpool expects CHW, got {in_shape}")
        return (in_shape[0],)

    def forward(self, p, x):
        n, c = x.shape[:2]
        flat = x.reshape(n, c, -1)
        idx = flat.argmax(axis=-1)
        return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], (x.shape, idx)

    def backward(self, p, cache, gy):
        shape, idx = cache
        n, c = shape[:2]
        gx = np.zeros((n, c, math.prod(shape[2:])))
        np.put_along_axis(gx, idx[..., None], gy[..., None], axis=-1)
        return gx.reshape(shape), {}


@dataclass(frozen=True)
class Maxout:
    """Maximum over consecutive groups of ``group_size`` units."""

    group_size: int = 2
    kind = "maxout"

    def out_shape(self, in_shape: Shape) -> Shape:
        if self.group_size < 2:
            raise DimensionError(f"maxout group size must be >= 2, got {self.group_size}")
        if len(in_shape) != 1 or in_shape[0] % self.group_size:
            raise DimensionError(f"maxout({self.group_size}) does not divide input width {in_shape}")
        return (in_shape[0] // self.group_size,)

    def forward(self, p, x):
        groups = x.reshape(x.shape[0], -1, self.group_size)
        idx = groups.argmax(axis=-1)
        return np.take_along_axis(groups, idx[..., None], axis=-1)[..., 0], (x.shape, idx)

    def backward(self, p, cache, gy):
        shape, idx = cache
        gx = np.zeros((shape[0], shape[1] // self.group_size, self.group_size))
        np.put_along_axis(gx, idx[..., None], gy[..., None], axis=-1)
        return gx.reshape(shape), {}


@dataclass(frozen=True)
class Dropout:
    """Placeholder; the rate is chosen at run time and the mask passed in."""

    kind = "dropout"

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, p, x, scaled_mask):
        return x * scaled_mask, scaled_mask

    def backward(self, p, scaled_mask, gy):
        return gy * scaled_mask, {}


@dataclass(frozen=True)
class Softmax:
    kind = "softmax"

    def out_shape(self, in_shape: Shape) -> Shape:
        if len(in_shape) != 1:
            raise DimensionError(f"softmax expects a vector input, got {in_shape}")
        return in_shape

    def forward(self, p, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=1, keepdims=True)
        return s, s

    def backward(self, p, s, gy):
        return s * (gy - np.sum(gy * s, axis=1, keepdims=True)), {}


@dataclass(frozen=True)
class Sigmoid:
    kind = "sigmoid"

    def out_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, p, x):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        # saturated logits would round to exactly 0 or 1
        s = np.clip(s, _SIGMOID_LO, _SIGMOID_HI)
        return s, s

    def backward(self, p, s, gy):
        return gy * s * (1.0 - s), {}


Layer = Dense | Conv | ReLU | MaxPool2x2 | GlobalMaxPool | Maxout | Dropout | Softmax | Sigmoid

LAYER_KINDS = {cls.kind: cls for cls in (Dense, Conv, ReLU, MaxPool2x2, GlobalMaxPool, Maxout, Dropout, Softmax, Sigmoid)}
ACTIVATIONS = (Softmax, Sigmoid)


def layer_to_dict(layer: Layer) -> dict:
    return {"kind": layer.kind, **dataclasses.asdict(layer)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    try:
        cls = LAYER_KINDS[d.pop("kind")]
    except KeyError as exc:
        raise ConfigError(f"unknown or missing layer kind in {d!r}") from exc
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad fields for layer {cls.kind}: {exc}") from None


def has_params(layer: Layer) -> bool:
    return isinstance(layer, (Dense, Conv))


def shape_chain(input_shape: Shape, layers: Sequence[Layer]) -> list[Shape]:
    """Input shape of every layer followed by the network output shape."""
    shapes = [tuple(input_shape)]
    for i, layer in enumerate(layers):
        try:
            shapes.append(tuple(layer.out_shape(shapes[-1])))
        except DimensionError as exc:
            raise DimensionError(f"layer {i} ({layer.kind}): {exc}") from None
    return shapes


# --------------------------------------------------------------------------
# network


@dataclass(frozen=True, eq=False)
class SplitNetwork:
    """Layer list with a split index and one parameter dict per layer.

    ``layers[:split]`` is the feature part, ``layers[split:]`` the head.
    Parameter arrays are read-only; updates build a new network.
    """

    input_shape: Shape
    layers: tuple[Layer, ...]
    split: int
    params: tuple[dict[str, np.ndarray] | None, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        frozen = []
        for p in self.params:
            if p is None:
                frozen.append(None)
                continue
            q = {}
            for name, arr in p.items():
                arr = as_tensor(arr)
                if arr is p[name]:
                    arr = arr.copy()
                arr.setflags(write=False)
                q[name] = arr
            frozen.append(q)
        object.__setattr__(self, "params", tuple(frozen))
        if len(self.params) != len(self.layers):
            raise ConfigError(f"{len(self.params)} parameter entries for {len(self.layers)} layers")
        if not 0 <= self.split <= len(self.layers):
            raise ConfigError(f"split index {self.split} outside [0, {len(self.layers)}]")

    @property
    def feature_layers(self) -> tuple[Layer, ...]:
        return self.layers[: self.split]

    @property
    def head_layers(self) -> tuple[Layer, ...]:
        return self.layers[self.split :]

    @property
    def shapes(self) -> list[Shape]:
        return shape_chain(self.input_shape, self.layers)

    @property
    def feature_shape(self) -> Shape:
        return self.shapes[self.split]

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    @property
    def dropout_indices(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Dropout)]

    @property
    def activation(self) -> str | None:
        last = self.layers[-1] if self.layers else None
        return last.kind if isinstance(last, ACTIVATIONS) else None

    def with_params(self, params) -> "SplitNetwork":
        return dataclasses.replace(self, params=tuple(params))

    def part_flops(self) -> tuple[int, int]:
        """Approximate multiply-add FLOPs of the feature part and the head."""
        shapes = self.shapes
        flops = [layer.flops(shapes[i]) if has_params(layer) else math.prod(shapes[i]) for i, layer in enumerate(self.layers)]
        return sum(flops[: self.split]), sum(flops[self.split :])

    def round_to_float32(self) -> "SplitNetwork":
        """Copy whose weights are exactly representable in float32."""
        return self.with_params(
            None if p is None else {k: v.astype(np.float32).astype(np.float64) for k, v in p.items()} for p in self.params
        )


def init_network(input_shape: Shape, layers: Iterable[Layer], split: int, seed: int) -> SplitNetwork:
    """Glorot-uniform weights and zero biases, seeded per layer."""
    layers = tuple(layers)
    shapes = shape_chain(input_shape, layers)
    params = []
    for i, layer in enumerate(layers):
        if not has_params(layer):
            params.append(None)
            continue
        fan_in, fan_out = layer.fans(shapes[i])
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        wshape = layer.param_shapes(shapes[i])
        gen = rng.stream(seed, rng.INIT_WEIGHTS, i)
        params.append({"W": gen.uniform(-limit, limit, wshape["W"]), "b": np.zeros(wshape["b"])})
    return SplitNetwork(input_shape, layers, split, tuple(params))


def validate_split(net: SplitNetwork) -> None:
    """Raise unless dropout is confined to the head and all shapes chain."""
    for i, layer in enumerate(net.feature_layers):
        if isinstance(layer, Dropout):
            raise SplitViolationError(f"layer {i} is Dropout but lies in the feature part (split={net.split})")
    shapes = net.shapes
    for i, layer in enumerate(net.layers):
        if isinstance(layer, ACTIVATIONS) and i != len(net.layers) - 1:
            raise ConfigError(f"layer {i} ({layer.kind}) must be the final layer")
        p = net.params[i]
        if not has_params(layer):
            if p is not None:
                raise ConfigError(f"layer {i} ({layer.kind}) takes no parameters")
            continue
        if p is None:
            raise ConfigError(f"layer {i} ({layer.kind}) has no parameters")
        for name, shape in layer.param_shapes(shapes[i]).items():
            if name not in p or p[name].shape != tuple(shape):
                got = p[name].shape if name in p else None
                raise DimensionError(f"layer {i} ({layer.kind}) parameter {name}: expected {shape}, got {got}")


# --------------------------------------------------------------------------
# dropout masks


@dataclass(frozen=True, eq=False)
class DropoutMask:
    """One 0/1 array per head dropout layer plus the keep probability.

    A mask array has the layer's unit shape (shared by every sample in the
    batch) or a leading batch axis (one mask per sample).
    """

    masks: tuple[np.ndarray, ...]
    keep_prob: float
    seed: int | None = None
    t: int | None = None

    @classmethod
    def sample(
        cls,
        net: SplitNetwork,
        keep_prob: float,
        seed: int,
        t: int,
        domain: int = rng.TEST_DROPOUT,
        batch: int | None = None,
    ) -> "DropoutMask":
        shapes = net.shapes
        masks = []
        for i in net.dropout_indices:
            shape = shapes[i] if batch is None else (batch, *shapes[i])
            masks.append(rng.bernoulli(shape, keep_prob, seed, domain, t, i))
        return cls(tuple(masks), float(keep_prob), seed, t)

    @classmethod
    def ones(cls, net: SplitNetwork) -> "DropoutMask":
        shapes = net.shapes
        return cls(tuple(np.ones(shapes[i]) for i in net.dropout_indices), 1.0)


# --------------------------------------------------------------------------
# forward / backward


def _batch(x, shape: Shape, what: str) -> tuple[np.ndarray, bool]:
    x = as_tensor(x)
    if x.shape == shape:
        return x[None], True
    if x.shape[1:] == shape:
        return x, False
    raise DimensionError(f"{what}: expected shape {shape} or (N, *{shape}), got {x.shape}")


def _scaled_masks(net: SplitNetwork, mask: DropoutMask | None, start: int) -> dict[int, np.ndarray]:
    indices = [i for i in net.dropout_indices if i >= start]
    if mask is None:
        return {}
    if len(mask.masks) != len(indices):
        raise DimensionError(f"mask has {len(mask.masks)} arrays for {len(indices)} dropout layers")
    if not 0.0 < mask.keep_prob <= 1.0:
        raise ValueError(f"keep_prob must lie in (0, 1], got {mask.keep_prob}")
    shapes = net.shapes
    inv = 1.0 / mask.keep_prob
    out = {}
    for i, m in zip(indices, mask.masks):
        if m.shape != shapes[i] and m.shape[1:] != shapes[i]:
            raise DimensionError(f"layer {i} (dropout): mask shape {m.shape} does not match unit shape {shapes[i]}")
        out[i] = m * inv
    return out


def _run(net: SplitNetwork, x: np.ndarray, start: int, stop: int, scaled: dict[int, np.ndarray], caches=None):
    for i in range(start, stop):
        layer = net.layers[i]
        if isinstance(layer, Dropout):
            if i not in scaled:
                if caches is not None:
                    caches.append(None)
                continue
            x, cache = layer.forward(None, x, scaled[i])
        else:
            try:
                x, cache = layer.forward(net.params[i], x)
            except ValueError as exc:
                raise DimensionError(f"layer {i} ({layer.kind}): {exc}") from None
        if caches is not None:
            caches.append(cache)
    return x


def forward_deterministic(net: SplitNetwork, x) -> np.ndarray:
    """Plain pass with every dropout layer acting as the identity."""
    xb, single = _batch(x, net.input_shape, "input")
    out = _run(net, xb, 0, len(net.layers), {})
    return out[0] if single else out


def compute_features(net: SplitNetwork, x) -> np.ndarray:
    """Output of the last feature-part layer; deterministic and cacheable."""
    xb, single = _batch(x, net.input_shape, "input")
    out = _run(net, xb, 0, net.split, {})
    return out[0] if single else out


def forward_head(net: SplitNetwork, features, mask: DropoutMask | None) -> np.ndarray:
    """Head pass on cached features; ``mask=None`` means no dropout."""
    fb, single = _batch(features, net.feature_shape, "features")
    out = _run(net, fb, net.split, len(net.layers), _scaled_masks(net, mask, net.split))
    return out[0] if single else out


def forward_full(net: SplitNetwork, x, mask: DropoutMask | None) -> np.ndarray:
    """Uncached pass through both parts with dropout applied in the head."""
    xb, single = _batch(x, net.input_shape, "input")
    out = _run(net, xb, 0, len(net.layers), _scaled_masks(net, mask, 0))
    return out[0] if single else out


def loss_value(net: SplitNetwork, y_hat: np.ndarray, y: np.ndarray, loss: LossKind) -> float:
    """Mean per-sample loss of batched predictions."""
    loss = LossKind(loss)
    if loss is LossKind.EUCLIDEAN:
        total = loss_euclidean(y, y_hat)
    elif net.activation == "sigmoid":
        total = loss_cross_entropy(y, y_hat)
    elif net.activation == "softmax":
        total = loss_categorical_cross_entropy(y, y_hat)
    else:
        raise ConfigError("cross-entropy needs a sigmoid or softmax head")
    return total / y_hat.shape[0]


def backward(net: SplitNetwork, x, y, loss: LossKind, mask: DropoutMask | None = None):
    """Loss and exact gradients for every parameter.

    The loss is averaged over the batch. With cross entropy the gradient at
    the pre-activation is ``y_hat - y`` directly, so it is not scaled by the
    activation derivative. Returns ``(loss, grads)`` where ``grads`` parallels
    ``net.params``.
    """
    loss = LossKind(loss)
    act = net.activation
    if loss is LossKind.CROSS_ENTROPY and act is None:
        raise ConfigError("cross-entropy needs a sigmoid or softmax head")
    xb, _ = _batch(x, net.input_shape, "input")
    y = as_tensor(y).reshape(xb.shape[0], *net.output_shape)
    caches: list = []
    y_hat = _run(net, xb, 0, len(net.layers), _scaled_masks(net, mask, 0), caches)
    value = loss_value(net, y_hat, y, loss)
    g = (y_hat - y) / xb.shape[0]
    # cross entropy: gradient already taken at the pre-activation
    stop = len(net.layers) - (loss is LossKind.CROSS_ENTROPY)
    grads: list = [None] * len(net.layers)
    for i in range(stop - 1, -1, -1):
        layer = net.layers[i]
        if caches[i] is None:
            continue
        g, lg = layer.backward(net.params[i], caches[i], g)
        if lg:
            grads[i] = lg
    for i, layer in enumerate(net.layers):
        if has_params(layer) and grads[i] is None:
            grads[i] = {k: np.zeros_like(v) for k, v in net.params[i].items()}
    return value, grads
