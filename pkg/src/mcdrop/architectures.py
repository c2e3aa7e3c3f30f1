"""Small analogues of the three reference architectures, plus a benchmark net.

Every preset puts its convolution/feature layers before the split and its
dropout-bearing layers after it.
"""

from __future__ import annotations

from mcdrop.errors import ConfigError
from mcdrop.network import (
    Conv,
    Dense,
    Dropout,
    GlobalMaxPool,
    MaxPool2x2,
    Maxout,
    ReLU,
    Sigmoid,
    Softmax,
    SplitNetwork,
    init_network,
    layer_from_dict,
)


def mlp_classifier(input_dim: int, classes: int, hidden: int = 32, seed: int = 0) -> SplitNetwork:
    """Dense feature layer, then two dropout FC layers and a softmax."""
    layers = [
        Dense(hidden), ReLU(),
        Dense(hidden), ReLU(), Dropout(),
        Dense(hidden), ReLU(), Dropout(),
        Dense(classes), Softmax(),
    ]  # fmt: skip
    return init_network((input_dim,), layers, 2, seed)


def maxout_multilabel(input_shape, classes: int, hidden: int = 32, seed: int = 0) -> SplitNetwork:
    """Conv features, FC + maxout head with dropout, sigmoid outputs."""
    layers = [
        Conv(8, 3), ReLU(), MaxPool2x2(), Conv(16, 3), ReLU(),
        Dense(2 * hidden), ReLU(), Dropout(),
        Dense(2 * hidden), Maxout(2), Dropout(),
        Dense(classes), Sigmoid(),
    ]  # fmt: skip
    return init_network(tuple(input_shape), layers, 5, seed)


def fully_conv(input_shape, classes: int, width: int = 16, seed: int = 0) -> SplitNetwork:
    """Conv features, a dropout conv layer, per-class conv maps, global max."""
    layers = [
        Conv(8, 3), ReLU(), MaxPool2x2(), Conv(width, 3), ReLU(),
        Conv(width, 3), ReLU(), Dropout(),
        Conv(classes, 1), GlobalMaxPool(), Sigmoid(),
    ]  # fmt: skip
    return init_network(tuple(input_shape), layers, 5, seed)


def conv_heavy(input_shape=(3, 32, 32), classes: int = 10, seed: int = 0) -> SplitNetwork:
    """Benchmark net whose feature part dominates the FLOP count."""
    layers = [
        Conv(16, 3), ReLU(), Conv(16, 3), ReLU(), MaxPool2x2(),
        Conv(32, 3), ReLU(), MaxPool2x2(),
        Dense(64), ReLU(), Dropout(),
        Dense(64), ReLU(), Dropout(),
        Dense(classes), Softmax(),
    ]  # fmt: skip
    return init_network(tuple(input_shape), layers, 8, seed)


PRESETS = {
    "mlp": mlp_classifier,
    "multilabel": maxout_multilabel,
    "fullyconv": fully_conv,
    "conv-heavy": conv_heavy,
}


def build(arch: dict, input_shape, classes: int, seed: int) -> SplitNetwork:
    """Network from a config entry: a preset name or an explicit layer list.

    ``{"preset": "mlp", "hidden": 32}`` or
    ``{"layers": [{"kind": "dense", "units": 8}, ...], "split": 2}``.
    """
    arch = dict(arch)
    if "preset" in arch:
        name = arch.pop("preset")
        if name not in PRESETS:
            raise ConfigError(f"network.preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
        if name == "mlp":
            if len(input_shape) != 1:
                raise ConfigError(f"network.preset: mlp needs vector inputs, data has shape {tuple(input_shape)}")
            return _call(PRESETS[name], arch, input_shape[0], classes, seed=seed)
        return _call(PRESETS[name], arch, input_shape, classes, seed=seed)
    if "layers" not in arch or "split" not in arch:
        raise ConfigError("network: give either 'preset' or both 'layers' and 'split'")
    extra = set(arch) - {"layers", "split"}
    if extra:
        raise ConfigError(f"network: unknown keys {sorted(extra)}")
    layers = [layer_from_dict(d) for d in arch["layers"]]
    return init_network(tuple(input_shape), layers, int(arch["split"]), seed)


def _call(fn, kwargs, *args, seed):
    try:
        return fn(*args, seed=seed, **kwargs)
    except TypeError as exc:
        raise ConfigError(f"network: {exc}") from None
