import numpy as np
import pytest

from mcdrop.network import (
    Conv,
    Dense,
    Dropout,
    DropoutMask,
    GlobalMaxPool,
    MaxPool2x2,
    Maxout,
    ReLU,
    Sigmoid,
    Softmax,
    forward_full,
    init_network,
    loss_value,
)

ACT = {"sigmoid": Sigmoid, "softmax": Softmax}


def dense_net(seed, act="softmax", classes=3):
    """Conv/pool features, dense + maxout head with two dropout layers."""
    r = np.random.default_rng(seed)
    c1 = int(r.integers(1, 4))
    h = 2 * int(r.integers(2, 5))
    layers = [
        Conv(c1, 3), ReLU(), MaxPool2x2(),
        Dense(h), ReLU(), Dropout(),
        Dense(h), Maxout(2), Dropout(),
        Dense(classes), ACT[act](),
    ]  # fmt: skip
    return init_network((2, 7, 7), layers, 3, seed)


def conv_net(seed, act="sigmoid", classes=3):
    """Fully convolutional net ending in global max pooling."""
    r = np.random.default_rng(seed)
    c = int(r.integers(2, 5))
    layers = [Conv(c, 3), ReLU(), Conv(c, 2), ReLU(), Dropout(), Conv(classes, 1), GlobalMaxPool(), ACT[act]()]
    return init_network((1, 6, 6), layers, 2, seed)


def randomize_biases(net, seed):
    r = np.random.default_rng(seed + 1000)
    return net.with_params(None if p is None else {**p, "b": r.normal(0, 0.3, p["b"].shape)} for p in net.params)


def numeric_gradients(net, x, y, loss, mask, h=1e-5):
    """Central finite differences of the batch loss, parameter by parameter."""
    grads = []
    params = [None if p is None else {k: v.copy() for k, v in p.items()} for p in net.params]
    for i, p in enumerate(params):
        if p is None:
            grads.append(None)
            continue
        g = {}
        for name, w in p.items():
            gw = np.zeros_like(w)
            for idx in np.ndindex(w.shape):
                old = w[idx]
                w[idx] = old + h
                up = loss_value(net, forward_full(net.with_params(params), x, mask), y, loss)
                w[idx] = old - h
                down = loss_value(net, forward_full(net.with_params(params), x, mask), y, loss)
                w[idx] = old
                gw[idx] = (up - down) / (2 * h)
            g[name] = gw
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a is None:
            continue
        for k in a:
            err = np.abs(a[k] - n[k]) / np.maximum(np.maximum(np.abs(a[k]), np.abs(n[k])), floor)
            worst = max(worst, float(err.max()))
    return worst


def random_labels(r, n, classes, act):
    if act == "softmax":
        return np.eye(classes)[r.integers(0, classes, n)]
    return r.integers(0, 2, (n, classes)).astype(float)


def gradient_case(seed, template, act, loss):
    """Random network, batch, labels and training-style dropout mask."""
    net = randomize_biases(template(seed, act), seed)
    r = np.random.default_rng(seed)
    x = r.normal(size=(2, *net.input_shape))
    y = random_labels(r, 2, 3, act)
    mask = DropoutMask.sample(net, 0.7, seed, 0, batch=2)
    return net, x, y, mask


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
