"""Seeded synthetic datasets and training-time augmentation.

Two generators stand in for real image benchmarks:

* ``blobs``: Gaussian clusters centred on the vertices of a simplex (the
  first ``classes`` unit vectors), one-hot labels.
* ``patches``: single-channel square images holding up to ``max_objects``
  distinct 4x4 glyphs at non-overlapping positions, multi-hot presence
  labels.

Each sample is drawn from its own counter-based stream keyed by the dataset
seed, the split and the sample index, so train and test never share a
stream and generation order does not matter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from mcdrop import rng
from mcdrop.errors import GenerationError

GLYPH = 4
BACKGROUND_NOISE = 0.05


def _glyphs() -> np.ndarray:
    g = np.zeros((8, GLYPH, GLYPH))
    g[0] = 1.0  # filled square
    g[1] = 1.0
    g[1, 1:-1, 1:-1] = 0.0  # hollow square
    g[2, 1:3, :] = 1.0
    g[2, :, 1:3] = 1.0  # plus
    g[3] = np.eye(GLYPH)  # diagonal
    g[4] = np.eye(GLYPH)[::-1]  # anti-diagonal
    g[5, [0, 3], :] = 1.0  # horizontal bars
    g[6, :, [0, 3]] = 1.0  # vertical bars
    g[7] = np.indices((GLYPH, GLYPH)).sum(axis=0) % 2 == 0  # checkerboard
    return g


GLYPHS = _glyphs()


@dataclass(frozen=True)
class Blobs:
    classes: int = 3
    dim: int = 8
    spread: float = 0.5

    kind = "blobs"


@dataclass(frozen=True)
class MultiHotPatches:
    classes: int = 4
    image_size: int = 16
    max_objects: int = 3

    kind = "patches"


@dataclass(frozen=True)
class DatasetSpec:
    kind: Blobs | MultiHotPatches
    train_count: int
    test_count: int
    seed: int


class Dataset(NamedTuple):
    x: np.ndarray
    y: np.ndarray


def _check(spec: DatasetSpec) -> None:
    if spec.train_count < 1 or spec.test_count < 1:
        raise GenerationError("train_count and test_count must be >= 1")
    k = spec.kind
    if isinstance(k, Blobs):
        if not 1 <= k.classes <= k.dim:
            raise GenerationError(f"blobs need 1 <= classes <= dim, got classes={k.classes}, dim={k.dim}")
        if k.spread < 0:
            raise GenerationError("spread must be nonnegative")
    else:
        if k.image_size < 8:
            raise GenerationError(f"image_size must be >= 8, got {k.image_size}")
        if not 1 <= k.classes <= len(GLYPHS):
            raise GenerationError(f"patches support 1..{len(GLYPHS)} classes, got {k.classes}")
        if k.max_objects < 0 or k.max_objects > k.classes:
            raise GenerationError(f"max_objects must lie in [0, classes], got {k.max_objects}")
        # each glyph plus a one-pixel margin must fit
        if k.max_objects * (GLYPH + 1) ** 2 > k.image_size**2:
            raise GenerationError(f"{k.max_objects} objects cannot fit in a {k.image_size}x{k.image_size} image")


def _blob(k: Blobs, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    c = int(gen.integers(k.classes))
    x = gen.normal(0.0, 1.0, k.dim) * k.spread
    x[c] += 1.0
    y = np.zeros(k.classes)
    y[c] = 1.0
    return x, y


def _patch(k: MultiHotPatches, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    s = k.image_size
    img = gen.normal(0.0, BACKGROUND_NOISE, (s, s))
    y = np.zeros(k.classes)
    count = int(gen.integers(k.max_objects + 1))
    taken = np.zeros((s, s), dtype=bool)
    for c in gen.choice(k.classes, size=count, replace=False):
        for _ in range(200):
            r, q = gen.integers(0, s - GLYPH + 1, size=2)
            if not taken[max(r - 1, 0) : r + GLYPH + 1, max(q - 1, 0) : q + GLYPH + 1].any():
                break
        else:
            raise GenerationError(f"could not place {count} objects in a {s}x{s} image")
        taken[r : r + GLYPH, q : q + GLYPH] = True
        img[r : r + GLYPH, q : q + GLYPH] += GLYPHS[c] * gen.uniform(0.7, 1.0)
        y[c] = 1.0
    return img[None], y


def _split(spec: DatasetSpec, count: int, domain: int) -> Dataset:
    make = _blob if isinstance(spec.kind, Blobs) else _patch
    xs, ys = zip(*(make(spec.kind, rng.stream(spec.seed, domain, i)) for i in range(count)))
    return Dataset(np.stack(xs), np.stack(ys))


def generate(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """Return ``(train, test)``; deterministic in ``spec.seed``."""
    _check(spec)
    return _split(spec, spec.train_count, rng.DATA_TRAIN), _split(spec, spec.test_count, rng.DATA_TEST)


def translate(image: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift a CHW image by whole pixels, filling vacated pixels with zeros."""
    out = np.zeros_like(image)
    h, w = image.shape[-2:]
    if abs(dy) >= h or abs(dx) >= w:
        return out
    src_r = slice(max(-dy, 0), h - max(dy, 0))
    dst_r = slice(max(dy, 0), h - max(-dy, 0))
    src_c = slice(max(-dx, 0), w - max(dx, 0))
    dst_c = slice(max(dx, 0), w - max(-dx, 0))
    out[..., dst_r, dst_c] = image[..., src_r, src_c]
    return out


def augment(sample, noise_sigma: float = 0.0, max_translate: float = 0.0, seed: int = 0, counter: int = 0) -> np.ndarray:
    """Random integer translation (images only) followed by Gaussian noise.

    The translation is uniform in ``[-m, m]`` pixels per axis with
    ``m = floor(max_translate * size)``.
    """
    x = np.asarray(sample, dtype=np.float64)
    if noise_sigma == 0 and max_translate == 0:
        return x.copy()
    gen = rng.stream(seed, rng.AUGMENT, counter)
    if max_translate > 0:
        if x.ndim != 3:
            raise ValueError(f"translation needs a CHW image, got shape {x.shape}")
        my = int(np.floor(max_translate * x.shape[1]))
        mx = int(np.floor(max_translate * x.shape[2]))
        dy, dx = int(gen.integers(-my, my + 1)), int(gen.integers(-mx, mx + 1))
        x = translate(x, dy, dx)
    else:
        x = x.copy()
    if noise_sigma > 0:
        x = x + gen.normal(0.0, noise_sigma, x.shape)
    return x
