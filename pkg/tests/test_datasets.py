import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcdrop.datasets import GLYPHS, Blobs, DatasetSpec, MultiHotPatches, augment, generate, translate
from mcdrop.errors import GenerationError


def test_blobs_deterministic_one_hot():
    spec = DatasetSpec(Blobs(3, 8, 0.5), 50, 40, seed=11)
    (x1, y1), (t1, u1) = generate(spec)
    (x2, y2), (t2, u2) = generate(spec)
    assert np.array_equal(x1, x2) and np.array_equal(t1, t2) and np.array_equal(u1, u2)
    assert x1.shape == (50, 8) and t1.shape == (40, 8)
    assert set(np.unique(y1)) <= {0.0, 1.0} and np.all(y1.sum(axis=1) == 1)


def test_seeds_and_splits_differ():
    (x, _), (t, _) = generate(DatasetSpec(Blobs(), 30, 30, seed=1))
    (x2, _), _ = generate(DatasetSpec(Blobs(), 30, 30, seed=2))
    assert not np.array_equal(x, x2)
    # no test sample reappears in the training set
    assert not (x[:, None, :] == t[None, :, :]).all(axis=2).any()


def test_blob_prefix_stable():
    (a, _), _ = generate(DatasetSpec(Blobs(), 10, 1, seed=4))
    (b, _), _ = generate(DatasetSpec(Blobs(), 25, 1, seed=4))
    assert np.array_equal(a, b[:10])


def test_blob_spread_zero_hits_vertices():
    (x, y), _ = generate(DatasetSpec(Blobs(3, 5, 0.0), 20, 1, seed=0))
    assert np.array_equal(x[:, :3], y)
    assert not x[:, 3:].any()


def test_patches_labels_match_content():
    k = MultiHotPatches(4, 16, 3)
    (x, y), (t, u) = generate(DatasetSpec(k, 60, 60, seed=5))
    assert x.shape == (60, 1, 16, 16)
    assert set(np.unique(y)) <= {0.0, 1.0}
    assert np.all(y.sum(axis=1) <= 3)
    # images with objects have bright pixels; empty ones are background noise only
    bright = (x > 0.5).reshape(60, -1).any(axis=1)
    assert np.array_equal(bright, y.sum(axis=1) > 0)
    assert not (x[:, None] == t[None]).all(axis=(2, 3, 4)).any()


def test_patches_without_objects():
    (x, y), _ = generate(DatasetSpec(MultiHotPatches(4, 16, 0), 20, 1, seed=0))
    assert not y.any()
    assert np.abs(x).max() < 0.5


@pytest.mark.parametrize(
    "kind",
    [Blobs(9, 8), Blobs(0, 8), MultiHotPatches(9, 16, 1), MultiHotPatches(4, 16, 5), MultiHotPatches(4, 8, 3), MultiHotPatches(4, 4, 1)],
)
def test_invalid_specs(kind):
    with pytest.raises(GenerationError):
        generate(DatasetSpec(kind, 5, 5, seed=0))


def test_glyphs_distinct():
    flat = GLYPHS.reshape(len(GLYPHS), -1)
    assert len({row.tobytes() for row in flat}) == len(GLYPHS)


def test_augment_identity():
    x = np.arange(16.0).reshape(1, 4, 4)
    out = augment(x)
    assert np.array_equal(out, x) and out is not x


def test_augment_noise_statistics():
    z = np.zeros((1, 100, 100))
    out = augment(z, noise_sigma=0.02, seed=3, counter=9)
    assert out.shape == z.shape
    # CLT bound on the sample mean: 4 sigma / sqrt(10^4)
    assert abs(out.mean()) < 4 * 0.02 / 100
    assert abs(out.std() - 0.02) < 0.002
    assert np.array_equal(out, augment(z, noise_sigma=0.02, seed=3, counter=9))
    assert not np.array_equal(out, augment(z, noise_sigma=0.02, seed=3, counter=10))


def test_translate_one_pixel():
    x = np.arange(1.0, 10.0).reshape(1, 3, 3)
    assert np.array_equal(translate(x, 1, 0)[0], [[0, 0, 0], [1, 2, 3], [4, 5, 6]])
    assert np.array_equal(translate(x, 0, -1)[0], [[2, 3, 0], [5, 6, 0], [8, 9, 0]])
    assert not translate(x, 3, 0).any()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.5))
def test_augment_preserves_shape_and_mass(counter, frac):
    x = np.ones((2, 8, 8))
    out = augment(x, max_translate=frac, seed=1, counter=counter)
    assert out.shape == x.shape
    m = int(np.floor(frac * 8))
    # translation never adds mass and keeps at least the (8-m)^2 core
    assert (8 - m) ** 2 * 2 <= out.sum() <= x.sum()


def test_augment_translate_needs_image():
    with pytest.raises(ValueError):
        augment(np.ones(5), max_translate=0.2)
