import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from isoscene.sketch import SketchMap, channel_max, dropout_categories, gaussian_kernel, sal_loss, sal_weights
from oracles import blur_replicate_ref, gaussian_2d

binary = st.integers(0, 1)


def sketch_of(ch):
    return SketchMap(np.asarray(ch, dtype=np.uint8), [f"c{k}" for k in range(ch.shape[2])])


def test_kernel_center_value():
    # 1 / (sum_{r=-5..5} exp(-r^2 / 8))^2, evaluated with mpmath
    assert gaussian_kernel(11, 2.0)[5, 5] == pytest.approx(0.0402264853887897887, abs=1e-15)
    assert gaussian_kernel(11, 2.0).sum() == pytest.approx(1.0, abs=1e-15)


def test_empty_sketch_floor_exact():
    w = sal_weights(sketch_of(np.zeros((20, 24, 3))))
    assert np.all(w == 0.1)


def test_full_sketch_one():
    w = sal_weights(sketch_of(np.ones((20, 24, 2))))
    assert np.abs(w - 1.0).max() <= 1e-6


def test_single_pixel_center_weight():
    ch = np.zeros((31, 31, 1))
    ch[15, 15, 0] = 1
    w = sal_weights(sketch_of(ch), 2.0)
    assert w[15, 15] == pytest.approx(max(0.1, 0.0402264853887897887), abs=1e-12)
    assert w[0, 0] == 0.1


def test_weights_match_explicit_blur(rng):
    ch = (rng.random((25, 30, 3)) < 0.1).astype(np.uint8)
    ref = np.clip(np.maximum(0.1, blur_replicate_ref(ch.max(axis=2).astype(float), gaussian_2d(11, 2.0))), 0.1, 1)
    assert np.allclose(sal_weights(sketch_of(ch)), ref, atol=1e-12)


def test_channel_max_is_or(rng):
    ch = (rng.random((16, 16, 3)) < 0.3).astype(np.uint8)
    ref = np.zeros((16, 16), dtype=np.uint8)
    for i in range(16):
        for j in range(16):
            ref[i, j] = 1 if any(ch[i, j, k] for k in range(3)) else 0
    assert np.array_equal(channel_max(sketch_of(ch)), ref)


def test_overlap_allowed():
    ch = np.zeros((4, 4, 2), dtype=np.uint8)
    ch[1, 1, :] = 1
    assert channel_max(sketch_of(ch))[1, 1] == 1


def test_sketch_validation():
    with pytest.raises(ValueError):
        SketchMap(np.full((4, 4, 1), 2, dtype=np.uint8), ["a"])
    with pytest.raises(ValueError):
        SketchMap(np.zeros((4, 4, 2), dtype=np.uint8), ["a"])


def test_sal_loss_examples(rng):
    e = rng.normal(size=(3, 8, 8))
    assert sal_loss(e, e, np.full((8, 8), 0.3)) == 0.0
    p = rng.normal(size=(3, 8, 8))
    assert sal_loss(e, p, np.ones((8, 8))) == np.mean((e - p) ** 2)
    assert sal_loss(np.ones((8, 8)), np.zeros((8, 8)), np.full((8, 8), 0.1)) == pytest.approx(0.01, abs=1e-15)
    with pytest.raises(ValueError):
        sal_loss(e, p[:2], np.ones((8, 8)))


def test_dropout_extremes(rng):
    s = sketch_of((rng.random((8, 8, 4)) < 0.5).astype(np.uint8))
    assert np.array_equal(dropout_categories(s, 1.0, seed=3).channels, s.channels)
    assert not dropout_categories(s, 0.0, seed=3).channels.any()
    with pytest.raises(ValueError):
        dropout_categories(s, 1.5)


def test_dropout_frequency():
    s = sketch_of(np.ones((2, 2, 4), dtype=np.uint8))
    kept = np.array([dropout_categories(s, 0.5, seed=k).channels.any(axis=(0, 1)) for k in range(10000)])
    assert np.all(np.abs(kept.mean(axis=0) - 0.5) <= 0.02)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, (12, 14, 2), elements=binary))
def test_weight_range(ch):
    w = sal_weights(sketch_of(ch))
    assert w.min() >= 0.1 and w.max() <= 1.0


@settings(max_examples=100, deadline=None)
@given(arrays(np.uint8, (12, 14, 2), elements=binary), arrays(np.uint8, (12, 14, 2), elements=binary))
def test_weight_monotone(a, extra):
    bigger = a | extra
    assert np.all(sal_weights(sketch_of(bigger)) >= sal_weights(sketch_of(a)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_sal_loss_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    e, p, w = rng.normal(size=(6, 5)), rng.normal(size=(6, 5)), rng.uniform(0.1, 1, (6, 5))
    perm = rng.permutation(30)
    q = lambda a: a.ravel()[perm].reshape(6, 5)  # noqa: E731
    assert sal_loss(q(e), q(p), q(w)) == pytest.approx(sal_loss(e, p, w), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.uint8, (6, 6, 3), elements=binary), st.integers(0, 2**32 - 1))
def test_dropout_only_masks(ch, seed):
    out = dropout_categories(sketch_of(ch), 0.5, seed).channels
    for k in range(3):
        assert np.array_equal(out[..., k], ch[..., k]) or not out[..., k].any()
