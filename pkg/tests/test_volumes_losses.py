import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voladv.errors import ConfigError, ShapeError
from voladv.losses import (
    composite,
    cosine_cross_entropy,
    cosine_weights,
    cross_entropy,
    get_loss,
    soft_dice,
    soft_dice_from_probs,
)
from voladv.volumes import (
    check_labels,
    check_same_shape,
    check_volume,
    log_softmax_channels,
    one_hot,
    predict_labels,
    softmax_channels,
)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_channels(np.zeros((4, 2, 2, 2))), 0.25)


def test_softmax_closed_form():
    logits = np.zeros((2, 3, 3, 3))
    logits[1] = np.log(3)
    p = softmax_channels(logits)
    np.testing.assert_allclose(p[0], 0.25)
    np.testing.assert_allclose(p[1], 0.75)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2 ** 31 - 1), st.floats(-50, 50))
def test_softmax_simplex_and_shift(c, seed, shift):
    logits = np.random.default_rng(seed).normal(0, 10, (c, 3, 4, 2))
    p = softmax_channels(logits)
    assert np.all(p >= 0)
    assert np.abs(p.sum(axis=0) - 1).max() < 1e-6
    assert np.abs(softmax_channels(logits + shift) - p).max() < 1e-6


def test_softmax_shift_by_seven(rng):
    logits = rng.standard_normal((3, 4, 4, 4))
    offset = rng.standard_normal((1, 4, 4, 4)) * 0 + 7
    assert np.abs(softmax_channels(logits + offset) - softmax_channels(logits)).max() < 1e-6


def test_log_softmax_consistent(rng):
    logits = rng.normal(0, 30, (3, 2, 2, 2))
    np.testing.assert_allclose(np.exp(log_softmax_channels(logits)), softmax_channels(logits), atol=1e-12)


def test_softmax_rejects_non_finite():
    logits = np.zeros((2, 2, 2, 2))
    logits[0, 0, 0, 0] = np.nan
    with pytest.raises(ShapeError):
        softmax_channels(logits)


def test_predict_labels_rules(rng):
    logits = np.zeros((3, 2, 2, 2))
    logits[2] = 1
    assert np.all(predict_labels(logits) == 2)
    tie = np.zeros((4, 2, 2, 2))
    tie[0] = tie[3] = 5
    assert np.all(predict_labels(tie) == 0)
    y = rng.integers(0, 4, (5, 5, 5))
    assert np.array_equal(predict_labels(one_hot(y, 4) * 10), y)
    assert np.array_equal(predict_labels(one_hot(y, 4) * 0.01), y)


def test_check_volume_and_labels():
    with pytest.raises(ShapeError):
        check_volume(np.full((2, 2, 2), 1.5))
    with pytest.raises(ShapeError):
        check_volume(np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        check_labels(np.full((2, 2, 2), 0.5))
    with pytest.raises(ShapeError):
        check_labels(np.full((2, 2, 2), 3), num_classes=3)
    assert check_labels(np.ones((2, 2, 2))).dtype == np.int64


def test_shape_error_names_axis():
    with pytest.raises(ShapeError, match="axis W"):
        check_same_shape((4, 5, 6), (4, 7, 6))


def test_soft_dice_perfect_prediction(rng):
    y = rng.integers(0, 3, (6, 6, 6))
    loss, _ = soft_dice_from_probs(one_hot(y, 3), y)
    assert abs(loss) < 1e-6


@pytest.mark.parametrize("n", [1, 7, 64])
def test_soft_dice_uniform_closed_form(n):
    y = np.ones((n, 1, 1), dtype=int)
    probs = np.full((2, n, 1, 1), 0.5)
    loss, _ = soft_dice_from_probs(probs, y)
    assert abs(loss - 1 / 3) < 1e-4


def test_soft_dice_smoothing_handles_empty_class():
    y = np.zeros((3, 3, 3), dtype=int)
    probs = one_hot(y, 3)
    loss, grad = soft_dice_from_probs(probs, y)
    assert np.isfinite(loss) and np.all(np.isfinite(grad))
    assert abs(loss) < 1e-6


def test_cross_entropy_uniform():
    y = np.zeros((3, 3, 3), dtype=int)
    loss, _ = cross_entropy(np.zeros((2, 3, 3, 3)), y)
    assert abs(loss - np.log(2)) < 1e-6


def test_cosine_weights(rng):
    y = rng.integers(0, 3, (4, 4, 4))
    w = cosine_weights(one_hot(y, 3) * 1000.0, y)
    np.testing.assert_allclose(w, 1.0, atol=1e-9)
    logits = rng.normal(0, 3, (3, 4, 4, 4))
    w = cosine_weights(logits, y)
    assert np.all((w >= 0) & (w <= 1))
    # identical prediction and target: weighted CE equals plain CE
    sharp = one_hot(y, 3) * 50.0
    assert abs(cosine_cross_entropy(sharp, y)[0] - cross_entropy(sharp, y)[0]) < 1e-12


def test_composite_is_sum(rng):
    y = rng.integers(0, 3, (4, 4, 4))
    logits = rng.standard_normal((3, 4, 4, 4))
    total, g = composite(logits, y)
    a, ga = soft_dice(logits, y)
    b, gb = cross_entropy(logits, y)
    assert total == pytest.approx(a + b)
    np.testing.assert_allclose(g, ga + gb)


@pytest.mark.parametrize("kind", ["soft-dice", "cross-entropy", "cosine-weighted-cross-entropy", "composite"])
def test_logit_gradients_match_fd(rng, kind):
    y = rng.integers(0, 3, (3, 3, 3))
    logits = rng.standard_normal((3, 3, 3, 3))
    fn = get_loss(kind)
    _, g = fn(logits, y)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 2, 1, 0), (2, 1, 2, 2)]:
        lp, lm = logits.copy(), logits.copy()
        lp[idx] += h
        lm[idx] -= h
        if kind == "cosine-weighted-cross-entropy":
            # weights are held constant for the gradient
            w = cosine_weights(logits, y)
            fd = (cross_entropy(lp, y, w)[0] - cross_entropy(lm, y, w)[0]) / (2 * h)
        else:
            fd = (fn(lp, y)[0] - fn(lm, y)[0]) / (2 * h)
        assert abs(g[idx] - fd) < 1e-6


def test_unknown_loss():
    with pytest.raises(ConfigError):
        get_loss("hinge")
