"""Segmentation losses returning ``(value, d_value/d_logits)``."""
import numpy as np

from .errors import ConfigError
from .volumes import log_softmax_channels, one_hot

DICE_SMOOTH = 1e-5


def soft_dice_from_probs(probs, y, smooth=DICE_SMOOTH):
    """Soft-dice loss over foreground classes and its gradient w.r.t. ``probs``."""
    num_classes = probs.shape[0]
    g = one_hot(y, num_classes)
    axes = tuple(range(1, probs.ndim))
    inter = (probs * g).sum(axis=axes)[1:]
    denom = probs.sum(axis=axes)[1:] + g.sum(axis=axes)[1:]
    dice = (2.0 * inter + smooth) / (denom + smooth)
    loss = 1.0 - dice.mean()
    nfg = num_classes - 1
    grad = np.zeros_like(probs)
    shape = (-1,) + (1,) * (probs.ndim - 1)
    num = (2.0 * inter + smooth).reshape(shape)
    den = (denom + smooth).reshape(shape)
    grad[1:] = -(2.0 * g[1:] * den - num) / (den * den) / nfg
    return loss, grad


def _softmax_backward(p, dp):
    return p * (dp - (p * dp).sum(axis=0, keepdims=True))


def soft_dice(logits, y):
    p = np.exp(log_softmax_channels(logits))
    loss, dp = soft_dice_from_probs(p, y)
    return loss, _softmax_backward(p, dp)


def cross_entropy(logits, y, weights=None):
    """Mean voxel negative log-likelihood, optionally with fixed per-voxel weights."""
    logp = log_softmax_channels(logits)
    g = one_hot(y, logits.shape[0])
    nll = -(logp * g).sum(axis=0)
    n = nll.size
    if weights is None:
        weights = 1.0
    loss = float((weights * nll).sum() / n)
    grad = (np.exp(logp) - g) * (weights / n)
    return loss, grad


def cosine_weights(logits, y):
    """Cosine similarity between each voxel's softmax vector and its one-hot target."""
    p = np.exp(log_softmax_channels(logits))
    target = np.take_along_axis(p, np.asarray(y)[None], axis=0)[0]
    return target / np.sqrt((p * p).sum(axis=0))


def cosine_cross_entropy(logits, y):
    # weights act as constants: no gradient flows through the similarity term
    return cross_entropy(logits, y, weights=cosine_weights(logits, y))


def composite(logits, y):
    a, ga = soft_dice(logits, y)
    b, gb = cross_entropy(logits, y)
    return a + b, ga + gb


LOSSES = {
    "soft-dice": soft_dice,
    "cross-entropy": cross_entropy,
    "cosine-weighted-cross-entropy": cosine_cross_entropy,
    "composite": composite,
}


def get_loss(kind):
    try:
        return LOSSES[kind]
    except KeyError:
        raise ConfigError(f"unknown loss kind {kind!r}; choose from {sorted(LOSSES)}") from None
