"""Validation and elementary maps on volumes, label volumes and logits.

Volumes are plain ``float64`` arrays of shape ``(H, W, D)`` with values in
[0, 1]; label volumes are integer arrays of the same shape; logits are
``(C, H, W, D)`` arrays.
"""
import numpy as np

from .errors import ShapeError

AXES = ("H", "W", "D")


def check_volume(x, name="volume"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"{name} must be a non-empty 3D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeError(f"{name} contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ShapeError(f"{name} values must lie in [0, 1], got [{x.min()}, {x.max()}]")
    return x


def check_labels(y, num_classes=None, name="labels"):
    y = np.asarray(y)
    if y.ndim != 3:
        raise ShapeError(f"{name} must be a 3D array, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ShapeError(f"{name} must hold integer class ids")
    y = y.astype(np.int64)
    if y.size and y.min() < 0:
        raise ShapeError(f"{name} contains negative class ids")
    if num_classes is not None and y.size and y.max() >= num_classes:
        raise ShapeError(f"{name} contains class {y.max()} but num_classes={num_classes}")
    return y


def check_same_shape(a_shape, b_shape, what="shapes"):
    if len(a_shape) != len(b_shape):
        raise ShapeError(f"{what} differ in rank: {tuple(a_shape)} vs {tuple(b_shape)}")
    for axis, (m, n) in enumerate(zip(a_shape, b_shape)):
        if m != n:
            label = AXES[axis] if len(a_shape) == 3 else str(axis)
            raise ShapeError(f"{what} differ along axis {label}: {m} vs {n}")


def check_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 4:
        raise ShapeError(f"logits must have shape (C, H, W, D), got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ShapeError("logits contain non-finite values")
    return logits


def softmax_channels(logits):
    logits = check_logits(logits)
    z = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def log_softmax_channels(logits):
    z = logits - logits.max(axis=0, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=0, keepdims=True))


def predict_labels(logits):
    # np.argmax returns the first maximum, i.e. the lowest class on ties
    return np.argmax(np.asarray(logits), axis=0).astype(np.int64)


def one_hot(y, num_classes):
    y = np.asarray(y)
    return (np.arange(num_classes).reshape((-1,) + (1,) * y.ndim) == y[None]).astype(np.float64)
