"""Separable 3D DCT, patch tiling, quantization and frequency-band masks."""
from functools import lru_cache

import numpy as np

from .errors import ShapeError, VoladvError


class QuantTableError(VoladvError, ValueError):
    kind = "quant-table"


class BandError(VoladvError, ValueError):
    kind = "band"


@lru_cache(maxsize=None)
def dct_matrix(n):
    """Orthonormal DCT-II matrix ``M`` so that ``X = M @ x``."""
    if n < 1:
        raise ShapeError(f"transform length must be positive, got {n}")
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0, :] = np.sqrt(1.0 / n)
    m.setflags(write=False)
    return m


def _apply_axes(x, transpose):
    # transform the last three axes; leading axes are a batch
    out = np.asarray(x, dtype=np.float64)
    for axis in (-3, -2, -1):
        m = dct_matrix(out.shape[axis])
        if transpose:
            m = m.T
        out = np.moveaxis(np.tensordot(out, m, axes=([axis], [1])), -1, axis)
    return out


def dctn3(x):
    """Orthonormal DCT-II over the last three axes of any shape."""
    return _apply_axes(x, transpose=False)


def idctn3(coeffs):
    return _apply_axes(coeffs, transpose=True)


def _check_cube(block):
    shape = np.shape(block)[-3:]
    if len(shape) != 3 or len(set(shape)) != 1:
        raise ShapeError(f"expected a cubic block (p, p, p), got {np.shape(block)}")
    if shape[0] < 2:
        raise ShapeError(f"cube side must be at least 2, got {shape[0]}")


def dct3(block):
    """Type-II orthonormal DCT of a cube (or a stack of cubes on leading axes)."""
    _check_cube(block)
    return dctn3(block)


def idct3(coeffs):
    _check_cube(coeffs)
    return idctn3(coeffs)


def partition_patches(x, p):
    """Split a volume into non-overlapping ``p**3`` cubes in raster order.

    Returns an array of shape ``(n_patches, p, p, p)``.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"expected a 3D volume, got shape {x.shape}")
    pad = [(-n) % p for n in x.shape]
    if any(pad):
        raise ShapeError(
            f"volume shape {x.shape} is not divisible by patch size {p}; "
            f"pad axes by {tuple(pad)}"
        )
    h, w, d = (n // p for n in x.shape)
    return x.reshape(h, p, w, p, d, p).transpose(0, 2, 4, 1, 3, 5).reshape(-1, p, p, p)


def assemble_patches(patches, shape):
    patches = np.asarray(patches)
    p = patches.shape[-1]
    h, w, d = (n // p for n in shape)
    if patches.shape[0] != h * w * d or any(n % p for n in shape):
        raise ShapeError(f"{patches.shape[0]} patches of side {p} cannot tile {tuple(shape)}")
    return patches.reshape(h, w, d, p, p, p).transpose(0, 3, 1, 4, 2, 5).reshape(shape)


def round_half_away(v):
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def check_quant_table(q, q_max=None):
    q = np.asarray(q, dtype=np.float64)
    if not np.all(q >= 1.0):
        raise QuantTableError(f"quantization divisors must be >= 1, min is {q.min()}")
    if q_max is not None and not np.all(q <= q_max):
        raise QuantTableError(f"quantization divisors must be <= q_max={q_max}, max is {q.max()}")
    return q


def quantize_dequantize(coeffs, q, q_max=None):
    """``round(coeffs / q) * q`` with round-half-away-from-zero."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    q = check_quant_table(q, q_max)
    if q.ndim and q.shape != coeffs.shape[coeffs.ndim - q.ndim:]:
        raise ShapeError(f"quantization table {np.shape(q)} does not match coefficients {coeffs.shape}")
    return round_half_away(coeffs / q) * q


def quantize_dequantize_vjp(coeffs, q, grad_out):
    """Straight-through vector-Jacobian product.

    The rounded quotient is treated as a constant, so the gradient w.r.t. the
    coefficients is the identity and w.r.t. ``q`` it is ``round(coeffs / q)``.
    Returns ``(grad_coeffs, grad_q)``.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    return grad_out, grad_out * round_half_away(np.asarray(coeffs) / q)


def make_band_mask(shape, a, b):
    """Binary mask passing coefficients with ``a <= max(i, j, k) < b``."""
    shape = tuple(int(n) for n in shape)
    if not a < b:
        raise BandError(f"band lower bound must be below upper bound, got ({a}, {b})")
    if a < 0:
        raise BandError(f"band lower bound must be non-negative, got {a}")
    if b > min(shape):
        raise BandError(f"band ({a}, {b}) exceeds spectrum extent {shape}")
    i, j, k = np.indices(shape, sparse=True)
    m = np.maximum(np.maximum(i, j), k)
    return (m >= a) & (m < b)


def filter_perturbation(x, x_adv, mask, clip=True):
    """Keep only the masked DCT components of ``x_adv - x``.

    Computes ``idct(dct(x_adv - x) * mask) + x`` with one whole-volume
    transform, then clips to [0, 1] unless ``clip`` is false.
    """
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    mask = np.asarray(mask)
    if x.shape != x_adv.shape or mask.shape != x.shape:
        raise ShapeError(
            f"shape mismatch: x {x.shape}, x_adv {x_adv.shape}, mask {mask.shape}"
        )
    out = idctn3(dctn3(x_adv - x) * mask) + x
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out
