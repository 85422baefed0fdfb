"""Synthetic ellipsoid phantoms standing in for annotated scans."""
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    shape: tuple = (32, 32, 32)
    num_classes: int = 3
    blobs: tuple = (1, 3)
    noise: float = 0.1
    smooth: float = 0.0
    radius: tuple = (0.12, 0.28)

    def intensities(self):
        return np.linspace(0.2, 0.8, self.num_classes)


def _ellipsoid(rng, shape, radius):
    shape = np.asarray(shape, dtype=np.float64)
    radii = rng.uniform(*radius, size=3) * shape
    radii = np.maximum(radii, 1.5)
    center = rng.uniform(np.minimum(radii, shape / 2), np.maximum(shape - 1 - radii, shape / 2))
    grids = np.ogrid[tuple(slice(0, int(n)) for n in shape)]
    dist = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return dist <= 1.0


def generate_phantom(spec):
    """Return ``(volume, labels)`` for a phantom spec.

    Each foreground class gets a random number of ellipsoids; later classes
    paint over earlier ones. Intensities are the class base value plus noise
    bounded by ``noise`` in absolute value (white, or Gaussian-smoothed with
    correlation length ``smooth`` voxels), clipped to [0, 1].
    """
    if spec.num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {spec.num_classes}")
    shape = tuple(int(n) for n in spec.shape)
    if len(shape) != 3 or min(shape) < 8:
        raise ShapeError(f"phantom shape must have 3 axes of at least 8 voxels, got {shape}")
    rng = np.random.default_rng(spec.seed)
    labels = np.zeros(shape, dtype=np.int64)
    lo, hi = spec.blobs
    for c in range(1, spec.num_classes):
        for _ in range(rng.integers(lo, hi + 1)):
            labels[_ellipsoid(rng, shape, spec.radius)] = c
    for c in range(1, spec.num_classes):
        if not np.any(labels == c):
            # restore a class that was painted over with a small cube on background
            free = np.argwhere(labels == 0)
            if len(free) == 0:
                free = np.argwhere(labels >= 0)
            i, j, k = free[rng.integers(len(free))]
            block = labels[max(i - 1, 0):i + 2, max(j - 1, 0):j + 2, max(k - 1, 0):k + 2]
            block[block == 0] = c
            labels[i, j, k] = c
    base = spec.intensities()[labels]
    if spec.noise > 0:
        field = rng.uniform(-1.0, 1.0, size=shape)
        if spec.smooth > 0:
            field = gaussian_filter(field, spec.smooth, mode="wrap")
            field /= np.abs(field).max()
        base = base + spec.noise * field
    return np.clip(base, 0.0, 1.0), labels


def phantom_dataset(count, base_seed=0, **kwargs):
    """``count`` phantoms with seeds ``base_seed, base_seed + 1, ...``."""
    return [generate_phantom(PhantomSpec(seed=base_seed + i, **kwargs)) for i in range(count)]
