"""Segmentation quality, attack success rates and perturbation statistics."""
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt, generate_binary_structure

from .errors import ShapeError, UndefinedMetricError
from .volumes import check_same_shape

_FACES = generate_binary_structure(3, 1)


@dataclass
class SampleMetrics:
    """Per-sample scores over foreground classes ``1..C-1``."""

    dsc: list
    hd95: list
    empty: list
    hd95_undefined: list
    mean_dsc: float
    mean_hd95: float
    hd95_flag: bool = False

    def to_dict(self):
        return asdict(self)


@dataclass
class AsrAggregate:
    asr_d: float
    asr_h_signed: float
    asr_h_abs: float
    n_samples: int
    n_hd95_excluded: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d.pop("extra")
        return d


def dsc(pred, gt, c, num_classes=None):
    """Dice overlap of class ``c``; 1.0 when the class is absent from both."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    check_same_shape(pred.shape, gt.shape, "prediction and ground truth")
    if c < 0 or (num_classes is not None and c >= num_classes):
        raise ValueError(f"class {c} out of range for {num_classes} classes")
    a = pred == c
    b = gt == c
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def boundary(mask):
    """Mask voxels with a face neighbour outside the mask (array edge counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    return mask & ~binary_erosion(mask, structure=_FACES, border_value=0)


def surface_distances(a, b):
    """Distance from every boundary voxel of ``a`` to the nearest boundary voxel of ``b``."""
    ba = boundary(a)
    bb = boundary(b)
    # nearest boundary voxel of b for every voxel, distances recomputed exactly
    _, nearest = distance_transform_edt(~bb, return_indices=True)
    pts = np.argwhere(ba)
    near = nearest[(slice(None),) + tuple(pts.T)].T
    return np.sqrt(((pts - near) ** 2).sum(axis=1).astype(np.float64))


def volume_diagonal(shape):
    return float(np.sqrt(sum(n * n for n in shape)))


def hd95(a, b):
    """Symmetric 95th-percentile Hausdorff distance between two masks, in voxels.

    Returns the volume diagonal as a sentinel when either mask is empty.
    """
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    check_same_shape(a.shape, b.shape, "masks")
    if not a.any() or not b.any():
        return volume_diagonal(a.shape)
    d_ab = surface_distances(a, b)
    d_ba = surface_distances(b, a)
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def sample_metrics(pred, gt, num_classes):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    check_same_shape(pred.shape, gt.shape, "prediction and ground truth")
    dscs, hds, empty, undefined = [], [], [], []
    for c in range(1, num_classes):
        a = pred == c
        b = gt == c
        dscs.append(dsc(pred, gt, c))
        empty.append(not a.any() and not b.any())
        undefined.append(not a.any() or not b.any())
        hds.append(hd95(a, b))
    kept = [d for d, e in zip(dscs, empty) if not e]
    mean_dsc = float(np.mean(kept)) if kept else 1.0
    kept_h = [h for h, u in zip(hds, undefined) if not u]
    flag = not kept_h
    mean_hd = float(np.mean(kept_h)) if kept_h else volume_diagonal(gt.shape)
    return SampleMetrics(dscs, hds, empty, undefined, mean_dsc, mean_hd, flag)


def _paired(clean, adv):
    if len(clean) != len(adv):
        raise ShapeError(f"clean and adversarial lists differ in length: {len(clean)} vs {len(adv)}")
    if not clean:
        raise ShapeError("need at least one sample")


def asr_d(clean, adv):
    """Mean absolute drop of per-sample mean DSC."""
    _paired(clean, adv)
    return float(np.mean([abs(c.mean_dsc - a.mean_dsc) for c, a in zip(clean, adv)]))


def _hd_pairs(clean, adv):
    _paired(clean, adv)
    pairs = [(c.mean_hd95, a.mean_hd95) for c, a in zip(clean, adv)
             if not (c.hd95_flag or a.hd95_flag)]
    return pairs, len(clean) - len(pairs)


def asr_h(clean, adv):
    """``(signed, absolute)`` mean HD95 change; sentinel samples are skipped."""
    pairs, _ = _hd_pairs(clean, adv)
    if not pairs:
        raise UndefinedMetricError("HD95 is undefined (empty masks) for every sample")
    diff = np.array([a - c for c, a in pairs])
    return float(diff.mean()), float(np.abs(diff).mean())


def aggregate(clean, adv):
    pairs, excluded = _hd_pairs(clean, adv)
    if pairs:
        signed, absolute = asr_h(clean, adv)
    else:
        signed = absolute = float("nan")
    return AsrAggregate(asr_d(clean, adv), signed, absolute, len(clean), excluded)


def perturbation_stats(x, x_adv):
    """``(L-inf, L2, mean |delta|)`` of ``x_adv - x``."""
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    check_same_shape(x.shape, x_adv.shape, "clean and adversarial volumes")
    delta = x_adv - x
    return float(np.abs(delta).max()), float(np.sqrt((delta * delta).sum())), float(np.abs(delta).mean())
