"""Experiment orchestration: sliding-window inference, white-box sweeps,
surrogate x target transfer matrices, frequency-band analysis.

Reports are plain JSON-compatible dicts so that ``json.loads(json.dumps(r)) == r``.
Attacks run directly on window-shaped samples; whole-scan attacking through
sliding windows is not done.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .attacks import AttackSpec
from .errors import ConfigError, ShapeError
from .metrics import aggregate, sample_metrics
from .signal import filter_perturbation, make_band_mask
from .volumes import predict_labels

log = logging.getLogger(__name__)

REFERENCE_BANDS = ((0, 8), (0, 16), (0, 32), (16, 48), (16, 96))
REFERENCE_WINDOW = 96

NOTES = {
    "attack_granularity": "per-window: attacks run on window-shaped samples",
    "vafa": "quantization tables updated by sign ascent; perceptual-similarity term omitted",
    "asr_h": "asr_h_signed is reported in tables; asr_h_abs is the absolute-value variant",
    "hd95_units": "voxels, isotropic unit spacing",
}


# --------------------------------------------------------------------------
# sliding-window inference


def window_starts(length, window, overlap=0.5):
    """Window start offsets along one axis, last window flush with the end."""
    if length < window:
        raise ShapeError(f"axis length {length} is smaller than window {window}")
    stride = int(round(window * (1.0 - overlap)))
    if stride < 1:
        raise ConfigError(f"overlap {overlap} gives a stride below 1 for window {window}")
    starts = list(range(0, length - window + 1, stride))
    if starts[-1] != length - window:
        starts.append(length - window)
    return starts


def gaussian_importance(window):
    """Separable Gaussian weights peaking at the window centre, sigma = window / 8."""
    axes = []
    for n in window:
        sigma = n / 8.0
        i = np.arange(n) - (n - 1) / 2.0
        axes.append(np.exp(-0.5 * (i / sigma) ** 2))
    return axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]


def sliding_window_infer(model, x, window=None, overlap=0.5):
    """Blend window logits with Gaussian importance weights."""
    x = np.asarray(x, dtype=np.float64)
    window = tuple(window or model.window_shape)
    if not 0.0 <= overlap < 1.0:
        raise ConfigError(f"overlap must lie in [0, 1), got {overlap}")
    if x.ndim != 3 or any(n < w for n, w in zip(x.shape, window)):
        raise ShapeError(f"volume {x.shape} is smaller than window {window}")
    starts = [window_starts(n, w, overlap) for n, w in zip(x.shape, window)]
    g = gaussian_importance(window)
    acc = np.zeros((model.num_classes,) + x.shape)
    norm = np.zeros(x.shape)
    for i in starts[0]:
        for j in starts[1]:
            for k in starts[2]:
                sl = (slice(i, i + window[0]), slice(j, j + window[1]), slice(k, k + window[2]))
                acc[(slice(None),) + sl] += g * model.forward(x[sl])
                norm[sl] += g
    return acc / norm


# --------------------------------------------------------------------------
# experiment pieces


@dataclass
class Experiment:
    """In-memory experiment: named models, samples and attacks."""

    models: dict
    samples: list
    attacks: list
    seed: int = 0
    dataset: str = "phantom"
    bands: list = None
    config: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise ConfigError("experiment needs at least one model")
        if not self.samples:
            raise ConfigError("experiment needs at least one sample")
        self.attacks = [a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a) for a in self.attacks]


def sample_seed(seed, index):
    """Per-sample attack seed, independent of the model being attacked."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _predict(model, x):
    return predict_labels(model.forward(x))


def _craft_all(exp, model, attack, failures, model_id):
    adversaries = []
    for i, (x, y) in enumerate(exp.samples):
        try:
            adversaries.append(attack.run(model, x, y, seed=sample_seed(exp.seed, i)).x_adv)
        except Exception as exc:  # recorded, sample skipped
            log.warning("attack %s on %s failed for sample %d: %s", attack.name, model_id, i, exc)
            failures.append({"model": model_id, "attack": attack.name, "sample": i,
                             "error": f"{type(exc).__name__}: {exc}"})
            adversaries.append(None)
    return adversaries


def _clean_metrics(exp, model):
    return [sample_metrics(_predict(model, x), y, model.num_classes) for x, y in exp.samples]


def _cell(model, exp, clean, adversaries):
    pairs = [(c, sample_metrics(_predict(model, xa), y, model.num_classes))
             for c, xa, (_, y) in zip(clean, adversaries, exp.samples) if xa is not None]
    if not pairs:
        return None
    c_list, a_list = zip(*pairs)
    agg = aggregate(list(c_list), list(a_list)).to_dict()
    agg["adv_dsc"] = float(np.mean([a.mean_dsc for a in a_list]))
    agg["adv_hd95"] = _mean_hd(a_list)
    return agg


def _mean_hd(metrics):
    kept = [m.mean_hd95 for m in metrics if not m.hd95_flag]
    return float(np.mean(kept)) if kept else None


def _clean_summary(clean):
    return {"clean_dsc": float(np.mean([m.mean_dsc for m in clean])), "clean_hd95": _mean_hd(clean)}


def _report_header(exp, kind):
    return {
        "version": __version__,
        "kind": kind,
        "dataset": exp.dataset,
        "seed": exp.seed,
        "models": list(exp.models),
        "n_samples": len(exp.samples),
        "attacks": [a.to_dict() for a in exp.attacks],
        "config": exp.config,
        "notes": dict(NOTES),
    }


def _run_matrix(exp, surrogates, targets):
    """Craft once per (surrogate, attack, sample) and score on every target."""
    failures = []
    clean = {t: _clean_metrics(exp, exp.models[t]) for t in targets}
    cells = []
    for s in surrogates:
        for attack in exp.attacks:
            adversaries = _craft_all(exp, exp.models[s], attack, failures, s)
            for t in targets:
                cell = _cell(exp.models[t], exp, clean[t], adversaries)
                if cell is not None:
                    cells.append({"surrogate": s, "target": t, "attack": attack.label, **cell})
    return clean, cells, failures


def whitebox_eval(exp):
    """Attack each model with adversaries crafted on itself."""
    report = _report_header(exp, "whitebox")
    rows, failures = [], []
    for m in exp.models:
        clean, cells, fails = _run_matrix(exp, [m], [m])
        failures += fails
        summary = _clean_summary(clean[m])
        for cell in cells:
            rows.append({"dataset": exp.dataset, "attack": cell["attack"], "model": m,
                         **_asr_fields(cell), **summary})
    order = {a.label: i for i, a in enumerate(exp.attacks)}
    models = list(exp.models)
    rows.sort(key=lambda r: (order[r["attack"]], models.index(r["model"])))
    report["whitebox"] = rows
    report["failures"] = failures
    return report


def _asr_fields(cell):
    keys = ("asr_d", "asr_h_signed", "asr_h_abs", "n_samples", "n_hd95_excluded", "adv_dsc", "adv_hd95")
    return {k: cell[k] for k in keys}


def transfer_eval(exp, surrogates=None, targets=None):
    """Surrogate x target ASR matrices, one per attack.

    The diagonal reuses the surrogate's own adversaries, so it equals the
    white-box result for the same seeds.
    """
    surrogates = list(surrogates or exp.models)
    targets = list(targets or exp.models)
    if len(set(surrogates) | set(targets)) < 2:
        raise ConfigError("transfer evaluation needs at least two models")
    report = _report_header(exp, "transfer")
    clean, cells, failures = _run_matrix(exp, surrogates, targets)
    matrices = {}
    for attack in exp.attacks:
        grid = {s: {} for s in surrogates}
        for c in cells:
            if c["attack"] == attack.label:
                grid[c["surrogate"]][c["target"]] = _asr_fields(c)
        matrices[attack.label] = {"surrogates": surrogates, "targets": targets, "cells": grid}
    report["clean"] = {t: _clean_summary(clean[t]) for t in targets}
    report["transfer"] = matrices
    report["failures"] = failures
    return report


def default_bands(window):
    """The reference band list for 96^3 windows, rescaled to smaller windows."""
    n = min(window)
    if n >= REFERENCE_WINDOW:
        return [list(b) for b in REFERENCE_BANDS]
    scale = n / REFERENCE_WINDOW
    bands = []
    for a, b in REFERENCE_BANDS:
        band = [int(round(a * scale)), max(int(round(b * scale)), 1)]
        if band not in bands:
            bands.append(band)
    return bands


def band_label(band):
    return f"{band[0]}-{band[1]}"


def frequency_analysis(exp, bands=None):
    """Mean DSC after keeping only one DCT band of each white-box perturbation."""
    report = _report_header(exp, "frequency")
    failures, curves = [], []
    for m, model in exp.models.items():
        bands_m = [list(b) for b in (bands or exp.bands or default_bands(model.window_shape))]
        masks = {}
        for a, b in bands_m:
            for x, _ in exp.samples:
                key = (a, b, x.shape)
                if key not in masks:
                    masks[key] = make_band_mask(x.shape, a, b)
        clean = _clean_metrics(exp, model)
        for attack in exp.attacks:
            adversaries = _craft_all(exp, model, attack, failures, m)
            kept = [(x, y, xa) for (x, y), xa in zip(exp.samples, adversaries) if xa is not None]
            if not kept:
                continue
            c = model.num_classes
            curve = {
                "model": m,
                "attack": attack.label,
                "clean": float(np.mean([cm.mean_dsc for cm, xa in zip(clean, adversaries) if xa is not None])),
                "unrestricted": float(np.mean([sample_metrics(_predict(model, xa), y, c).mean_dsc for x, y, xa in kept])),
                "bands": [],
            }
            for a, b in bands_m:
                scores = [sample_metrics(_predict(model, filter_perturbation(x, xa, masks[(a, b, x.shape)])), y, c).mean_dsc
                          for x, y, xa in kept]
                curve["bands"].append({"band": [a, b], "label": band_label([a, b]), "dsc": float(np.mean(scores))})
            curves.append(curve)
    report["bands"] = curves
    report["failures"] = failures
    return report
