"""Pixel- and frequency-domain perturbation generators.

All attacks *maximise* a segmentation loss (soft-dice unless noted), which
drives the Dice score of the model's prediction down. Every attack returns
an :class:`AttackOutcome` and is deterministic given its inputs and seed.
"""
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .metrics import perturbation_stats
from .signal import (
    QuantTableError,
    assemble_patches,
    dct3,
    idct3,
    partition_patches,
    quantize_dequantize,
    quantize_dequantize_vjp,
)
from .volumes import check_volume

ATTACKS = ("gn", "fgsm", "pgd", "cospgd", "vafa")
DISPLAY_NAMES = {"gn": "GN", "fgsm": "FGSM", "pgd": "PGD", "cospgd": "CosPGD", "vafa": "VAFA"}

# DCT coefficients are quantized on the 8-bit intensity scale
INTENSITY_SCALE = 255.0


def parse_fraction(value):
    """Parse ``8/255``, ``0.03`` or a number exactly, returning a float."""
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(Fraction(str(value).strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"cannot parse {value!r} as a number or fraction") from None


@dataclass
class PixelAttackConfig:
    epsilon: float = 8 / 255
    alpha: float = None
    steps: int = 20
    seed: int = 0

    def __post_init__(self):
        self.epsilon = parse_fraction(self.epsilon)
        if self.alpha is None:
            self.alpha = self.epsilon / 4
        self.alpha = parse_fraction(self.alpha)
        if not 0.0 <= self.alpha <= self.epsilon <= 1.0:
            raise ConfigError(f"need 0 <= alpha <= epsilon <= 1, got alpha={self.alpha}, epsilon={self.epsilon}")
        if int(self.steps) < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        self.steps = int(self.steps)


@dataclass
class VafaConfig:
    q_max: float = 30.0
    patch: int = 32
    steps: int = 20
    step_size: float = None
    seed: int = 0

    def __post_init__(self):
        self.q_max = parse_fraction(self.q_max)
        if self.q_max < 1:
            raise ConfigError(f"q_max must be >= 1, got {self.q_max}")
        if self.step_size is None:
            self.step_size = self.q_max / 10
        if int(self.steps) < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        self.steps = int(self.steps)
        self.patch = int(self.patch)


@dataclass
class AttackOutcome:
    x_adv: np.ndarray
    trace: list
    linf: float
    l2: float
    mean_abs: float
    wall_time: float
    quant_tables: np.ndarray = None
    notes: dict = field(default_factory=dict)

    def stats(self):
        return {"linf": self.linf, "l2": self.l2, "mean_abs": self.mean_abs}


def _outcome(x, x_adv, trace, start, **kwargs):
    linf, l2, mean_abs = perturbation_stats(x, x_adv)
    return AttackOutcome(x_adv, [float(t) for t in trace], linf, l2, mean_abs,
                         time.perf_counter() - start, **kwargs)


def gaussian_noise(x, epsilon, seed=0):
    """Additive N(0, (eps/2)^2) noise clipped to the eps-ball and to [0, 1].

    Model-blind, so the single trace entry is the L-inf size of the noise.
    """
    start = time.perf_counter()
    x = check_volume(x)
    epsilon = parse_fraction(epsilon)
    if epsilon < 0:
        raise ConfigError(f"epsilon must be >= 0, got {epsilon}")
    noise = np.random.default_rng(seed).normal(0.0, epsilon / 2, size=x.shape)
    x_adv = np.clip(x + np.clip(noise, -epsilon, epsilon), 0.0, 1.0)
    return _outcome(x, x_adv, [np.abs(x_adv - x).max()], start)


def _signed_ascent(model, x, y, cfg, steps, alpha, loss):
    start = time.perf_counter()
    x = check_volume(x)
    eps = cfg.epsilon
    lo = np.maximum(x - eps, 0.0)
    hi = np.minimum(x + eps, 1.0)
    x_adv = x.copy()
    trace = []
    _, grad = model.loss_and_grad(x_adv, y, loss)
    for t in range(steps):
        x_adv = np.clip(x_adv + alpha * np.sign(grad), lo, hi)
        if t + 1 < steps:
            value, grad = model.loss_and_grad(x_adv, y, loss)
        else:
            value = model.loss(x_adv, y, loss)
        trace.append(value)
    return _outcome(x, x_adv, trace, start)


def fgsm(model, x, y, cfg):
    """One signed-gradient step of size epsilon; trace holds the final loss."""
    return _signed_ascent(model, x, y, cfg, 1, cfg.epsilon, "soft-dice")


def pgd(model, x, y, cfg):
    """L-inf PGD from the clean input (no random start) on the soft-dice loss.

    ``trace[t]`` is the objective after update ``t``.
    """
    return _signed_ascent(model, x, y, cfg, cfg.steps, cfg.alpha, "soft-dice")


def cospgd(model, x, y, cfg):
    """PGD on cross-entropy with per-voxel cosine weights.

    Each voxel's term is scaled by the cosine similarity between its softmax
    vector and the one-hot target, recomputed at every iterate and held
    constant for the gradient.
    """
    return _signed_ascent(model, x, y, cfg, cfg.steps, cfg.alpha, "cosine-weighted-cross-entropy")


def vafa_reconstruct(x, q, patch, quantize=True):
    """Quantize every patch's DCT with its table and map back to a volume.

    Returns ``(x_adv, coeffs)`` where ``coeffs`` are the scaled DCT
    coefficients per patch. With ``quantize=False`` the quantization stage is
    skipped, which leaves only the partition/transform round trip.
    """
    patches = partition_patches(x, patch) * INTENSITY_SCALE
    coeffs = dct3(patches)
    if quantize:
        coeffs_q = quantize_dequantize(coeffs, q)
    else:
        coeffs_q = coeffs
    recon = idct3(coeffs_q) / INTENSITY_SCALE
    return np.clip(assemble_patches(recon, x.shape), 0.0, 1.0), coeffs


def vafa(model, x, y, cfg):
    """Learn one quantization table per patch to maximise the soft-dice loss.

    Tables start at 1, move by ``cfg.step_size * sign(grad)`` per step using
    straight-through gradients of the rounding, and are projected back into
    ``[1, q_max]``. The perceptual-similarity term of the original method is
    not used.
    """
    start = time.perf_counter()
    x = check_volume(x)
    p = cfg.patch
    if any(n % p for n in x.shape):
        raise ConfigError(f"volume shape {x.shape} is not divisible by VAFA patch size {p}")
    n_patches = int(np.prod([n // p for n in x.shape]))
    q = np.ones((n_patches, p, p, p))
    trace = []
    for _ in range(cfg.steps):
        x_adv, coeffs = vafa_reconstruct(x, q, p)
        value, grad = model.loss_and_grad(x_adv, y, "soft-dice")
        trace.append(value)
        # back through the clip, the inverse DCT (adjoint = forward DCT) and rounding
        inside = (x_adv > 0.0) & (x_adv < 1.0)
        g_patch = partition_patches(grad * inside, p) / INTENSITY_SCALE
        _, g_q = quantize_dequantize_vjp(coeffs, q, dct3(g_patch))
        q = np.clip(q + cfg.step_size * np.sign(g_q), 1.0, cfg.q_max)
    x_adv, _ = vafa_reconstruct(x, q, p)
    if not (q.min() >= 1.0 and q.max() <= cfg.q_max):
        raise QuantTableError("quantization table left [1, q_max] after projection")
    return _outcome(x, x_adv, trace, start, quant_tables=q,
                    notes={"perceptual_term": "omitted", "q_update": "sign ascent"})


@dataclass
class AttackSpec:
    """Serializable description of one attack run, as used in configs."""

    name: str
    epsilon: float = 8 / 255
    alpha: float = None
    steps: int = 20
    q_max: float = 30.0
    patch: int = 32
    step_size: float = None

    def __post_init__(self):
        self.name = str(self.name).lower()
        if self.name not in ATTACKS:
            raise ConfigError(f"unknown attack {self.name!r}; choose from {list(ATTACKS)}")
        self.epsilon = parse_fraction(self.epsilon)
        if self.alpha is not None:
            self.alpha = parse_fraction(self.alpha)
        if self.step_size is not None:
            self.step_size = parse_fraction(self.step_size)
        self.q_max = parse_fraction(self.q_max)
        self.steps = int(self.steps)
        self.patch = int(self.patch)
        # validate eagerly so config errors surface before any work
        self.config(0)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        aliases = {"eps": "epsilon", "qmax": "q_max", "attack": "name"}
        for old, new in aliases.items():
            if old in d:
                d[new] = d.pop(old)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown attack config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def label(self):
        return DISPLAY_NAMES[self.name]

    def to_dict(self):
        d = {"name": self.name}
        if self.name == "vafa":
            d.update(q_max=self.q_max, patch=self.patch, steps=self.steps,
                     step_size=self.config(0).step_size)
        elif self.name == "gn":
            d.update(epsilon=self.epsilon)
        else:
            cfg = self.config(0)
            d.update(epsilon=cfg.epsilon, alpha=cfg.alpha,
                     steps=1 if self.name == "fgsm" else cfg.steps)
        return d

    def config(self, seed):
        if self.name == "vafa":
            return VafaConfig(self.q_max, self.patch, self.steps, self.step_size, seed)
        steps = 1 if self.name in ("fgsm", "gn") else self.steps
        return PixelAttackConfig(self.epsilon, self.alpha, steps, seed)

    def run(self, model, x, y, seed=0):
        cfg = self.config(seed)
        if self.name == "gn":
            return gaussian_noise(x, cfg.epsilon, seed)
        return {"fgsm": fgsm, "pgd": pgd, "cospgd": cospgd, "vafa": vafa}[self.name](model, x, y, cfg)
