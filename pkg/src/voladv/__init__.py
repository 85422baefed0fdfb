"""Volumetric adversarial-robustness toolkit: toy 3D segmenters, pixel and
frequency-domain attacks, segmentation metrics and an experiment harness."""
__version__ = "0.1.0"

from .attacks import AttackSpec, cospgd, fgsm, gaussian_noise, pgd, vafa
from .checkpoint import load_model, save_model
from .errors import ConfigError, ShapeError, TrainingError, UndefinedMetricError, VoladvError
from .models import build_model, input_gradient, loss_value
from .phantom import PhantomSpec, generate_phantom, phantom_dataset
from .training import train_model

__all__ = [
    "AttackSpec", "ConfigError", "PhantomSpec", "ShapeError", "TrainingError",
    "UndefinedMetricError", "VoladvError", "__version__", "build_model", "cospgd",
    "fgsm", "gaussian_noise", "generate_phantom", "input_gradient", "load_model",
    "loss_value", "pgd", "phantom_dataset", "save_model", "train_model", "vafa",
]
