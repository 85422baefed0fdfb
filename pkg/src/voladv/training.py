"""Seeded SGD-with-momentum training of the toy segmenters."""
import logging

import numpy as np

from .errors import TrainingError
from .losses import get_loss
from .volumes import check_labels, check_same_shape

log = logging.getLogger(__name__)

# per-architecture settings; each reaches held-out DSC >= 0.75 after training on 16 phantoms at 32^3
DEFAULT_LR = {"conv-seg": 0.02, "mix-seg": 0.1, "scan-seg": 0.05}
DEFAULT_EPOCHS = {"conv-seg": 10, "mix-seg": 20, "scan-seg": 10}


def train_model(model, data, epochs=20, learning_rate=0.05, seed=0,
                momentum=0.9, loss="composite"):
    """Fit ``model`` on ``(volume, labels)`` pairs, one sample per step.

    Returns a new model; the mean loss of each epoch is stored on it as
    ``training_loss``. The input model is left untouched.
    """
    if not data:
        raise TrainingError("cannot train on an empty dataset")
    loss_fn = get_loss(loss)
    samples = []
    for i, (x, y) in enumerate(data):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != model.window_shape:
            raise TrainingError(f"sample {i} has shape {x.shape}, expected window {model.window_shape}")
        x = model.check_input(x)
        y = check_labels(y, model.num_classes)
        check_same_shape(x.shape, y.shape, f"sample {i} volume and labels")
        samples.append((x, y))

    rng = np.random.default_rng(seed)
    current = model.with_params(model.param_vector())
    velocity = {k: np.zeros_like(v) for k, v in current.params.items()}
    history = []
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(samples)):
            x, y = samples[i]
            logits, cache = current.forward(x, return_cache=True)
            value, dlogits = loss_fn(logits, y)
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch}, sample {i} "
                    f"(arch={current.arch}, lr={learning_rate})"
                )
            _, grads = current.backward(cache, dlogits)
            for k, g in grads.items():
                velocity[k] = momentum * velocity[k] + g
                current.params[k] = current.params[k] - learning_rate * velocity[k]
            total += value
        history.append(total / len(samples))
        log.debug("%s epoch %d loss %.5f", current.arch, epoch, history[-1])

    vec = current.param_vector()
    if not np.all(np.isfinite(vec)):
        raise TrainingError(f"training produced non-finite parameters (arch={current.arch})")
    # float32-representable parameters, so checkpoints round-trip bit-exactly
    trained = current.with_params(vec.astype(np.float32).astype(np.float64))
    trained.training_loss = history
    return trained
