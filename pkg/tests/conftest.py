import time
from types import SimpleNamespace

import numpy as np
import pytest

from voladv.models import ConvSeg, ScanSeg, build_model
from voladv.phantom import phantom_dataset
from voladv.training import DEFAULT_EPOCHS, DEFAULT_LR, train_model

DESK_ARCHS = ("conv-seg", "mix-seg", "scan-seg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def relu_pattern(model, x):
    """Signs of every ReLU pre-activation, or None for ReLU-free models."""
    if isinstance(model, (ConvSeg, ScanSeg)):
        _, cache = model.forward(x, return_cache=True)
        if isinstance(model, ConvSeg):
            pre = (cache[1], cache[3])
        else:
            pre = (cache[1],)
        return np.concatenate([(p > 0).ravel() for p in pre])
    return None


def _fd_check(model, x, y, kind, voxels, h=1e-4):
    """Relative errors between the analytic input gradient and central FD.

    Voxels whose +-h step flips a ReLU are skipped: the loss has a kink
    there and FD does not estimate the one-sided derivative.
    """
    _, grad = model.loss_and_grad(x, y, kind)
    base = relu_pattern(model, x)
    errors = []
    for v in voxels:
        xp, xm = x.copy(), x.copy()
        xp[v] += h
        xm[v] -= h
        if base is not None and not (np.array_equal(relu_pattern(model, xp), base)
                                     and np.array_equal(relu_pattern(model, xm), base)):
            continue
        fd = (model.loss(xp, y, kind) - model.loss(xm, y, kind)) / (2 * h)
        scale = max(abs(fd), abs(grad[v]), 1e-10)
        errors.append(abs(grad[v] - fd) / scale)
    return errors


@pytest.fixture
def fd_check():
    return _fd_check


@pytest.fixture(scope="session")
def small_data():
    return phantom_dataset(4, 500, shape=(16, 16, 16))


@pytest.fixture(scope="session")
def small_models():
    return {arch: build_model(arch, 3, (16, 16, 16), seed=5) for arch in ("conv-seg", "mix-seg", "scan-seg")}


@pytest.fixture(scope="session")
def desk_fixture():
    """Seed-42 models trained on 16 phantoms of 32^3, plus 16 held-out phantoms."""
    start = time.perf_counter()
    train = phantom_dataset(16, 0, shape=(32, 32, 32))
    test = phantom_dataset(16, 1000, shape=(32, 32, 32))
    models = {}
    for arch in DESK_ARCHS:
        model = build_model(arch, 3, (32, 32, 32), seed=42)
        models[arch] = train_model(model, train, epochs=DEFAULT_EPOCHS[arch],
                                   learning_rate=DEFAULT_LR[arch], seed=42)
    return SimpleNamespace(models=models, train=train, test=test, train_seconds=time.perf_counter() - start)


DESK_ATTACKS = [
    {"name": "gn", "eps": "8/255"},
    {"name": "fgsm", "eps": "8/255"},
    {"name": "pgd", "eps": "8/255", "steps": 20},
    {"name": "vafa", "q_max": 30, "patch": 8, "steps": 20},
]


@pytest.fixture(scope="session")
def desk_whitebox(desk_fixture):
    """White-box report for the trained desk models, plus its wall time."""
    from voladv.harness import Experiment, whitebox_eval

    start = time.perf_counter()
    exp = Experiment(desk_fixture.models, desk_fixture.test, DESK_ATTACKS, seed=42)
    report = whitebox_eval(exp)
    return SimpleNamespace(report=report, seconds=time.perf_counter() - start)


# acceptance criteria report one line each at the end of the run
_CRITERIA = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        detail = "; ".join(self.details)
        if exc is not None:
            detail = (detail + "; " if detail else "") + f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"criterion {self.number:2d} {status}  {self.title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[self.number] = line
        print(line)
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
