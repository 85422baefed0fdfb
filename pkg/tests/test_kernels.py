import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voladv import _kernels_py as py
from voladv import kernels

ext = pytest.importorskip("voladv._kernels", reason="compiled extension not built")


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def _inputs(seed, length, width):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 2, (length, width))
    zg = rng.normal(0, 2, (length, width))
    return z, _sigmoid(z), _sigmoid(zg), rng.standard_normal((length, width))


def _reference(z, zg, n_fwd):
    # direct loop over the definition, one column at a time
    a, u = _sigmoid(zg), z * _sigmoid(z)
    h = np.zeros_like(z)
    for j in range(z.shape[1]):
        order = range(len(z)) if j < n_fwd else range(len(z) - 1, -1, -1)
        prev = 0.0
        for t in order:
            prev = a[t, j] * prev + (1 - a[t, j]) * u[t, j]
            h[t, j] = prev
    return h


@pytest.mark.parametrize("mod", [py, ext], ids=["python", "cython"])
def test_forward_matches_definition(mod):
    rng = np.random.default_rng(0)
    z, zg = rng.normal(0, 2, (40, 5)), rng.normal(0, 2, (40, 5))
    h = mod.gated_scan(z, _sigmoid(z), _sigmoid(zg), 2)
    np.testing.assert_allclose(h, _reference(z, zg, 2), atol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 200), st.integers(1, 9), st.data())
def test_backends_agree(seed, length, width, data):
    n_fwd = data.draw(st.integers(0, width))
    z, sz, a, grad = _inputs(seed, length, width)
    h_py = py.gated_scan(z, sz, a, n_fwd)
    h_ext = ext.gated_scan(z, sz, a, n_fwd)
    np.testing.assert_allclose(h_ext, h_py, rtol=1e-12, atol=1e-12)
    for u, v in zip(ext.gated_scan_backward(z, sz, a, h_ext, grad, n_fwd),
                    py.gated_scan_backward(z, sz, a, h_py, grad, n_fwd)):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("mod", [py, ext], ids=["python", "cython"])
def test_backward_matches_fd(mod):
    rng = np.random.default_rng(3)
    z, zg, grad = rng.normal(0, 2, (12, 4)), rng.normal(0, 2, (12, 4)), rng.standard_normal((12, 4))

    def objective(z, zg):
        return (mod.gated_scan(z, _sigmoid(z), _sigmoid(zg), 2) * grad).sum()

    h = mod.gated_scan(z, _sigmoid(z), _sigmoid(zg), 2)
    dz, dzg = mod.gated_scan_backward(z, _sigmoid(z), _sigmoid(zg), h, grad, 2)
    eps = 1e-6
    for idx in [(0, 0), (5, 1), (11, 2), (3, 3)]:
        for arr, d in ((z, dz), (zg, dzg)):
            p, m = arr.copy(), arr.copy()
            p[idx] += eps
            m[idx] -= eps
            fd = ((objective(p, zg) - objective(m, zg)) if arr is z else
                  (objective(z, p) - objective(z, m))) / (2 * eps)
            assert abs(d[idx] - fd) < 1e-7


def test_backend_is_compiled_by_default():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_fallback():
    env = dict(os.environ, VOLADV_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from voladv import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_model_gradients_identical_across_backends():
    code = ("import numpy as np; from voladv.models import build_model;"
            "m = build_model('scan-seg', 3, (8, 8, 8), seed=1);"
            "r = np.random.default_rng(0); x = r.uniform(size=(8, 8, 8)); y = r.integers(0, 3, (8, 8, 8));"
            "print(float(m.loss_and_grad(x, y)[1].sum()))")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, VOLADV_PURE_PYTHON=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        outs.append(float(res.stdout))
    assert abs(outs[0] - outs[1]) < 1e-10
