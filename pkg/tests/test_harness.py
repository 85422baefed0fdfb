import json

import numpy as np
import pytest

from voladv.attacks import AttackSpec
from voladv.errors import ConfigError, ShapeError
from voladv.harness import (
    Experiment,
    default_bands,
    frequency_analysis,
    gaussian_importance,
    sample_seed,
    sliding_window_infer,
    transfer_eval,
    whitebox_eval,
    window_starts,
)

ATTACKS = [AttackSpec("gn"), AttackSpec("fgsm"), AttackSpec("pgd", steps=2)]


def _exp(models, data, attacks=ATTACKS, **kw):
    return Experiment(dict(models), data[:2], attacks, seed=7, **kw)


def test_window_starts():
    assert window_starts(64, 32, 0.5) == [0, 16, 32]
    assert window_starts(32, 32, 0.5) == [0]
    assert window_starts(40, 32, 0.5) == [0, 8]
    assert window_starts(70, 32, 0.0) == [0, 32, 38]
    with pytest.raises(ShapeError):
        window_starts(16, 32)


def test_window_starts_cover_every_voxel():
    for length in range(8, 60):
        for window in (8, 16):
            if window > length:
                continue
            covered = np.zeros(length, bool)
            for s in window_starts(length, window, 0.25):
                covered[s:s + window] = True
            assert covered.all()


def test_gaussian_importance():
    g = gaussian_importance((8, 8, 8))
    assert g.shape == (8, 8, 8) and np.all(g > 0)
    np.testing.assert_allclose(g, g[::-1, ::-1, ::-1])
    g1 = gaussian_importance((16, 1, 1))[:, 0, 0]
    i = np.arange(16) - 7.5
    np.testing.assert_allclose(g1, np.exp(-0.5 * (i / 2.0) ** 2))


def test_sliding_window_equals_forward(small_models, rng):
    for model in small_models.values():
        x = rng.uniform(size=(16, 16, 16))
        assert np.abs(sliding_window_infer(model, x) - model.forward(x)).max() < 1e-6


def test_sliding_window_larger_volume(small_models, rng):
    model = small_models["conv-seg"]
    x = rng.uniform(size=(24, 16, 20))
    out = sliding_window_infer(model, x, overlap=0.5)
    assert out.shape == (3, 24, 16, 20)
    # a window-aligned crop away from borders is blended from overlapping windows
    assert np.all(np.isfinite(out))
    with pytest.raises(ShapeError):
        sliding_window_infer(model, rng.uniform(size=(8, 16, 16)))
    with pytest.raises(ConfigError):
        sliding_window_infer(model, x, overlap=1.0)


def test_sample_seed():
    assert sample_seed(0, 1) == sample_seed(0, 1)
    assert len({sample_seed(s, i) for s in range(5) for i in range(5)}) == 25


def test_whitebox_rows_and_zero_budget(small_models, small_data):
    exp = _exp(small_models, small_data, [AttackSpec("fgsm", epsilon=0), AttackSpec("gn")])
    report = whitebox_eval(exp)
    rows = report["whitebox"]
    assert [(r["attack"], r["model"]) for r in rows] == [
        (a, m) for a in ("FGSM", "GN") for m in ("conv-seg", "mix-seg", "scan-seg")]
    for r in rows[:3]:
        assert r["asr_d"] == 0.0 and r["asr_h_signed"] == 0.0
    assert report["failures"] == []
    assert json.loads(json.dumps(report)) == report


def test_transfer_diagonal_matches_whitebox(small_models, small_data):
    exp = _exp(small_models, small_data)
    wb = {(r["attack"], r["model"]): r for r in whitebox_eval(exp)["whitebox"]}
    tr = transfer_eval(exp)
    for label, matrix in tr["transfer"].items():
        assert matrix["surrogates"] == list(small_models)
        for s in matrix["surrogates"]:
            assert set(matrix["cells"][s]) == set(small_models)
            diag = matrix["cells"][s][s]
            for key in ("asr_d", "asr_h_signed", "asr_h_abs", "adv_dsc"):
                assert diag[key] == wb[(label, s)][key]
    assert set(tr["clean"]) == set(small_models)


def test_transfer_needs_two_models(small_models, small_data):
    exp = _exp({"conv-seg": small_models["conv-seg"]}, small_data)
    with pytest.raises(ConfigError):
        transfer_eval(exp)


def test_failures_are_recorded(small_models, small_data):
    exp = _exp({"conv-seg": small_models["conv-seg"]}, small_data, [AttackSpec("vafa", patch=5, steps=1),
                                                                      AttackSpec("gn")])
    report = whitebox_eval(exp)
    assert len(report["failures"]) == 2
    assert report["failures"][0]["attack"] == "vafa"
    assert [r["attack"] for r in report["whitebox"]] == ["GN"]


def test_default_bands():
    assert default_bands((96, 96, 96)) == [[0, 8], [0, 16], [0, 32], [16, 48], [16, 96]]
    assert default_bands((32, 32, 32)) == [[0, 3], [0, 5], [0, 11], [5, 16], [5, 32]]
    for band in default_bands((16, 16, 16)):
        assert 0 <= band[0] < band[1] <= 16


def test_frequency_anchors(small_models, small_data):
    exp = _exp(small_models, small_data, [AttackSpec("fgsm")])
    report = frequency_analysis(exp, bands=[[0, 16], [4, 8]])
    wb = {r["model"]: r for r in whitebox_eval(exp)["whitebox"]}
    assert len(report["bands"]) == 3
    for curve in report["bands"]:
        all_pass, mid = curve["bands"]
        assert abs(all_pass["dsc"] - curve["unrestricted"]) < 1e-4
        assert abs(curve["clean"] - wb[curve["model"]]["clean_dsc"]) < 1e-12
        assert abs(curve["unrestricted"] - wb[curve["model"]]["adv_dsc"]) < 1e-12
        assert all_pass["label"] == "0-16" and mid["band"] == [4, 8]


def test_reports_are_deterministic(small_models, small_data):
    exp = _exp(small_models, small_data)
    a = json.dumps(transfer_eval(exp), sort_keys=True)
    b = json.dumps(transfer_eval(exp), sort_keys=True)
    assert a == b


def test_experiment_validation(small_models, small_data):
    with pytest.raises(ConfigError):
        Experiment({}, small_data, ATTACKS)
    with pytest.raises(ConfigError):
        Experiment(small_models, [], ATTACKS)
    exp = Experiment(small_models, small_data, [{"name": "pgd", "eps": "4/255"}])
    assert exp.attacks[0].epsilon == 4 / 255
