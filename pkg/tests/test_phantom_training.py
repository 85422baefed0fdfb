import numpy as np
import pytest

from voladv.checkpoint import CheckpointError, load_model, save_model
from voladv.errors import ConfigError, ShapeError, TrainingError
from voladv.models import build_model
from voladv.phantom import PhantomSpec, generate_phantom, phantom_dataset
from voladv.training import train_model


def test_phantom_deterministic():
    a = generate_phantom(PhantomSpec(seed=7))
    b = generate_phantom(PhantomSpec(seed=7))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    c = generate_phantom(PhantomSpec(seed=8))
    assert not np.array_equal(a[1], c[1])


def test_every_class_present_over_seeds():
    for seed in range(50):
        x, y = generate_phantom(PhantomSpec(seed=seed, num_classes=3))
        assert x.min() >= 0 and x.max() <= 1
        counts = np.bincount(y.ravel(), minlength=3)
        assert np.all(counts[1:] >= 1), seed


def test_zero_noise_uses_base_intensities():
    spec = PhantomSpec(seed=3, noise=0.0, num_classes=4)
    x, y = generate_phantom(spec)
    assert set(np.unique(x)) <= set(spec.intensities())
    np.testing.assert_array_equal(x, spec.intensities()[y])


def test_smoothed_noise_is_bounded():
    spec = PhantomSpec(seed=1, noise=0.05, smooth=1.5)
    x, y = generate_phantom(spec)
    assert np.abs(x - spec.intensities()[y]).max() <= 0.05 + 1e-12


def test_phantom_errors():
    with pytest.raises(ConfigError):
        generate_phantom(PhantomSpec(num_classes=1))
    with pytest.raises(ShapeError):
        generate_phantom(PhantomSpec(shape=(8, 8, 4)))


def test_epochs_zero_returns_same_params(small_data):
    model = build_model("conv-seg", 3, (16, 16, 16), seed=1)
    trained = train_model(model, small_data, epochs=0)
    assert np.array_equal(trained.param_vector(), model.param_vector())
    assert trained.training_loss == []


def test_training_reduces_loss_and_is_deterministic():
    data = phantom_dataset(20, 0, shape=(16, 16, 16))
    model = build_model("conv-seg", 3, (16, 16, 16), seed=42)
    a = train_model(model, data, epochs=30, learning_rate=0.02, seed=42)
    assert a.training_loss[-1] < a.training_loss[0]
    b = train_model(model, data[:4], epochs=2, learning_rate=0.02, seed=42)
    c = train_model(model, data[:4], epochs=2, learning_rate=0.02, seed=42)
    assert np.array_equal(b.param_vector(), c.param_vector())
    # the input model is not modified
    assert np.array_equal(model.param_vector(), build_model("conv-seg", 3, (16, 16, 16), seed=42).param_vector())


def test_training_errors(small_data):
    model = build_model("scan-seg", 3, (16, 16, 16))
    with pytest.raises(TrainingError):
        train_model(model, [], epochs=1)
    with pytest.raises(TrainingError, match="expected window"):
        train_model(model, [(np.zeros((8, 8, 8)), np.zeros((8, 8, 8), int))], epochs=1)
    with pytest.raises(TrainingError, match="non-finite loss") as info, np.errstate(all="ignore"):
        train_model(model, small_data, epochs=3, learning_rate=1e300)
    assert info.value.kind == "training"


@pytest.mark.parametrize("arch", ["conv-seg", "mix-seg", "scan-seg"])
def test_checkpoint_round_trip(tmp_path, rng, arch):
    model = build_model(arch, 4, (8, 8, 8), seed=9)
    path = tmp_path / "m.vrm"
    save_model(model, path)
    back = load_model(path)
    assert back.arch == arch and back.num_classes == 4 and back.window_shape == (8, 8, 8)
    assert list(back.params) == list(model.params)
    assert np.array_equal(back.param_vector(), model.param_vector())
    x = rng.uniform(size=(8, 8, 8))
    assert np.array_equal(back.forward(x), model.forward(x))
    raw = path.read_bytes()
    assert raw[:8] == b"VRMODEL1"
    assert len(raw) - 12 - int.from_bytes(raw[8:12], "little") == 4 * model.n_params


def test_trained_model_checkpoint_is_exact(tmp_path, small_data):
    model = train_model(build_model("conv-seg", 3, (16, 16, 16), seed=1), small_data, epochs=1)
    save_model(model, tmp_path / "t.vrm")
    assert np.array_equal(load_model(tmp_path / "t.vrm").param_vector(), model.param_vector())


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.vrm"
    bad.write_bytes(b"NOTMODEL")
    with pytest.raises(CheckpointError, match="bad magic"):
        load_model(bad)
    bad.write_bytes(b"VRMODEL1\x05\x00\x00\x00{oops")
    with pytest.raises(CheckpointError, match="corrupt"):
        load_model(bad)
    model = build_model("conv-seg", 3, (8, 8, 8))
    save_model(model, bad)
    bad.write_bytes(bad.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="parameters"):
        load_model(bad)
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "missing.vrm")
    unrounded = model.with_params(model.param_vector() + 1e-12)
    with pytest.raises(CheckpointError, match="float32"):
        save_model(unrounded, tmp_path / "x.vrm")
