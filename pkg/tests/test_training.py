import numpy as np
import pytest

from mirecon.datagen import build_samples
from mirecon.errors import ContractError
from mirecon.geometry import icosphere, sample_surface
from mirecon.network import DESK_CONFIG, read_checkpoint
from mirecon.training import TrainConfig, read_loss_csv, set_deterministic, train


@pytest.fixture(scope="module")
def data():
    cloud = sample_surface(icosphere(2, 0.4, (0.5, 0.5, 0.5)), 1500, seed=0)
    rng = np.random.default_rng(0)
    q = rng.random((100, 3))
    t = (np.linalg.norm(q - 0.5, axis=1) < 0.4).astype(float)
    return build_samples(cloud, q, 12, 24, 4, seed=1, targets=t)


def cfg(**kw):
    base = dict(n_d=12, n_s=24, k=4, c=8, batch_size=16, epochs=2, widths=DESK_CONFIG)
    base.update(kw)
    return TrainConfig(**base)


def test_lr_zero_keeps_weights(data, tmp_path):
    set_deterministic(1)
    train(data, cfg(lr=0.0), out_dir=tmp_path)
    _, t0 = read_checkpoint(tmp_path / "epoch_0000.lmic")
    _, t1 = read_checkpoint(tmp_path / "last.lmic")
    for name, arr in t0.items():
        assert arr.tobytes() == t1[name].tobytes(), name


def test_loss_decreases(data):
    set_deterministic(1)
    _, hist = train(data, cfg(epochs=15))
    first = np.mean([h[1] for h in hist[:7]])
    last = np.mean([h[1] for h in hist[-7:]])
    assert last < 0.7 * first


def test_resume_matches_uninterrupted(data, tmp_path):
    set_deterministic(1)
    _, full = train(data, cfg(epochs=4), out_dir=tmp_path / "full")
    train(data, cfg(epochs=2), out_dir=tmp_path / "part")
    _, resumed = train(data, cfg(epochs=4), out_dir=tmp_path / "part", resume=tmp_path / "part" / "last.lmic")
    assert [h[0] for h in resumed] == [h[0] for h in full]
    np.testing.assert_array_equal([h[1] for h in resumed], [h[1] for h in full])
    assert read_loss_csv(tmp_path / "part" / "loss.csv") == read_loss_csv(tmp_path / "full" / "loss.csv")


def test_training_deterministic(data, tmp_path):
    set_deterministic(1)
    train(data, cfg(), out_dir=tmp_path / "a")
    train(data, cfg(), out_dir=tmp_path / "b")
    for name in ("epoch_0001.lmic", "last.lmic", "loss.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_dims_mismatch(data):
    with pytest.raises(ContractError):
        train(data, cfg(n_d=10))


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ContractError):
        TrainConfig(batch_size=0)
