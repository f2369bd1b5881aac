import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from boostctl import config as cfgmod
from boostctl.checkpoint import (Checkpoint, CheckpointMismatch, decode_theta, encode_theta, load_checkpoint,
                                 save_checkpoint)
from boostctl.config import ConfigError, ScenarioConfig
from boostctl.training import build_scenario, dataset_loss, train


def test_defaults_are_valid():
    c, w = cfgmod.defaults("corridor"), cfgmod.defaults("waypoint")
    assert c.loss_kind == "corridor" and w.loss_kind == "tltl"
    assert (c.train.lr, c.train.batch_size, c.ren.q1) == (0.005, 1, 8)
    assert (w.train.lr, w.train.batch_size, w.architecture) == (0.001, 5, "measured_dist")
    with pytest.raises(ConfigError):
        cfgmod.defaults("custom")


def test_corridor_variants_share_targets():
    swapped, literal = cfgmod.defaults("corridor"), cfgmod.defaults("corridor-literal")
    assert swapped.plant.targets == literal.plant.targets
    assert literal.plant.start[2:] == literal.plant.targets[2:]
    assert swapped.plant.start[2:] != swapped.plant.targets[2:]


def test_paper_scale_epochs():
    assert cfgmod.paper_scale(cfgmod.defaults("corridor")).train.epochs == 12000
    assert cfgmod.paper_scale(cfgmod.defaults("waypoint")).train.epochs == 1500


@pytest.mark.parametrize("kw", [{"scenario": "maze"}, {"architecture": "lqr"}, {"architecture": "distributed"},
                                {"horizon": 0}, {"scenario": "waypoint", "architecture": "boost", "horizon": 1}])
def test_invalid_configs(kw):
    with pytest.raises(ConfigError):
        ScenarioConfig(**kw)


def test_toml_roundtrip(tmp_path):
    cfg = cfgmod.defaults("waypoint").with_overrides(seed=4, epochs=7)
    cfgmod.save(cfg, tmp_path / "c.toml")
    back = cfgmod.load(tmp_path / "c.toml")
    assert back == cfg
    assert back.train.epochs == 7 and back.seed == 4


def test_unknown_keys_rejected(tmp_path):
    (tmp_path / "c.toml").write_text('scenario = "corridor"\nwobble = 1\n')
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "c.toml")
    (tmp_path / "d.toml").write_text('[train]\nlearning_rate = 1\n')
    with pytest.raises(ConfigError):
        cfgmod.load(tmp_path / "d.toml")


@given(st.lists(st.floats(allow_nan=False), max_size=30))
def test_theta_blob_roundtrip(values):
    th = np.array(values, dtype=float)
    assert np.array_equal(decode_theta(encode_theta(th)), th)


def small_cfg(**kw):
    cfg = cfgmod.defaults("corridor")
    cfg.ren = cfgmod.RenConfig(q1=2, q2=2)
    cfg.horizon = 10
    cfg.train = cfgmod.TrainConfig(epochs=0, n_train=3, checkpoint_every=2)
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


def test_checkpoint_roundtrip(tmp_path):
    cfg = small_cfg()
    scn = build_scenario(cfg)
    save_checkpoint(Checkpoint(scn.theta0, 3, cfg), tmp_path / "ck.json")
    ck = load_checkpoint(tmp_path / "ck.json", cfg)
    assert np.array_equal(ck.theta, scn.theta0) and ck.epoch == 3
    assert ck.config == cfg


def test_checkpoint_shape_mismatch(tmp_path):
    cfg = small_cfg()
    save_checkpoint(Checkpoint(build_scenario(cfg).theta0, 0, cfg), tmp_path / "ck.json")
    other = small_cfg(ren=cfgmod.RenConfig(q1=3, q2=2))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "ck.json", other)
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(tmp_path / "bad.json")


def test_zero_epochs_returns_initialization():
    res = train(small_cfg())
    assert res.log == []
    assert np.array_equal(res.theta, res.theta0)
    assert list(res.checkpoints) == [0]


def test_short_training_is_deterministic():
    cfg = small_cfg()
    cfg.train = cfgmod.TrainConfig(epochs=3, n_train=3, checkpoint_every=2)
    a, b = train(cfg), train(cfg)
    assert np.array_equal(a.theta, b.theta)
    assert [r["mean_loss"] for r in a.log] == [r["mean_loss"] for r in b.log]
    assert sorted(a.checkpoints) == [0, 2, 3]
    assert np.isfinite(dataset_loss(build_scenario(cfg), a.theta))
