import pytest
import yaml

from crossview.config import load_run_config, parse_override
from crossview.errors import ConfigError


def test_presets():
    tiny = load_run_config(preset="tiny")
    assert tiny.train.channels == (4, 8, 8) and tiny.synth.image_size == 8 == tiny.train.input_size
    desk = load_run_config()
    assert desk.preset == "desk" and desk.synth.A == 6 and desk.synth.V == 4 and desk.synth.per_cell == 200
    assert load_run_config(preset="large").train.input_size == 224


def test_override_parsing():
    assert parse_override("train.epochs=5") == {"train": {"epochs": 5}}
    assert parse_override("train.channels=[2, 4]") == {"train": {"channels": [2, 4]}}
    assert parse_override("data.train_dir=") == {"data": {"train_dir": None}}
    with pytest.raises(ConfigError):
        parse_override("train.epochs")


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"preset": "tiny", "train": {"epochs": 7, "lr": 0.5}, "loss": {"delta": 2.0}}))
    cfg = load_run_config(p, ["train.epochs=3"])
    assert cfg.train.epochs == 3 and cfg.train.lr == 0.5
    assert cfg.train.loss_weights.delta == 2.0
    assert cfg.preset == "tiny"


def test_unknown_keys_are_rejected(tmp_path):
    with pytest.raises(ConfigError, match="train.epochz"):
        load_run_config(overrides=["train.epochz=3"])
    with pytest.raises(ConfigError, match="colour"):
        load_run_config(overrides=["colour=red"])


def test_invalid_values():
    with pytest.raises(ConfigError):
        load_run_config(overrides=["train.lr=-1"])
    with pytest.raises(ConfigError):
        load_run_config(overrides=["data.val_fraction=1.5"])
    with pytest.raises(ConfigError):
        load_run_config(overrides=["synth.image_size=16"])
    with pytest.raises(ConfigError):
        load_run_config(preset="huge")
    with pytest.raises(ConfigError):
        load_run_config("/no/such/file.yaml")


def test_dump_round_trip(tmp_path):
    cfg = load_run_config(preset="tiny", overrides=["train.epochs=4", "loss.lambda_vc=0.25", "name=x"])
    cfg.dump(tmp_path / "c.yaml")
    back = load_run_config(tmp_path / "c.yaml")
    assert back == cfg
    assert back.hash() == cfg.hash()
    assert load_run_config(preset="tiny").hash() != cfg.hash()
