"""Run configuration: presets, YAML/JSON files, ``key.path=value`` overrides
and strict validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .dataset import SynthConfig
from .errors import ConfigError
from .losses import LossWeights
from .trainer import PRESETS, TrainConfig

SECTIONS = ("synth", "train", "loss", "data", "gradcheck")
TOP_LEVEL = ("preset", "name", "output_dir") + SECTIONS

DATA_DEFAULTS = {"train_dir": None, "test_view": -1, "val_fraction": 0.25, "split_seed": 0}
GRADCHECK_DEFAULTS = {"triplets": 2, "epsilon": 1e-5, "seed": 0, "tolerance": 1e-4}

_PRESET_SYNTH = {
    "desk": SynthConfig(A=6, V=4, per_cell=200, image_size=32, noise_sigma=0.05, seed=7),
    "large": SynthConfig(A=6, V=4, per_cell=200, image_size=224, noise_sigma=0.05, seed=7),
    "tiny": SynthConfig(A=4, V=3, per_cell=4, image_size=8, noise_sigma=0.05, seed=1),
}


def _train_section(cfg: TrainConfig) -> dict:
    d = cfg.to_dict()
    d.pop("loss_weights")
    return d


def preset_dict(preset: str) -> dict:
    if preset not in PRESETS:
        raise ConfigError(f"preset: unknown preset {preset!r} (choose from {sorted(PRESETS)})")
    tc = PRESETS[preset]
    return {
        "preset": preset,
        "name": preset,
        "output_dir": "runs",
        "synth": asdict(_PRESET_SYNTH[preset]),
        "train": _train_section(tc),
        "loss": asdict(tc.loss_weights),
        "data": dict(DATA_DEFAULTS),
        "gradcheck": dict(GRADCHECK_DEFAULTS),
    }


@dataclass
class RunConfig:
    preset: str
    name: str
    output_dir: str
    synth: SynthConfig
    train: TrainConfig
    data: dict = field(default_factory=lambda: dict(DATA_DEFAULTS))
    gradcheck: dict = field(default_factory=lambda: dict(GRADCHECK_DEFAULTS))

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.name

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "name": self.name,
            "output_dir": self.output_dir,
            "synth": asdict(self.synth),
            "train": _train_section(self.train),
            "loss": asdict(self.train.loss_weights),
            "data": dict(self.data),
            "gradcheck": dict(self.gradcheck),
        }

    def hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def dump(self, path):
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _merge(base: dict, update: dict, path: str = ""):
    for key, val in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown key")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where}: expected a mapping")
            _merge(base[key], val, where + ".")
        else:
            base[key] = val


def parse_override(text: str) -> dict:
    """``"train.epochs=5"`` -> ``{"train": {"epochs": 5}}`` (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key.path=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw) if raw.strip() else None
    out: Any = value
    for part in reversed(key.strip().split(".")):
        out = {part: out}
    return out


def _build(d: dict) -> RunConfig:
    def section(name, factory):
        try:
            return factory(**d[name])
        except ConfigError as exc:
            raise ConfigError(f"{name}: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"{name}: {exc}") from None

    loss = section("loss", LossWeights)
    tdict = dict(d["train"], loss_weights=loss)
    try:
        train = TrainConfig(**tdict)
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"train: {exc}") from None
    synth = section("synth", SynthConfig)
    data = d["data"]
    if not 0 < float(data["val_fraction"]) < 1:
        raise ConfigError("data.val_fraction: must lie in (0, 1)")
    if data["train_dir"] is None and synth.image_size != train.input_size:
        raise ConfigError("train.input_size: must equal synth.image_size for synthetic data")
    if not isinstance(d["name"], str) or not d["name"]:
        raise ConfigError("name: must be a non-empty string")
    return RunConfig(d["preset"], d["name"], str(d["output_dir"]), synth, train, dict(data), dict(d["gradcheck"]))


def load_run_config(path: Optional[str] = None, overrides=(), preset: Optional[str] = None) -> RunConfig:
    """Preset defaults, then the file, then ``--set`` overrides (last wins)."""
    user: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        user = yaml.safe_load(p.read_text()) or {}
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a mapping")
    over: dict = {}
    for text in overrides:
        _deep_update(over, parse_override(text))
    chosen = preset or over.get("preset") or user.get("preset") or "desk"
    base = preset_dict(chosen)
    _merge(base, copy.deepcopy(user))
    _merge(base, over)
    base["preset"] = chosen
    return _build(base)


def _deep_update(dst: dict, src: dict):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v
