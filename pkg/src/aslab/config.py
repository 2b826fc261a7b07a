"""Flat key = value run configuration with typed defaults.

Precedence: CLI flags > config file > defaults. Unknown keys are rejected
with their line number.
"""

from __future__ import annotations

from .models import EDFCNConfig
from .synth import SceneConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "scene.size": 64,
    "scene.channels": 1,
    "scene.n_buildings_lo": 2,
    "scene.n_buildings_hi": 6,
    "scene.min_separation": 2,
    "scene.occluder_density": 0.5,
    "scene.background_gray": 0.25,
    "scene.building_gray_lo": 0.65,
    "scene.building_gray_hi": 0.85,
    "scene.contrast": 1.0,
    "scene.noise_sigma": 0.04,
    "scene.n_roads_hi": 2,
    "scene.n_blobs_hi": 3,
    "scene.tree_gray": 0.25,
    "scene.shadow_factor": 0.55,
    "scene.building_scale": 1.0,
    "scene.include_discs_in_labels": False,
    "train.alpha": 5.0,
    "train.beta": 1.0,
    "train.lr_seg": 2e-4,
    "train.lr_disc": 1e-4,
    "train.batch_size": 8,
    "train.epochs": 30,
    "train.seed": 0,
    "train.binarize_threshold": 0.5,
    "train.adversarial": True,
    "train.augment_flips": True,
    "model.input_channels": 1,
    "model.base_width": 16,
    "model.norm_groups": 4,
    "model.use_sr": True,
    "model.sd_widths": (16, 32, 64, 128),
}


def _parse_value(key: str, raw: str, lineno: int):
    default = DEFAULTS[key]
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as e:
        raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from e


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {line.rstrip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, raw, lineno)
    return values


class RunConfig:
    """Resolved configuration: defaults overlaid with file and override values."""

    def __init__(self, values: dict = None):
        self.values = dict(DEFAULTS)
        if values:
            self.values.update(values)

    @staticmethod
    def load(path: str = None, overrides: dict = None) -> "RunConfig":
        values = {}
        if path is not None:
            try:
                with open(path) as f:
                    text = f.read()
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            values.update(parse_config_text(text))
        if overrides:
            for key, val in overrides.items():
                if key not in DEFAULTS:
                    raise ConfigError(f"unknown override key {key!r}")
                if val is not None:
                    values[key] = val
        return RunConfig(values)

    def __getitem__(self, key):
        return self.values[key]

    def scene_config(self) -> SceneConfig:
        v = self.values
        return SceneConfig(
            size=v["scene.size"], channels=v["scene.channels"],
            n_buildings_lo=v["scene.n_buildings_lo"],
            n_buildings_hi=v["scene.n_buildings_hi"],
            min_separation=v["scene.min_separation"],
            occluder_density=v["scene.occluder_density"],
            background_gray=v["scene.background_gray"],
            building_gray_lo=v["scene.building_gray_lo"],
            building_gray_hi=v["scene.building_gray_hi"],
            contrast=v["scene.contrast"], noise_sigma=v["scene.noise_sigma"],
            n_roads_hi=v["scene.n_roads_hi"], n_blobs_hi=v["scene.n_blobs_hi"],
            tree_gray=v["scene.tree_gray"],
            shadow_factor=v["scene.shadow_factor"],
            building_scale=v["scene.building_scale"],
            include_discs_in_labels=v["scene.include_discs_in_labels"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(
            alpha=v["train.alpha"], beta=v["train.beta"],
            lr_seg=v["train.lr_seg"], lr_disc=v["train.lr_disc"],
            batch_size=v["train.batch_size"], epochs=v["train.epochs"],
            seed=v["train.seed"],
            binarize_threshold=v["train.binarize_threshold"],
            adversarial=v["train.adversarial"],
            augment_flips=v["train.augment_flips"])

    def model_config(self) -> EDFCNConfig:
        v = self.values
        return EDFCNConfig(input_channels=v["model.input_channels"],
                           base_width=v["model.base_width"],
                           norm_groups=v["model.norm_groups"])
