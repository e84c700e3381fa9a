"""Configuration dataclasses with JSON round-trip and dotted-key overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised when a configuration fails validation."""


@dataclass
class EncoderConfig:
    channels_per_level: list[int] = field(default_factory=lambda: [64, 64, 64])
    residual_blocks_per_level: int = 4

    def validate(self):
        if len(self.channels_per_level) != 3:
            raise ConfigError("channels_per_level must have exactly 3 entries")
        if any(c <= 0 for c in self.channels_per_level):
            raise ConfigError("channels_per_level entries must be positive")
        if self.residual_blocks_per_level <= 0:
            raise ConfigError("residual_blocks_per_level must be positive")


@dataclass
class MatcherConfig:
    coarse_stride: int = 4
    refine_radius: int = 2

    def validate(self):
        if self.coarse_stride < 1:
            raise ConfigError("coarse_stride must be >= 1")
        if self.refine_radius < 0:
            raise ConfigError("refine_radius must be >= 0")


@dataclass
class DecoderConfig:
    residual_blocks: tuple[int, int, int] = (12, 8, 4)
    output_channels: int = 3
    use_sam: bool = True
    use_dram: bool = True

    def validate(self):
        if len(self.residual_blocks) != 3 or any(n <= 0 for n in self.residual_blocks):
            raise ConfigError("residual_blocks must be 3 positive integers")
        if self.output_channels <= 0:
            raise ConfigError("output_channels must be positive")


@dataclass
class EnhancerConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    iterations: int = 2

    def validate(self):
        self.encoder.validate()
        self.matcher.validate()
        self.decoder.validate()
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")


@dataclass
class LossWeights:
    lambda_rec: float = 1.0
    lambda_per: float = 1.0
    lambda_adv: float = 0.001

    def validate(self):
        if min(self.lambda_rec, self.lambda_per, self.lambda_adv) < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class TrainConfig:
    phase1_epochs: int = 60
    phase2_epochs: int = 20
    batch_size: int = 9
    learning_rate: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    iterations_supervised: int = 2
    seed: int = 0
    checkpoint_every: int = 500
    perceptual_weights: str | None = None
    random_perceptual: bool = False

    def validate(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.phase1_epochs + self.phase2_epochs <= 0:
            raise ConfigError("at least one training epoch required")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        self.weights.validate()
        if self.iterations_supervised < 1:
            raise ConfigError("iterations_supervised must be >= 1")


@dataclass
class DegradeConfig:
    blur_sigma: float = 1.5
    hole_fraction: float = 0.05
    flatten_segments: int = 600
    color_gain: tuple[float, float] = (0.8, 1.2)
    color_offset: tuple[float, float] = (-0.05, 0.05)
    mesh_quality: float = 1.0

    def validate(self):
        if self.blur_sigma < 0:
            raise ConfigError("blur_sigma must be >= 0")
        if not 0.0 <= self.hole_fraction <= 1.0:
            raise ConfigError("hole_fraction must be in [0, 1]")
        if self.flatten_segments < 0:
            raise ConfigError("flatten_segments must be >= 0")
        if not 0.0 < self.mesh_quality <= 1.0:
            raise ConfigError("mesh_quality must be in (0, 1]")


def _to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_dict(v) for v in obj]
    return obj


def _from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if dataclasses.is_dataclass(f.type if isinstance(f.type, type) else None):
            value = _from_dict(f.type, value)
        elif f.name in _NESTED:
            value = _from_dict(_NESTED[f.name], value)
        elif isinstance(value, list) and f.name in _TUPLE_FIELDS:
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


_NESTED = {
    "encoder": EncoderConfig,
    "matcher": MatcherConfig,
    "decoder": DecoderConfig,
    "weights": LossWeights,
}
_TUPLE_FIELDS = {"residual_blocks", "color_gain", "color_offset"}


def config_to_dict(cfg) -> dict:
    return _to_dict(cfg)


def enhancer_config_from_dict(data: dict) -> EnhancerConfig:
    cfg = _from_dict(EnhancerConfig, data)
    cfg.validate()
    return cfg


def train_config_from_dict(data: dict) -> TrainConfig:
    cfg = _from_dict(TrainConfig, data)
    cfg.validate()
    return cfg


def degrade_config_from_dict(data: dict) -> DegradeConfig:
    cfg = _from_dict(DegradeConfig, data)
    cfg.validate()
    return cfg


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides to a nested config dict in place."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} traverses a non-object field")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node[keys[-1]] = value
    return data


def save_json(data: dict, path):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
