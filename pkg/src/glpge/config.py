"""Configuration tree: one JSON document covering training, degradation,
and the three model architectures.

Parsing is strict (unknown keys are rejected, so sweep typos fail loudly)
and round-trips exactly: ``parse(dump(cfg)) == cfg``. Desk-scale defaults
are used throughout; the full-scale reference profile this code base is
shaped after is recorded in ``REFERENCE_SCALE`` for anyone scaling up.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .globalnet import FUSION_STRATEGIES, GlobalNetConfig
from .losses import DiscriminatorConfig, LossWeights
from .refinenet import RefineNetConfig
from .synthdoc import DegradeConfig

STAGE_ORDERS = ("global_then_local", "local_then_global", "global_only")
REFINE_MODES = ("parametric", "direct")

# full-scale reference training profile (desk-scale defaults differ)
REFERENCE_SCALE = {
    "batch_size": 16,
    "crop_side": 512,
    "thumbnail_side": 224,
    "lr": 1e-4,
    "beta1": 0.9,
    "beta2": 0.99,
}


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 4
    crop_side: int = 128
    steps_gpp: int = 300
    steps_joint: int = 2000
    steps_finetune: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    loss_weights: LossWeights = field(default_factory=LossWeights)
    stage_order: str = "global_then_local"
    refine_mode: str = "parametric"
    fusion_strategy: str = "concatenation"
    k_fast: int = 2

    def validate(self):
        if self.stage_order not in STAGE_ORDERS:
            raise ConfigError(f"stage_order must be one of {STAGE_ORDERS}, got {self.stage_order!r}")
        if self.refine_mode not in REFINE_MODES:
            raise ConfigError(f"refine_mode must be one of {REFINE_MODES}, got {self.refine_mode!r}")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise ConfigError(
                f"fusion_strategy must be one of {FUSION_STRATEGIES}, got {self.fusion_strategy!r}"
            )
        if self.batch_size < 1 or self.crop_side < 16 or self.k_fast < 1:
            raise ConfigError("batch_size, crop_side, and k_fast must be positive")


@dataclass
class CliConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    global_net: GlobalNetConfig = field(default_factory=GlobalNetConfig)
    refine_net: RefineNetConfig = field(default_factory=RefineNetConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def validate(self):
        self.train.validate()
        self.global_net.validate()
        self.refine_net.validate()


def _to_jsonable(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def _from_dict(cls, data, path="config"):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        spec = fields[name]
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _from_dict(type(current), value, f"{path}.{name}")
        elif isinstance(current, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}.{name}: expected a list")
            kwargs[name] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{name}: expected a boolean")
            kwargs[name] = value
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
                raise ConfigError(f"{path}.{name}: expected an integer")
            kwargs[name] = int(value)
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{name}: expected a number")
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def dump_config(cfg: CliConfig, indent: int | None = 2) -> str:
    return json.dumps(_to_jsonable(cfg), indent=indent, sort_keys=True)


def parse_config(text: str) -> CliConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    cfg = _from_dict(CliConfig, data)
    cfg.validate()
    return cfg


def load_config(path) -> CliConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def config_hash(cfg: CliConfig) -> str:
    canonical = json.dumps(_to_jsonable(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
