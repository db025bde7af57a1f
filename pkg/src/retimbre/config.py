"""Versioned JSON run configuration.

One document configures the whole pipeline; unknown keys anywhere are
rejected so typos fail fast. Paths and the training regime stay on the
command line; everything else lives here.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .data_toolkit import ToySpec, InstrumentTimbre, REED, BOW, PLUCK, BELL
from .dsp import MelFeatureConfig
from .errors import DataError
from .networks import ModelConfig, ScheduleNetConfig
from .schedule_search import SearchGrid
from .training import TrainingConfig, SchedulerTrainingConfig

CONFIG_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DiffusionConfig:
    """Training-time noise schedule and reverse-step variance choice."""

    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.005
    sigma_mode: str = "posterior"  # or "simple" (sigma^2 = beta_n)

    def __post_init__(self):
        if self.sigma_mode not in ("posterior", "simple"):
            raise DataError(f"unknown sigma_mode {self.sigma_mode!r}")


@dataclass(frozen=True)
class InferenceConfig:
    chunk_frames: int = 66


@dataclass(frozen=True)
class TrimConfig:
    threshold_db: float = -40.0
    window_s: float = 0.05
    min_gap_s: float = 0.3


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = CONFIG_SCHEMA_VERSION
    seed: int = 0
    sample_rate: int = 16000
    fragment_seconds: float = 5.0
    mel: MelFeatureConfig = field(default_factory=MelFeatureConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    scheduler_model: ScheduleNetConfig = field(default_factory=ScheduleNetConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    scheduler_training: SchedulerTrainingConfig = field(default_factory=SchedulerTrainingConfig)
    search: SearchGrid = field(default_factory=SearchGrid)
    inference: InferenceConfig = field(default_factory=InferenceConfig)
    trim: TrimConfig = field(default_factory=TrimConfig)
    toy: ToySpec = field(default_factory=ToySpec)

    def __post_init__(self):
        if self.schema_version != CONFIG_SCHEMA_VERSION:
            raise DataError(
                f"config schema_version {self.schema_version} unsupported "
                f"(expected {CONFIG_SCHEMA_VERSION})"
            )


_TUPLE_FIELDS = {"upsample_factors", "down_channels", "up_channels", "harmonics",
                 "alpha_bar_inits", "beta_inits", "betas"}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise DataError(f"config section {path or '<root>'} must be an object")
    # named presets expand to their channel plans; other labels are custom
    if cls is ModelConfig and data.get("preset") in ("toy", "full"):
        base = ModelConfig.from_preset(data["preset"])
        merged = dataclasses.asdict(base)
        merged.update(data)
        data = merged
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise DataError(f"unknown config keys at {path or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = f"{path}.{name}" if path else name
        if name == "voice1" or name == "voice2":
            kwargs[name] = tuple(_build(InstrumentTimbre, v, f"{sub}[{i}]") for i, v in enumerate(value))
        elif isinstance(value, dict):
            target = _SECTION_TYPES.get(name)
            if target is None:
                raise DataError(f"unexpected object at config key {sub}")
            kwargs[name] = _build(target, value, sub)
        elif isinstance(value, list) and name in _TUPLE_FIELDS:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "mel": MelFeatureConfig,
    "diffusion": DiffusionConfig,
    "model": ModelConfig,
    "scheduler_model": ScheduleNetConfig,
    "training": TrainingConfig,
    "scheduler_training": SchedulerTrainingConfig,
    "search": SearchGrid,
    "inference": InferenceConfig,
    "trim": TrimConfig,
    "toy": ToySpec,
}


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    return _build(RunConfig, data, "")


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "")


def config_hash(cfg: RunConfig) -> str:
    canonical = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True))
