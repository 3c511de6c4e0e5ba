"""Run configuration: one YAML file with a section per module.

Unknown sections or keys are rejected; anything missing takes the
documented default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .dataset import AugmentationConfig
from .discriminator import TrainConfig
from .errors import InvalidConfig
from .harness import ExperimentConfig


@dataclass
class PathsConfig:
    benchmark_dir: str = "runs/benchmark"
    out_dir: str = "runs/out"
    weights: str = "runs/weights/vgg16-w8.pt"
    cache: Optional[str] = None  # defaults to <out_dir>/features.npz


@dataclass
class ExtractorConfig:
    width_divisor: int = 8
    input_side: int = 224
    taps: Optional[list] = None
    weights_seed: int = 0


@dataclass
class SimulatorConfig:
    n_artists: int = 10
    n_pirated: int = 5
    per_artist: int = 20
    seed: int = 0
    fidelity: float = 0.9
    distortion_sigma: float = 0.1
    n_public: int = 5
    public_per_artist: int = 10


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> "RunConfig":
        self.augmentation.validate()
        self.train.validate()
        self.experiment.validate()
        return self

    def to_dict(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return [plain(x) for x in v]
            return v

        return {
            f.name: {k: plain(v) for k, v in dataclasses.asdict(getattr(self, f.name)).items()}
            for f in dataclasses.fields(self)
        }

    @property
    def cache_path(self) -> Path:
        return Path(self.paths.cache or Path(self.paths.out_dir) / "features.npz")


_TUPLE_FIELDS = {"crop_scale", "jitter_ranges", "seeds", "hidden"}


def _section(cls, name, raw):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise InvalidConfig(f"section [{name}] must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    vals = {k: (tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v) for k, v in raw.items()}
    return cls(**vals)


def from_dict(data: Optional[dict]) -> RunConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise InvalidConfig("config root must be a mapping")
    sections = {f.name: f for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(data) - set(sections))
    if unknown:
        raise InvalidConfig(f"unknown config section(s): {', '.join(unknown)}")
    kwargs = {}
    for name, f in sections.items():
        cls = f.default_factory
        kwargs[name] = _section(cls, name, data.get(name))
    return RunConfig(**kwargs).validate()


def load(path) -> RunConfig:
    """Read a YAML config; relative paths resolve against the config file."""
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    cfg = from_dict(data)
    base = path.resolve().parent
    for k in ("benchmark_dir", "out_dir", "weights", "cache"):
        v = getattr(cfg.paths, k)
        if v is not None and not Path(v).is_absolute():
            setattr(cfg.paths, k, str(base / v))
    return cfg


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
