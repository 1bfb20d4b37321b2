"""Run configuration: one seeded, JSON-serializable bundle of every knob."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .gaussian_map import IcpParams, KeyframePolicy
from .mapper import MapperConfig, SamplingStrategy
from .renderer import LossWeights
from .tracker import TrackerConfig


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the generated synthetic dataset (dataset_type
    "synthetic")."""

    n_frames: int = 60
    n_splats: int = 160
    noise_px: float = 0.0
    dropout: float = 0.0
    depth_noise: float = 0.0
    corrupt_beyond: float | None = None
    step_deg: float = 0.6
    motion: float = 1.0


@dataclass
class RunConfig:
    """Everything one run needs; a fixed seed makes the run reproducible."""

    dataset: str = "synthetic"
    dataset_type: str = "synthetic"  # "synthetic" | "tum"
    matches_dir: str | None = None
    stride: int = 1
    method: str = "feature"  # "feature" | "constant_velocity"
    seed: int = 0
    out_dir: str | None = None
    save_renders: bool = False
    map_iters: int = 40
    final_refine_iters: int = 50
    prefetch: int = 0
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    keyframes: KeyframePolicy = field(
        default_factory=lambda: KeyframePolicy(mode="sparse", k=5))
    sampling: SamplingStrategy = field(default_factory=SamplingStrategy)
    mapper: MapperConfig = field(default_factory=MapperConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        if self.method not in ("feature", "constant_velocity"):
            raise ValueError("method must be 'feature' or 'constant_velocity'")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        nested = {
            "tracker": TrackerConfig,
            "weights": LossWeights,
            "keyframes": KeyframePolicy,
            "sampling": SamplingStrategy,
            "synthetic": SyntheticConfig,
        }
        kwargs = {}
        for f in fields(cls):
            if f.name not in data:
                continue
            value = data[f.name]
            if f.name == "mapper" and isinstance(value, dict):
                value = dict(value)
                if isinstance(value.get("icp"), dict):
                    value["icp"] = IcpParams(**value["icp"])
                value = MapperConfig(**value)
            elif f.name in nested and isinstance(value, dict):
                value = nested[f.name](**value)
            kwargs[f.name] = value
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")
