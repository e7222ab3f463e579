"""Run configuration: one JSON document covering every stage, plus its hash."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dsp import FeatureConfig
from .stvae import STVAEConfig
from .synthgen import SynthConfig


@dataclass
class ClusterConfig:
    method: str = "kmeans"          # kmeans | bisecting | meanshift
    k: int | str = 2                # integer or "auto"
    bandwidth: float | None = None  # meanshift; None = half median pairwise distance
    seed: int = 0
    pooled: bool = False            # cluster all files together instead of per file

    def __post_init__(self):
        if self.method not in ("kmeans", "bisecting", "meanshift"):
            raise ValueError(f"unknown clustering method {self.method!r}")
        if self.k != "auto" and int(self.k) < 1:
            raise ValueError("k must be >= 1 or 'auto'")


@dataclass
class SegmentConfig:
    smooth_window: int = 5
    min_s: float = 0.1
    max_gap_s: float = 0.1
    mapping: str = "eval"           # eval (needs reference) | heuristic | identity

    def __post_init__(self):
        if self.smooth_window < 1 or self.smooth_window % 2 == 0:
            raise ValueError("smooth_window must be odd and >= 1")
        if self.mapping not in ("eval", "heuristic", "identity"):
            raise ValueError(f"unknown mapping mode {self.mapping!r}")


@dataclass
class MetricConfig:
    iou_threshold: float = 0.5


@dataclass
class SplitConfig:
    train_frac: float = 0.8
    seed: int = 0


_SECTIONS = {
    "features": FeatureConfig,
    "synth": SynthConfig,
    "model": STVAEConfig,
    "clustering": ClusterConfig,
    "segmentation": SegmentConfig,
    "metrics": MetricConfig,
    "split": SplitConfig,
}


@dataclass
class RunConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: STVAEConfig = field(default_factory=STVAEConfig)
    clustering: ClusterConfig = field(default_factory=ClusterConfig)
    segmentation: SegmentConfig = field(default_factory=SegmentConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    def to_dict(self) -> dict:
        d = {}
        for name in _SECTIONS:
            sec = asdict(getattr(self, name))
            if name == "model":
                sec["hidden"] = list(sec["hidden"])
            d[name] = sec
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def dump(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, typ in _SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise ValueError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(typ)}
            bad = set(sec) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            kwargs[name] = typ(**sec)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, overrides: dict[str, object]) -> "RunConfig":
        """Apply ``{"section.key": value}`` overrides (flags win over the file)."""
        d = copy.deepcopy(self.to_dict())
        for dotted, value in overrides.items():
            if value is None:
                continue
            section, _, key = dotted.partition(".")
            if section not in d or key not in d[section]:
                raise ValueError(f"unknown config key {dotted!r}")
            d[section][key] = value
        return RunConfig.from_dict(d)
