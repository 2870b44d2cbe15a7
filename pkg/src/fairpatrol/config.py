"""Run configuration: one JSON document per run, dotted-path overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from datetime import datetime

from . import io
from .allocator import BUDGET, EPSILON, MINORITY_THRESHOLD
from .graph import ALPHA_FEAT, ALPHA_GEO, THETA_SIM
from .ingest import BBox
from .predictor.model import StgnnConfig
from .predictor.train import TrainConfig
from .simulator import DetectionModel, SimConfig
from .tensor import SynthConfig

MODES = ("baltimore", "synthetic")


@dataclass
class Paths:
    incidents: str | None = None
    zones: str | None = None
    out: str | None = None


@dataclass
class Window:
    """Half-open ingest window ``[start, end)`` in ISO-8601."""

    start: str = "2017-01-01T00:00:00+00:00"
    end: str = "2020-01-01T00:00:00+00:00"

    def bounds(self) -> tuple[datetime, datetime]:
        from .ingest import parse_timestamp

        return parse_timestamp(self.start), parse_timestamp(self.end)


@dataclass
class GraphParams:
    alpha_geo: float = ALPHA_GEO
    alpha_feat: float = ALPHA_FEAT
    theta_sim: float = THETA_SIM


@dataclass
class AllocationParams:
    budget: float = BUDGET
    epsilon: float = EPSILON
    minority_threshold: float = MINORITY_THRESHOLD
    tie_break: bool = True


@dataclass
class RunConfig:
    mode: str = "baltimore"
    seed: int = 42
    paths: Paths = field(default_factory=Paths)
    bbox: BBox = BBox(39.197, 39.372, -76.713, -76.529)
    window: Window = field(default_factory=Window)
    graph: GraphParams = field(default_factory=GraphParams)
    stgnn: StgnnConfig = field(default_factory=StgnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    allocation: AllocationParams = field(default_factory=AllocationParams)
    sim: SimConfig = field(default_factory=SimConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.bbox = BBox(*self.bbox) if not isinstance(self.bbox, dict) else BBox(**self.bbox)
        # one seed drives everything
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bbox"] = self.bbox._asdict()
        d["stgnn"]["dilations"] = list(self.stgnn.dilations)
        if d["synth"]["minority_zones"] is not None:
            d["synth"]["minority_zones"] = list(d["synth"]["minority_zones"])
        d["synth"]["origin"] = list(d["synth"]["origin"])
        if d["sim"]["epsilon"] == float("inf"):
            d["sim"]["epsilon"] = "inf"
        if d["allocation"]["epsilon"] == float("inf"):
            d["allocation"]["epsilon"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d)

    def save(self, path):
        return io.write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(io.read_json(path))


def _build(kind, value):
    if value is None or not is_dataclass(kind):
        return value
    if not isinstance(value, dict):
        raise TypeError(f"expected an object for {kind.__name__}, got {type(value).__name__}")
    known = {f.name: f for f in fields(kind)}
    unknown = set(value) - set(known)
    if unknown:
        raise ValueError(f"unknown {kind.__name__} field(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for name, v in value.items():
        sub = _NESTED.get((kind, name))
        if sub is not None:
            v = _build(sub, v)
        elif v == "inf":
            v = float("inf")
        kwargs[name] = v
    if kind is SynthConfig:
        for key in ("minority_zones", "origin"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
    return kind(**kwargs)


_NESTED = {
    (RunConfig, "paths"): Paths,
    (RunConfig, "window"): Window,
    (RunConfig, "graph"): GraphParams,
    (RunConfig, "stgnn"): StgnnConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "allocation"): AllocationParams,
    (RunConfig, "sim"): SimConfig,
    (RunConfig, "synth"): SynthConfig,
    (SimConfig, "detection"): DetectionModel,
}


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Return a new config with ``key.path=value`` strings applied.

    Values are parsed as JSON where possible and kept as strings otherwise.
    """
    d = cfg.to_dict()
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ValueError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ValueError(f"unknown config field {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(d)


def desk_preset(seed: int = 42) -> RunConfig:
    """Synthetic 5x5 city sized to finish the full chain in minutes on one core.

    The predictor is narrowed (16 hidden, 8 embedding channels) and trains for
    fewer epochs than the full-scale defaults; everything else is unchanged.
    """
    synth = SynthConfig()
    cfg = RunConfig(
        mode="synthetic",
        seed=seed,
        stgnn=StgnnConfig(hidden=16, embed=8),
        train=TrainConfig(epochs=DESK_TRAIN_EPOCHS),
        sim=SimConfig(retrain_epochs=DESK_RETRAIN_EPOCHS),
        synth=synth,
    )
    return cfg


DESK_TRAIN_EPOCHS = 30
DESK_RETRAIN_EPOCHS = 10
