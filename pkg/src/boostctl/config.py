"""Scenario configuration with TOML round-trip."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli
import tomli_w

SCENARIOS = ("corridor", "waypoint", "custom")
ARCHITECTURES = ("boost", "imc", "measured_dist", "distributed")
# the REN is a dense operator, so the per-agent architecture has no training path
TRAINABLE = {"corridor": ("boost", "imc"), "waypoint": ("boost", "imc", "measured_dist"),
             "custom": ("boost", "imc", "measured_dist")}
LOSSES = {"corridor": "corridor", "custom": "corridor", "waypoint": "tltl"}


class ConfigError(ValueError):
    pass


@dataclass
class PlantConfig:
    start: list = field(default_factory=lambda: [-2.0, -2.0, 2.0, -2.0])
    targets: list = field(default_factory=lambda: [2.0, 2.0, -2.0, 2.0])
    mass: float = 1.0
    b1: float = 2.0
    b2: float = 0.5
    k: float = 1.0
    ts: float = 0.05


@dataclass
class RenConfig:
    q1: int = 8
    q2: int = 8
    alpha: float = 0.9
    beta: float | None = None
    bias_mode: str = "time_varying"
    init_std: float = 0.1


@dataclass
class TrainConfig:
    lr: float = 0.005
    epochs: int = 3000
    batch_size: int = 1
    n_train: int = 100
    ic_std: float = 0.2
    noise_std: float = 0.1
    checkpoint_every: int = 100
    aggregator: str = "mean"


@dataclass
class CorridorLossConfig:
    alpha_u: float = 2.5e-4
    alpha_ca: float = 100.0
    alpha_obs: float = 5e3
    r_agent: float = 0.25
    D: float = 0.5
    eps: float = 0.05
    obstacles: list = field(default_factory=lambda: [[2.5, 0.0], [-2.5, 0.0], [1.5, 0.0], [-1.5, 0.0]])
    sigma: float = 0.2


@dataclass
class WaypointConfig:
    goals: list = field(default_factory=lambda: [[[0.0, 2.0], [-2.0, -2.0], [2.0, -2.0]],
                                                 [[2.0, -2.0], [0.0, 2.0], [-2.0, -2.0]]])
    obstacles: list = field(default_factory=lambda: [[-2.0, 2.0], [2.0, 2.0]])
    r_obs: float = 1.7
    r_rob: float = 0.5
    goal_radius: float = 0.05
    alpha_reg: float = 1e-4


@dataclass
class ScenarioConfig:
    scenario: str = "corridor"
    architecture: str = "boost"
    horizon: int = 100
    seed: int = 0
    plant: PlantConfig = field(default_factory=PlantConfig)
    ren: RenConfig = field(default_factory=RenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corridor: CorridorLossConfig = field(default_factory=CorridorLossConfig)
    waypoint: WaypointConfig = field(default_factory=WaypointConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.architecture not in TRAINABLE[self.scenario]:
            raise ConfigError(f"architecture {self.architecture!r} is not available for {self.scenario!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.scenario == "waypoint" and self.horizon < 2:
            raise ConfigError("the TLTL loss needs horizon >= 2")
        if self.train.epochs < 0 or self.train.batch_size < 1 or self.train.n_train < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and n_train >= 1 are required")
        if self.train.aggregator not in ("mean", "max"):
            raise ConfigError(f"unknown aggregator {self.train.aggregator!r}")
        n = len(self.plant.start)
        if n % 2 or len(self.plant.targets) != n:
            raise ConfigError("start and targets need matching planar coordinates")
        if self.ren.q1 < 1 or self.ren.q2 < 1:
            raise ConfigError("REN dimensions must be positive")

    @property
    def loss_kind(self) -> str:
        return LOSSES[self.scenario]

    @property
    def dim(self) -> int:
        return len(self.plant.start)

    def with_overrides(self, seed: int | None = None, epochs: int | None = None) -> "ScenarioConfig":
        cfg = replace(self)
        if seed is not None:
            cfg.seed = int(seed)
        if epochs is not None:
            cfg.train = replace(cfg.train, epochs=int(epochs))
        cfg.validate()
        return cfg


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    return d


def to_dict(cfg: ScenarioConfig) -> dict:
    return _strip_none(asdict(cfg))


_SECTIONS = {"plant": PlantConfig, "ren": RenConfig, "train": TrainConfig,
             "corridor": CorridorLossConfig, "waypoint": WaypointConfig}


def from_dict(data: dict) -> ScenarioConfig:
    kwargs = {}
    top = {f.name for f in fields(ScenarioConfig)}
    for key, value in data.items():
        if key not in top:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            known = {f.name for f in fields(cls)}
            bad = set(value) - known
            if bad:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(bad)}")
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    return ScenarioConfig(**kwargs)


def load(path: str | Path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        return from_dict(tomli.load(fh))


def save(cfg: ScenarioConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(to_dict(cfg), fh)


def corridor_defaults() -> ScenarioConfig:
    """Robots swap diagonal corners through the gap."""
    return ScenarioConfig()


def corridor_literal_defaults() -> ScenarioConfig:
    """Corridor with robot 2 starting on its own target."""
    return ScenarioConfig(plant=PlantConfig(start=[-2.0, -2.0, -2.0, 2.0], targets=[2.0, 2.0, -2.0, 2.0]))


def waypoint_defaults() -> ScenarioConfig:
    return ScenarioConfig(
        scenario="waypoint",
        architecture="measured_dist",
        plant=PlantConfig(start=[-2.0, 0.0, 0.0, 0.0], targets=[2.0, -2.0, -2.0, -2.0]),
        ren=RenConfig(q1=32, q2=32),
        train=TrainConfig(lr=0.001, epochs=500, batch_size=5),
    )


def defaults(scenario: str) -> ScenarioConfig:
    if scenario == "corridor":
        return corridor_defaults()
    if scenario == "corridor-literal":
        return corridor_literal_defaults()
    if scenario == "waypoint":
        return waypoint_defaults()
    raise ConfigError(f"no defaults for scenario {scenario!r}")


FULL_EPOCHS = {"corridor": 12000, "waypoint": 1500}


def paper_scale(cfg: ScenarioConfig) -> ScenarioConfig:
    """Full-length training settings for the two benchmark scenarios."""
    out = replace(cfg, train=replace(cfg.train, epochs=FULL_EPOCHS.get(cfg.scenario, cfg.train.epochs)))
    if cfg.scenario == "corridor":
        out.ren = replace(out.ren, q1=8, q2=8)
        out.train = replace(out.train, lr=0.005, batch_size=1)
    elif cfg.scenario == "waypoint":
        out.ren = replace(out.ren, q1=32, q2=32)
        out.train = replace(out.train, lr=0.001, batch_size=5)
    out.validate()
    return out
