"""Experiment configuration: JSON schema, strict validation, defaults.

A config fully describes one run: problem, sensor layout, model
hyperparameters, dataset sizes and training schedule. default_config carries
the full-scale experiment settings (model sizes, learning-rate schedules,
1000/32/5000 splits) with desk-scale solver resolutions; desk_config is the
small-budget variant the acceptance suite trains.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .model import DeeponetSpec, VidonSpec
from .sensors import SENSOR_KINDS, SensorConfig
from .train import TrainConfig

__all__ = [
    "ConfigError",
    "DataConfig",
    "ModelConfig",
    "ExperimentConfig",
    "PROBLEMS",
    "domain_for",
    "query_dim",
    "default_config",
    "desk_config",
    "load_config",
    "parse_config",
    "config_to_dict",
]

PROBLEMS = ("darcy", "allen-cahn", "navier-stokes")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def domain_for(problem: str) -> tuple[tuple[float, float], tuple[float, float]]:
    if problem == "allen-cahn":
        return ((0.0, 2.0), (0.0, 2.0))
    return ((0.0, 1.0), (0.0, 1.0))


def query_dim(problem: str) -> int:
    return 3 if problem == "allen-cahn" else 2


@dataclass(frozen=True)
class DataConfig:
    n_train: int = 1000
    n_val: int = 32
    n_test: int = 5000
    resolution: int = 128          # solver grid (darcy / navier-stokes)
    grf_cutoff: int | None = None  # None: grid Nyquist
    n_time: int = 21               # time slices on train/val queries (allen-cahn)
    t_final: float = 0.05
    nu: float = 1e-3
    ns_t_final: float = 5.0
    test_grid: tuple[int, int] = (51, 51)
    test_n_time: int = 41
    format: str = "bin"

    def __post_init__(self):
        if self.format not in ("bin", "jsonl"):
            raise ConfigError(f"unknown dataset format {self.format!r}")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("split sizes must be positive")


@dataclass(frozen=True)
class ModelConfig:
    type: str = "vidon"
    d_enc: int = 40
    heads: int = 4
    p: int = 100
    head_out: int = 64
    encoder_hidden: tuple[int, ...] = (40, 40, 40, 40)
    head_hidden: tuple[int, ...] = (128, 128, 128, 128)
    combiner_hidden: tuple[int, ...] = (256, 256, 256, 256)
    trunk_hidden: tuple[int, ...] = (250, 250, 250, 250)
    branch_hidden: tuple[int, ...] = (250, 250, 250, 250)   # deeponet baseline
    activation: str = "tanh"
    trunk_activation: str = "tanh"
    trunk_in_scale: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.type not in ("vidon", "deeponet"):
            raise ConfigError(f"unknown model type {self.type!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    seed: int = 0
    out: str = "runs/experiment"
    sensors: SensorConfig = field(default_factory=lambda: SensorConfig(kind="regular"))
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")

    def vidon_spec(self) -> VidonSpec:
        m = self.model
        return VidonSpec(
            d=2, d_v=1, d_enc=m.d_enc, n_heads=m.heads, p=m.p, head_out=m.head_out,
            d_trunk_in=query_dim(self.problem),
            encoder_hidden=m.encoder_hidden, head_hidden=m.head_hidden,
            combiner_hidden=m.combiner_hidden, trunk_hidden=m.trunk_hidden,
            activation=m.activation, trunk_activation=m.trunk_activation,
            trunk_in_scale=m.trunk_in_scale,
        )

    def deeponet_spec(self) -> DeeponetSpec:
        if self.sensors.kind not in ("regular", "irregular"):
            raise ConfigError(
                "the fixed-sensor baseline requires a fixed layout "
                "(regular or irregular sensors)")
        m = self.model
        return DeeponetSpec(
            m_fixed=self.sensors.m0, d_v=1, p=m.p,
            d_trunk_in=query_dim(self.problem),
            branch_hidden=m.branch_hidden, trunk_hidden=m.trunk_hidden,
            activation=m.activation, trunk_activation=m.trunk_activation,
            trunk_in_scale=m.trunk_in_scale,
        )


_PROBLEM_DEFAULTS = {
    "darcy": dict(
        sensors=dict(kind="regular", base_grid=(51, 51)),
        data=dict(resolution=128, test_grid=(51, 51)),
        model=dict(p=100, head_out=64, trunk_hidden=(250,) * 4),
        train=dict(lr0=1e-4, halve_at=(20_000, 40_000, 60_000, 80_000),
                   weight_decay=1e-9, max_epochs=100_000),
    ),
    "allen-cahn": dict(
        sensors=dict(kind="regular", base_grid=(26, 26)),
        data=dict(test_grid=(76, 76), n_time=21, test_n_time=41),
        model=dict(p=400, head_out=64, trunk_hidden=(500,) * 4,
                   branch_hidden=(400,) * 4),
        train=dict(lr0=1e-4, halve_at=(20_000, 40_000, 60_000, 80_000),
                   weight_decay=1e-9, max_epochs=100_000),
    ),
    "navier-stokes": dict(
        sensors=dict(kind="regular", base_grid=(33, 33)),
        data=dict(resolution=64, test_grid=(65, 65)),
        model=dict(p=100, head_out=32, trunk_hidden=(250,) * 4),
        train=dict(lr0=1e-4, halve_at=(10_000, 20_000, 40_000, 60_000, 80_000),
                   weight_decay=1e-7, max_epochs=100_000),
    ),
}


def default_config(problem: str, seed: int = 0, out: str = "runs/experiment") -> ExperimentConfig:
    """Full-scale model sizes and schedules; desk-scale solver resolutions."""
    if problem not in _PROBLEM_DEFAULTS:
        raise ConfigError(f"unknown problem {problem!r}; choose from {PROBLEMS}")
    d = _PROBLEM_DEFAULTS[problem]
    return ExperimentConfig(
        problem=problem, seed=seed, out=out,
        sensors=SensorConfig(domain=domain_for(problem), **d["sensors"]),
        data=DataConfig(**d["data"]),
        model=ModelConfig(**d["model"]),
        train=TrainConfig(seed=seed, **d["train"]),
    )


def desk_config(problem: str, sensor_kind: str = "regular", seed: int = 0,
                out: str = "runs/desk") -> ExperimentConfig:
    """Small-budget configuration that trains in minutes on a few CPU cores."""
    if problem != "allen-cahn":
        base = default_config(problem, seed=seed, out=out)
        return dataclasses.replace(
            base,
            sensors=dataclasses.replace(base.sensors, kind=sensor_kind, base_grid=(16, 16)),
            data=dataclasses.replace(base.data, n_train=200, n_val=16, n_test=100,
                                     test_grid=(17, 17), grf_cutoff=16),
            model=ModelConfig(d_enc=32, heads=2, p=50, head_out=16,
                              encoder_hidden=(), head_hidden=(64, 64),
                              combiner_hidden=(64,), trunk_hidden=(64, 64),
                              activation="relu", trunk_activation="tanh"),
            train=TrainConfig(lr0=1e-3, halve_at=(1500, 2750, 4000), weight_decay=1e-9,
                              max_epochs=5000, batch_size=200, seed=seed),
        )
    return ExperimentConfig(
        problem="allen-cahn", seed=seed, out=out,
        sensors=SensorConfig(kind=sensor_kind, base_grid=(16, 16),
                             domain=domain_for("allen-cahn")),
        data=DataConfig(n_train=200, n_val=16, n_test=100, n_time=11,
                        test_grid=(16, 16), test_n_time=11),
        model=ModelConfig(d_enc=32, heads=2, p=50, head_out=16,
                          encoder_hidden=(), head_hidden=(64, 64),
                          combiner_hidden=(64,), trunk_hidden=(64, 64),
                          activation="relu", trunk_activation="tanh",
                          trunk_in_scale=(1.0, 1.0, 20.0)),
        train=TrainConfig(lr0=3e-3, halve_at=(1500, 2750, 4000), weight_decay=1e-9,
                          max_epochs=5000, batch_size=50, seed=seed),
    )


_SECTION_FIELDS = {
    "sensors": ("kind", "base_grid", "drop_fraction_max", "count_variance",
                "perturb_scale"),
    "data": tuple(f.name for f in dataclasses.fields(DataConfig)),
    "model": tuple(f.name for f in dataclasses.fields(ModelConfig)),
    "train": tuple(f.name for f in dataclasses.fields(TrainConfig)),
}
_TUPLE_FIELDS = {"base_grid", "halve_at", "encoder_hidden", "head_hidden",
                 "combiner_hidden", "trunk_hidden", "branch_hidden", "test_grid",
                 "trunk_in_scale"}


def _merge_section(name: str, defaults, overrides: dict):
    allowed = _SECTION_FIELDS[name]
    updates = {}
    for key, value in overrides.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key!r}")
        if key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        updates[key] = value
    try:
        return dataclasses.replace(defaults, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    known_top = {"problem", "seed", "out", "sensors", "data", "model", "train"}
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown top-level key {sorted(unknown)[0]!r}")
    problem = raw.get("problem")
    if problem is None:
        raise ConfigError("config requires a 'problem' field")
    base = default_config(problem, seed=int(raw.get("seed", 0)),
                          out=str(raw.get("out", "runs/experiment")))
    sensors = _merge_section("sensors", base.sensors, raw.get("sensors", {}))
    data = _merge_section("data", base.data, raw.get("data", {}))
    model = _merge_section("model", base.model, raw.get("model", {}))
    train_over = dict(raw.get("train", {}))
    train_over.setdefault("seed", int(raw.get("seed", 0)))
    train = _merge_section("train", base.train, train_over)
    return ExperimentConfig(problem=problem, seed=base.seed, out=base.out,
                            sensors=sensors, data=data, model=model, train=train)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    def encode(obj):
        if dataclasses.is_dataclass(obj):
            return {k: encode(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, tuple):
            return [encode(v) for v in obj]
        if isinstance(obj, list):
            return [encode(v) for v in obj]
        return obj

    return encode(cfg)
