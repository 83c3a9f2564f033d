"""Dataclass configuration for models, problems and runs, plus TOML/JSON loading."""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SCHEMA_VERSION = 1


@dataclass
class ModelConfig:
    kind: str = "heat"
    dim_h: int | None = None
    beta: float = 0.0
    alpha: float = 0.6
    epsilon: float = 0.1
    # sqrt(2) makes Q_t = (-A)^{-2beta-1}(I - e^{2tA}) exactly
    noise_scale: float = math.sqrt(2.0)
    wave_speed: float = 1.0
    dim_k: int | None = None
    sigma: list[list[float]] | None = None
    projection_modes: list[int] | None = None
    projection_vectors: list[list[float]] | None = None
    orthonormalize: bool = True


@dataclass
class ControlConfig:
    set: str = "ball"
    radius: float = 1.0
    lower: list[float] | None = None
    upper: list[float] | None = None
    cost: str = "quadratic"
    eta: float = 0.1
    c: float = 1.0
    table: list[list[float]] | None = None


@dataclass
class CostConfig:
    kind: str = "saturated_quadratic"
    amplitude: float = 1.0
    center: list[float] | None = None
    scale: float = 1.0
    bounds: list[list[float]] | None = None
    values: list | None = None


@dataclass
class SolverConfig:
    lambda_: float | str = "auto"
    tol: float = 1e-6
    max_iter: int = 60
    grid_nodes: int | None = None
    grid_halfwidth: float = 5.0
    gh_order: int = 20
    time_nodes: int = 96
    t_cut: float = 1e-6
    horizon_factor: float = 40.0
    fit_t_min: float = 1e-5
    fit_t_max: float = 1e-2
    fit_samples: int = 24


@dataclass
class SimulationConfig:
    dt: float = 1e-3
    horizon: float | None = None
    paths: int = 2000
    seed: int = 20240917
    initial_states: list[list[float]] = field(
        default_factory=lambda: [[-0.5], [-0.25], [0.0], [0.25], [0.5]]
    )
    n_constant_policies: int = 10


@dataclass
class EstimatesConfig:
    t_min: float = 1e-4
    t_max: float = 1e-2
    samples: int = 24
    lift_nodes: int = 80
    rho: float = 1.0


@dataclass
class ProblemConfig:
    schema: int = SCHEMA_VERSION
    model: ModelConfig = field(default_factory=ModelConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    estimates: EstimatesConfig = field(default_factory=EstimatesConfig)

    def to_dict(self):
        d = asdict(self)
        d["solver"]["lambda"] = d["solver"].pop("lambda_")
        return d


_SECTIONS = {
    "model": ModelConfig,
    "control": ControlConfig,
    "cost": CostConfig,
    "solver": SolverConfig,
    "simulation": SimulationConfig,
    "estimates": EstimatesConfig,
}


def _build(cls, raw, section):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    raw = dict(raw)
    if "lambda" in raw:
        raw["lambda_"] = raw.pop("lambda")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return cls(**raw)


def config_from_dict(raw: dict[str, Any]) -> ProblemConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration document must be a table/object")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"required key 'schema = {SCHEMA_VERSION}' missing or wrong")
    unknown = set(raw) - set(_SECTIONS) - {"schema"}
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    parts = {name: _build(cls, raw.get(name, {}), name) for name, cls in _SECTIONS.items()}
    return ProblemConfig(schema=SCHEMA_VERSION, **parts)


def load_document(path) -> dict[str, Any]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(data)
        return tomllib.loads(data.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc


def load_config(path) -> ProblemConfig:
    return config_from_dict(load_document(path))


def config_digest(raw: dict[str, Any]) -> str:
    """sha256 of the canonical JSON form; invariant under key reordering."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()
