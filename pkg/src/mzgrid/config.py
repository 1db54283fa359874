"""Strict JSON run configuration.

A config has four sections, all required: ``model``, ``projection``,
``integration`` and ``paths``.  Within a section every key is optional and
falls back to the reference experiment, but unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .dynamics import DEFAULT_U0, GridParams
from .projection import CONVENTIONS

SECTIONS = ("model", "projection", "integration", "paths")
MODEL_TYPES = ("3bus", "heat-bath")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionConfig:
    anchor: tuple[float, ...] = (-0.3, 0.8)
    variance: float = 1e-4
    order: int = 1
    sparse_level: int = 7
    quadrature: str = "smolyak"
    convention: str = "orthonormal"
    order_sweep: tuple[int, ...] = ()


@dataclass(frozen=True)
class IntegrationConfig:
    dt: float = 5e-5
    t_end: float = 2.0
    scheme: str = "explicit"
    memory_mode: str = "infinite"
    t_memory: float | None = None
    memory_sweep: tuple[float, ...] = ()
    kernel_stride: int = 1
    kernel_horizon: float | None = None
    output_stride: int = 10


@dataclass(frozen=True)
class BathConfig:
    n_osc: int = 5
    mass: float = 1.0
    x0: float = 0.0
    p0: float = 1.0
    q0: float = 1.0
    pq0: float = 1.0


@dataclass(frozen=True)
class PathsConfig:
    kernel: str = "kernel.npz"
    output_dir: str = "out"


@dataclass(frozen=True)
class RunConfig:
    model_type: str = "3bus"
    grid: GridParams = field(default_factory=GridParams)
    initial_state: tuple[float, ...] = tuple(DEFAULT_U0)
    bath: BathConfig = field(default_factory=BathConfig)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    source: str | None = field(default=None, compare=False)

    @property
    def kernel_dt(self) -> float:
        return self.integration.dt * self.integration.kernel_stride

    @property
    def kernel_horizon(self) -> float:
        return self.integration.kernel_horizon or self.integration.t_end

    def kernel_hash(self) -> str:
        """Hash of everything the kernel tables depend on."""
        payload = {
            "grid": asdict(self.grid),
            "u_hat0": list(self.initial_state[:3]),
            "anchor": list(self.projection.anchor),
            "variance": self.projection.variance,
            "order": self.projection.order,
            "sparse_level": self.projection.sparse_level,
            "quadrature": self.projection.quadrature,
            "convention": self.projection.convention,
            "dt": self.integration.dt,
            "kernel_stride": self.integration.kernel_stride,
            "kernel_horizon": self.kernel_horizon,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def with_paths(self, **kw) -> "RunConfig":
        return replace(self, paths=replace(self.paths, **kw))


def _build(cls, data: dict, section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(extra)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r}: {exc}") from exc


def _positive(name: str, value) -> None:
    if value is None or not isinstance(value, (int, float)) or value <= 0:
        raise ConfigError(f"{name} must be a positive number, got {value!r}")


def config_from_dict(data: dict, source: str | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    missing = [s for s in SECTIONS if s not in data]
    if missing:
        raise ConfigError(f"missing section(s): {', '.join(missing)}")
    extra = sorted(set(data) - set(SECTIONS))
    if extra:
        raise ConfigError(f"unknown top-level key(s): {', '.join(extra)}")

    model = dict(data["model"])
    model_type = model.pop("type", "3bus")
    if model_type not in MODEL_TYPES:
        raise ConfigError(f"model.type must be one of {MODEL_TYPES}, got {model_type!r}")
    kw: dict = {"model_type": model_type, "source": source}
    if model_type == "3bus":
        grid = model.pop("params", {})
        u0 = model.pop("initial_state", list(DEFAULT_U0))
        if model:
            raise ConfigError(f"unknown key(s) in 'model': {', '.join(sorted(model))}")
        kw["grid"] = _build(GridParams, grid, "model.params")
        if len(u0) != 5 or u0[4] <= 0:
            raise ConfigError("model.initial_state must have 5 entries with V3 > 0")
        kw["initial_state"] = tuple(float(x) for x in u0)
    else:
        kw["bath"] = _build(BathConfig, model, "model")
        _positive("model.n_osc", kw["bath"].n_osc)
        _positive("model.mass", kw["bath"].mass)

    proj = _build(ProjectionConfig, data["projection"], "projection")
    _positive("projection.variance", proj.variance)
    if proj.convention not in CONVENTIONS:
        raise ConfigError(f"projection.convention must be one of {CONVENTIONS}")
    if proj.order < 0 or proj.sparse_level < 1:
        raise ConfigError("projection.order must be >= 0 and sparse_level >= 1")
    if any(q < 0 or q > proj.order for q in proj.order_sweep):
        raise ConfigError("projection.order_sweep entries must lie in [0, order]")
    if proj.quadrature not in ("smolyak", "tensor"):
        raise ConfigError("projection.quadrature must be 'smolyak' or 'tensor'")

    integ = _build(IntegrationConfig, data["integration"], "integration")
    _positive("integration.dt", integ.dt)
    _positive("integration.t_end", integ.t_end)
    if integ.kernel_stride < 1 or integ.output_stride < 1:
        raise ConfigError("kernel_stride and output_stride must be >= 1")
    if integ.memory_mode not in ("infinite", "finite", "none"):
        raise ConfigError("integration.memory_mode must be infinite, finite or none")
    if integ.memory_mode == "finite" and integ.t_memory is None:
        raise ConfigError("finite memory_mode needs integration.t_memory")
    if integ.scheme not in ("explicit", "implicit"):
        raise ConfigError("integration.scheme must be explicit or implicit")

    paths = _build(PathsConfig, data["paths"], "paths")
    return RunConfig(projection=proj, integration=integ, paths=paths, **kw)


def parse_config(path) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ConfigError(f"{path}: empty config; missing section(s): {', '.join(SECTIONS)}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return config_from_dict(data, source=str(path))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def bundled_config_path(name: str) -> Path:
    """Path of a config shipped with the package, e.g. ``"3bus_default"``."""
    ref = resources.files("mzgrid") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(ref))


def load_config(name_or_path: str) -> RunConfig:
    path = Path(name_or_path)
    if path.suffix != ".json" and not path.exists():
        path = bundled_config_path(name_or_path)
    return parse_config(path)
