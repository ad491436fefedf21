"""Run configuration: parsing, validation, and content hashing.

One structured YAML file fully determines an experiment.  Validation
reports the dotted path of the offending field.  The canonical JSON
form of the parsed config is hashed into every output manifest so a
result can always be traced back to the exact inputs that made it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .fields import TorusGrid
from .noise import DiffusionFamily

__all__ = [
    "ConfigError",
    "RunConfig",
    "canonical_json",
    "config_hash",
    "load_config",
    "parse_config",
]


class ConfigError(ValueError):
    """Invalid configuration; carries the dotted field path."""

    def __init__(self, field_path: str, message: str) -> None:
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


_SYSTEMS = ("homogeneous", "inhomogeneous")
_INITIAL_KINDS = ("taylor_green", "shear_flow", "random_divergence_free", "zero")
_DENSITY_KINDS = ("constant", "cosine", "cosine_2d")


@dataclass(frozen=True)
class RunConfig:
    """Validated experiment description.

    ``raw`` holds the canonical nested-dict form used for hashing; the
    typed accessors build the solver objects on demand.
    """

    system: str
    dim: int
    n: int
    dt: float
    n_steps: int
    noise: dict[str, Any] | None
    initial: dict[str, Any]
    density: dict[str, Any]
    paths: int
    seed: int
    out_dir: str
    experiment: dict[str, Any]
    dealias: bool = True
    raw: dict[str, Any] = field(default_factory=dict, compare=False)

    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.n)

    def family(self) -> DiffusionFamily | None:
        if self.noise is None:
            return None
        spec = dict(self.noise)
        kind = spec.pop("kind", self.system)
        return DiffusionFamily(
            kind=kind,
            amplitude=float(spec.pop("amplitude", 0.25)),
            decay=float(spec.pop("decay", 1.0)),
            n_modes=int(spec.pop("n_modes", 8)),
            profile=str(spec.pop("profile", "tanh" if kind == "homogeneous" else "momentum_tanh")),
            shape=str(spec.pop("shape", "uniform")),
        )

    def horizon(self) -> float:
        return self.dt * self.n_steps


def _require(mapping: dict, key: str, path: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required field")
    return mapping[key]


def _as_mapping(value: Any, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(path, f"expected a mapping, got {type(value).__name__}")
    return value


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    unknown = set(mapping) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"{path}.{name}" if path else name, "unknown field")


def _positive_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if value <= 0:
        raise ConfigError(path, f"must be positive, got {value}")
    return value


def _positive_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    out = float(value)
    if not out > 0:
        raise ConfigError(path, f"must be positive, got {value}")
    return out


def parse_config(data: dict[str, Any]) -> RunConfig:
    """Validate a nested mapping into a RunConfig.

    Unknown fields are rejected so typos fail loudly instead of being
    silently ignored.
    """
    top = _as_mapping(data, "config")
    _check_keys(
        top,
        {"system", "grid", "time", "noise", "initial", "density", "ensemble", "output", "experiment", "dealias"},
        "",
    )

    system = top.get("system", "homogeneous")
    if system not in _SYSTEMS:
        raise ConfigError("system", f"must be one of {_SYSTEMS}, got {system!r}")

    grid = _as_mapping(_require(top, "grid", ""), "grid")
    _check_keys(grid, {"dim", "n"}, "grid")
    dim = _positive_int(_require(grid, "dim", "grid"), "grid.dim")
    if dim not in (1, 2):
        raise ConfigError("grid.dim", f"must be 1 or 2, got {dim}")
    n = _positive_int(_require(grid, "n", "grid"), "grid.n")
    if n & (n - 1):
        raise ConfigError("grid.n", f"must be a power of two, got {n}")

    time = _as_mapping(_require(top, "time", ""), "time")
    _check_keys(time, {"dt", "n_steps"}, "time")
    dt = _positive_float(_require(time, "dt", "time"), "time.dt")
    n_steps = _positive_int(_require(time, "n_steps", "time"), "time.n_steps")

    noise = top.get("noise")
    if noise is not None:
        noise = _as_mapping(noise, "noise")
        _check_keys(noise, {"kind", "amplitude", "decay", "n_modes", "profile", "shape"}, "noise")
        if "amplitude" in noise:
            _positive_float(noise["amplitude"], "noise.amplitude")
        if "n_modes" in noise:
            _positive_int(noise["n_modes"], "noise.n_modes")
        kind = noise.get("kind", system)
        if kind != system:
            raise ConfigError("noise.kind", f"must match system {system!r}, got {kind!r}")

    initial = _as_mapping(top.get("initial", {"kind": "taylor_green"}), "initial")
    _check_keys(initial, {"kind", "amplitude", "seed"}, "initial")
    init_kind = initial.get("kind", "taylor_green")
    if init_kind not in _INITIAL_KINDS:
        raise ConfigError("initial.kind", f"must be one of {_INITIAL_KINDS}, got {init_kind!r}")
    if init_kind == "taylor_green" and dim != 2:
        raise ConfigError("initial.kind", "taylor_green needs grid.dim = 2")

    density = _as_mapping(top.get("density", {}), "density")
    _check_keys(density, {"kind", "base", "contrast", "floor"}, "density")
    if density:
        dens_kind = density.get("kind", "constant")
        if dens_kind not in _DENSITY_KINDS:
            raise ConfigError("density.kind", f"must be one of {_DENSITY_KINDS}, got {dens_kind!r}")
        base = density.get("base", 1.0)
        _positive_float(base, "density.base")
        contrast = density.get("contrast", 0.0)
        if not isinstance(contrast, (int, float)) or isinstance(contrast, bool):
            raise ConfigError("density.contrast", f"expected a number, got {contrast!r}")
        if abs(contrast) >= float(base):
            raise ConfigError("density.contrast", "magnitude must stay below density.base")
        if "floor" in density:
            _positive_float(density["floor"], "density.floor")
    if system == "inhomogeneous" and not density:
        raise ConfigError("density", "missing required field for the inhomogeneous system")

    ensemble = _as_mapping(top.get("ensemble", {}), "ensemble")
    _check_keys(ensemble, {"paths", "seed"}, "ensemble")
    paths = ensemble.get("paths", 1)
    paths = _positive_int(paths, "ensemble.paths")
    seed = ensemble.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("ensemble.seed", f"expected an integer, got {seed!r}")
    if seed < 0:
        raise ConfigError("ensemble.seed", f"must be nonnegative, got {seed}")

    output = _as_mapping(top.get("output", {}), "output")
    _check_keys(output, {"directory"}, "output")
    out_dir = str(output.get("directory", "storus-out"))

    experiment = _as_mapping(top.get("experiment", {}), "experiment")

    dealias = top.get("dealias", True)
    if not isinstance(dealias, bool):
        raise ConfigError("dealias", f"expected true or false, got {dealias!r}")

    canonical: dict[str, Any] = {
        "system": system,
        "grid": {"dim": dim, "n": n},
        "time": {"dt": dt, "n_steps": n_steps},
        "noise": dict(noise) if noise is not None else None,
        "initial": dict(initial) if initial else {"kind": init_kind},
        "density": dict(density),
        "ensemble": {"paths": paths, "seed": seed},
        "output": {"directory": out_dir},
        "experiment": experiment,
        "dealias": dealias,
    }
    return RunConfig(
        system=system,
        dim=dim,
        n=n,
        dt=dt,
        n_steps=n_steps,
        noise=dict(noise) if noise is not None else None,
        initial=dict(initial) if initial else {"kind": init_kind},
        density=dict(density),
        paths=paths,
        seed=seed,
        out_dir=out_dir,
        experiment=experiment,
        dealias=dealias,
        raw=canonical,
    )


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML config file."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("file", f"not valid YAML: {exc}") from exc
    if data is None:
        raise ConfigError("file", "config file is empty")
    return parse_config(data)


def canonical_json(config: RunConfig) -> str:
    """Stable serialized form used for hashing and manifests."""
    return json.dumps(config.raw, sort_keys=True, separators=(",", ":"))


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()
