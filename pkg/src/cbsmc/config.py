"""Run configuration: parsing, validation, and construction helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import MediumGeometry
from .velocity import VelocityDistribution


class ConfigError(ValueError):
    """Invalid or unknown configuration content; message names the key path."""


_GEOMETRY_KEYS = {"kind", "b", "k_ell0"}
_VELOCITY_KEYS = {"kind", "kv_over_gamma", "v_si", "gamma_over_k_si"}
_TOP_KEYS = {
    "geometry", "velocity", "delta", "photons", "max_order", "seed", "workers",
    "theta_grid", "out", "include_single_coherent", "local_frequency_stepping",
    "laser_linewidth",
}


@dataclass(frozen=True)
class RunConfig:
    """Resolved parameters of one Monte-Carlo run."""

    geometry_kind: str
    geometry_b: float | None
    k_ell0: float
    velocity_kind: str
    kv_over_gamma: float
    delta: float = 0.0
    photons: int = 100000
    max_order: int = 60
    seed: int = 0
    workers: int = 1
    theta_grid: tuple = (0.0,)
    out: str = "results"
    include_single_coherent: bool = False
    local_frequency_stepping: bool = True
    laser_linewidth: float = 0.0

    def __post_init__(self):
        if self.photons < 1:
            raise ConfigError(f"photons: must be >= 1, got {self.photons}")
        if self.max_order < 1:
            raise ConfigError(f"max_order: must be >= 1, got {self.max_order}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed: must be a 64-bit unsigned value")
        if self.workers < 1:
            raise ConfigError(f"workers: must be >= 1, got {self.workers}")
        if self.kv_over_gamma < 0.0:
            raise ConfigError("velocity.kv_over_gamma: must be nonnegative")
        if self.laser_linewidth < 0.0:
            raise ConfigError("laser_linewidth: must be nonnegative")
        grid = tuple(float(t) for t in self.theta_grid)
        if len(grid) == 0 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("theta_grid: must be a nonempty strictly increasing list")
        object.__setattr__(self, "theta_grid", grid)

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping")
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}")

        geo = data.get("geometry")
        if not isinstance(geo, dict):
            raise ConfigError("geometry: section is required")
        bad = set(geo) - _GEOMETRY_KEYS
        if bad:
            raise ConfigError(f"unknown key geometry.{sorted(bad)[0]}")
        kind = geo.get("kind")
        if kind not in ("slab", "sphere"):
            raise ConfigError(f"geometry.kind: expected 'slab' or 'sphere', got {kind!r}")
        b = geo.get("b")
        if kind == "sphere":
            if b is None or not np.isfinite(b) or b <= 0:
                raise ConfigError("geometry.b: sphere requires a finite positive value")
            b = float(b)
        elif b is not None:
            raise ConfigError("geometry.b: only valid for the sphere")

        vel = data.get("velocity")
        if not isinstance(vel, dict):
            raise ConfigError("velocity: section is required")
        bad = set(vel) - _VELOCITY_KEYS
        if bad:
            raise ConfigError(f"unknown key velocity.{sorted(bad)[0]}")
        vkind = vel.get("kind")
        if vkind not in ("static", "gaussian", "lorentz"):
            raise ConfigError(
                f"velocity.kind: expected 'static', 'gaussian' or 'lorentz', got {vkind!r}"
            )
        kv = vel.get("kv_over_gamma")
        if "v_si" in vel or "gamma_over_k_si" in vel:
            if kv is not None:
                raise ConfigError("velocity: give kv_over_gamma or the SI pair, not both")
            if "v_si" not in vel or "gamma_over_k_si" not in vel:
                raise ConfigError("velocity: SI input needs both v_si and gamma_over_k_si")
            if vel["gamma_over_k_si"] <= 0:
                raise ConfigError("velocity.gamma_over_k_si: must be positive")
            kv = float(vel["v_si"]) / float(vel["gamma_over_k_si"])
        if vkind == "static":
            kv = 0.0 if kv is None else float(kv)
            if kv != 0.0:
                raise ConfigError("velocity.kv_over_gamma: static requires 0")
        else:
            if kv is None:
                raise ConfigError("velocity.kv_over_gamma: required for moving atoms")
            kv = float(kv)

        kwargs = dict(
            geometry_kind=kind,
            geometry_b=b,
            k_ell0=float(geo.get("k_ell0", 1000.0)),
            velocity_kind=vkind,
            kv_over_gamma=kv,
        )
        for key in ("delta", "laser_linewidth"):
            if key in data:
                kwargs[key] = float(data[key])
        for key in ("photons", "max_order", "seed", "workers"):
            if key in data:
                val = data[key]
                if not isinstance(val, (int, np.integer)) or isinstance(val, bool):
                    raise ConfigError(f"{key}: must be an integer")
                kwargs[key] = int(val)
        if "theta_grid" in data:
            kwargs["theta_grid"] = tuple(float(t) for t in data["theta_grid"])
        if "out" in data:
            kwargs["out"] = str(data["out"])
        for key in ("include_single_coherent", "local_frequency_stepping"):
            if key in data:
                if not isinstance(data[key], bool):
                    raise ConfigError(f"{key}: must be a boolean")
                kwargs[key] = data[key]
        return cls(**kwargs)

    def to_dict(self):
        """Serializable form; from_dict(to_dict()) is a fixed point."""
        geo = {"kind": self.geometry_kind, "k_ell0": self.k_ell0}
        if self.geometry_b is not None:
            geo["b"] = self.geometry_b
        return {
            "geometry": geo,
            "velocity": {"kind": self.velocity_kind, "kv_over_gamma": self.kv_over_gamma},
            "delta": self.delta,
            "photons": self.photons,
            "max_order": self.max_order,
            "seed": self.seed,
            "workers": self.workers,
            "theta_grid": list(self.theta_grid),
            "out": self.out,
            "include_single_coherent": self.include_single_coherent,
            "local_frequency_stepping": self.local_frequency_stepping,
            "laser_linewidth": self.laser_linewidth,
        }

    def replace(self, **changes):
        import dataclasses

        return dataclasses.replace(self, **changes)

    # -- domain objects --------------------------------------------------------

    def build_geometry(self):
        if self.geometry_kind == "slab":
            return MediumGeometry.slab(k_ell0=self.k_ell0)
        return MediumGeometry.sphere(self.geometry_b, k_ell0=self.k_ell0)

    def build_velocity(self):
        if self.velocity_kind == "static":
            return VelocityDistribution.static()
        if self.velocity_kind == "gaussian":
            return VelocityDistribution.gaussian(self.kv_over_gamma)
        return VelocityDistribution.lorentz_like(v=self.kv_over_gamma)


def load_config(path):
    """Load and validate a JSON run configuration file."""
    import json

    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")
    return RunConfig.from_dict(data)


@dataclass(frozen=True)
class SweepSpec:
    """One sweep axis applied to a base configuration."""

    axis: str
    values: tuple
    base: RunConfig

    _AXES = ("velocity", "detuning", "optical_thickness")

    def __post_init__(self):
        if self.axis not in self._AXES:
            raise ConfigError(f"sweep axis must be one of {self._AXES}, got {self.axis!r}")
        vals = tuple(float(v) for v in self.values)
        if len(vals) == 0:
            raise ConfigError("sweep values must be a nonempty list")
        object.__setattr__(self, "values", vals)

    def point_config(self, index):
        value = self.values[index]
        if self.axis == "velocity":
            kind = self.base.velocity_kind
            if kind == "static" and value != 0.0:
                kind = "gaussian"
            if value == 0.0:
                kind = "static"
            return self.base.replace(velocity_kind=kind, kv_over_gamma=value)
        if self.axis == "detuning":
            return self.base.replace(delta=value)
        if self.base.geometry_kind != "sphere":
            raise ConfigError("optical_thickness sweep requires a sphere geometry")
        return self.base.replace(geometry_b=value)
