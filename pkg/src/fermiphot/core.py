"""Shared domain types, SI unit parsing and configuration validation.

Every physical quantity held by these types is in SI base units
(meters, seconds, hertz). Human-facing strings such as ``"0.59mm"`` or
``"296ns"`` are converted once, at parse time, by :func:`parse_quantity`.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration violates a named invariant."""


class ParticleStatistics(str, Enum):
    BOSON = "boson"
    FERMION = "fermion"
    CLASSICAL = "classical"

    @classmethod
    def parse(cls, value: "str | ParticleStatistics") -> "ParticleStatistics":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ConfigError(f"unknown statistics {value!r}; expected one of {valid}") from None


class GeometryKind(str, Enum):
    HBT = "hbt"
    HOM = "hom"


class Polarization(str, Enum):
    PARALLEL = "parallel"
    ORTHOGONAL = "orthogonal"


class AxisKind(str, Enum):
    TIME = "time_difference_s"
    POSITION = "position_difference_m"


# ---------------------------------------------------------------------------
# units

_UNIT_SCALE = {
    "": 1.0,
    # length
    "m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "nm": 1e-9,
    # time
    "s": 1.0, "ms": 1e-3, "us": 1e-6, "µs": 1e-6, "ns": 1e-9, "ps": 1e-12,
    # frequency
    "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9,
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zA-Zµ]*)\s*$")


def parse_quantity(text: "str | float | int") -> float:
    """Parse ``"0.59mm"``, ``"296 ns"``, ``"3.378MHz"`` or a bare number into SI."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    m = _QUANTITY.match(str(text))
    if m is None:
        raise ConfigError(f"cannot parse quantity {text!r}")
    unit = m.group(2).lower()
    if unit not in _UNIT_SCALE:
        raise ConfigError(f"unknown unit {m.group(2)!r} in {text!r}")
    return float(m.group(1)) * _UNIT_SCALE[unit]


# ---------------------------------------------------------------------------
# specs


def _finite(name: str, value: Any) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a real number") from None
    if not math.isfinite(v):
        raise ConfigError(f"{name} must be finite")
    return v


@dataclass(frozen=True)
class SourceSpec:
    """Uniform thermal source of transverse size ``length_l`` and a
    rectangular spectral band of width ``bandwidth_dnu``."""

    length_l: float
    wavelength_lambda: float
    bandwidth_dnu: float = 0.0
    center_x: float = 0.0
    n_subsources: int = 200
    n_modes: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SourceSpec":
        return cls(
            length_l=float(data["length_l"]),
            wavelength_lambda=float(data["wavelength_lambda"]),
            bandwidth_dnu=float(data.get("bandwidth_dnu", 0.0)),
            center_x=float(data.get("center_x", 0.0)),
            n_subsources=int(data.get("n_subsources", 200)),
            n_modes=int(data.get("n_modes", 1)),
        )


@dataclass(frozen=True)
class GeometrySpec:
    kind: GeometryKind
    z: float
    d: float | None = None

    def to_dict(self) -> dict:
        return {"kind": GeometryKind(self.kind).value, "z": self.z, "d": self.d}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GeometrySpec":
        d = data.get("d")
        return cls(kind=GeometryKind(data["kind"]), z=float(data["z"]),
                   d=None if d is None else float(d))


@dataclass(frozen=True)
class DetectorSpec:
    x: float = 0.0
    t: float = 0.0
    jitter_sigma: float = 0.0

    def __post_init__(self):
        if not self.jitter_sigma >= 0:
            raise ConfigError("jitter_sigma must be non-negative")


def validate_source(source: SourceSpec) -> SourceSpec:
    if not isinstance(source, SourceSpec):
        raise ConfigError("source must be a SourceSpec")
    if _finite("length_l", source.length_l) <= 0:
        raise ConfigError("length_l must be positive")
    if _finite("wavelength_lambda", source.wavelength_lambda) <= 0:
        raise ConfigError("wavelength_lambda must be positive")
    if _finite("bandwidth_dnu", source.bandwidth_dnu) < 0:
        raise ConfigError("bandwidth_dnu must be non-negative")
    _finite("center_x", source.center_x)
    if not isinstance(source.n_subsources, (int, np.integer)) or source.n_subsources < 2:
        raise ConfigError("n_subsources must be an integer >= 2")
    if not isinstance(source.n_modes, (int, np.integer)) or source.n_modes < 1:
        raise ConfigError("n_modes must be an integer >= 1")
    return source


def validate_geometry(geometry: GeometrySpec) -> GeometrySpec:
    if not isinstance(geometry, GeometrySpec):
        raise ConfigError("geometry must be a GeometrySpec")
    try:
        kind = GeometryKind(geometry.kind)
    except ValueError:
        raise ConfigError(f"unknown geometry kind {geometry.kind!r}") from None
    if _finite("z", geometry.z) <= 0:
        raise ConfigError("z must be positive")
    if kind is GeometryKind.HOM:
        if geometry.d is None:
            raise ConfigError("d required for HOM")
        if _finite("d", geometry.d) < 0:
            raise ConfigError("d must be non-negative")
    elif geometry.d is not None:
        raise ConfigError("d only allowed for HOM")
    return geometry


def validate_config(source: SourceSpec, geometry: GeometrySpec) -> tuple[SourceSpec, GeometrySpec]:
    """Return ``(source, geometry)`` unchanged, or raise :class:`ConfigError`
    naming the first violated invariant."""
    return validate_source(source), validate_geometry(geometry)


def coherence_time(dnu: float) -> float:
    """Coherence time as the first zero of the sinc envelope, 1/dnu."""
    return math.inf if dnu == 0 else 1.0 / dnu


def bandwidth_from_coherence_time(tau_c: float) -> float:
    if not tau_c > 0:
        raise ConfigError("tau_c must be positive")
    return 1.0 / tau_c


# ---------------------------------------------------------------------------
# curves and fit results


def _frozen_array(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class CoherenceCurve:
    """Normalized g2 sampled on a strictly increasing scan coordinate.

    ``flagged`` marks points that are unphysical for the represented
    particles (synthesized fermion values below zero); fits skip them.
    """

    axis_kind: AxisKind
    coords: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray
    flagged: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = _frozen_array(self.coords)
        g2 = _frozen_array(self.g2)
        stderr = _frozen_array(np.broadcast_to(self.stderr, coords.shape))
        flagged = np.zeros(coords.shape, bool) if self.flagged is None else self.flagged
        flagged = _frozen_array(flagged, dtype=bool)
        if coords.ndim != 1 or g2.shape != coords.shape or flagged.shape != coords.shape:
            raise ValueError("coords, g2, stderr and flagged must be 1-D of equal length")
        if coords.size > 1 and not np.all(np.diff(coords) > 0):
            raise ValueError("coordinates must be strictly increasing")
        if not np.all(np.isfinite(g2)):
            raise ValueError("g2 values must be finite")
        if not np.all(stderr >= 0):
            raise ValueError("stderr must be non-negative")
        if self.metadata.get("generator") == "analytic" and np.any(stderr != 0):
            raise ValueError("analytic curves carry zero stderr")
        object.__setattr__(self, "axis_kind", AxisKind(self.axis_kind))
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "g2", g2)
        object.__setattr__(self, "stderr", stderr)
        object.__setattr__(self, "flagged", flagged)

    def __len__(self) -> int:
        return self.coords.size

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.coords.tolist(), self.g2.tolist(), self.stderr.tolist()))


@dataclass
class FitResult:
    model_id: str
    params: dict[str, float]
    residual_norm: float
    iterations: int
    converged: bool
    stderr: dict[str, float] = field(default_factory=dict)
    statistics: str = "fermion"
    message: str = ""
    fixed_params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.converged:
            if not math.isfinite(self.residual_norm) or not all(
                math.isfinite(v) for v in self.params.values()
            ):
                raise ValueError("a converged fit must have finite residual and parameters")

    @property
    def tau_c(self) -> float | None:
        dnu = self.params.get("dnu")
        return None if dnu is None else coherence_time(dnu)

    def to_dict(self) -> dict:
        out = {
            "model_id": self.model_id,
            "statistics": self.statistics,
            "params": dict(self.params),
            "stderr": dict(self.stderr),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
            "converged": self.converged,
            "message": self.message,
            "fixed_params": dict(self.fixed_params),
        }
        if self.tau_c is not None:
            out["tau_c"] = self.tau_c
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FitResult":
        return cls(
            model_id=data["model_id"],
            params={k: float(v) for k, v in data["params"].items()},
            residual_norm=float(data["residual_norm"]),
            iterations=int(data["iterations"]),
            converged=bool(data["converged"]),
            stderr={k: float(v) for k, v in data.get("stderr", {}).items()},
            statistics=data.get("statistics", "fermion"),
            message=data.get("message", ""),
            fixed_params={k: float(v) for k, v in data.get("fixed_params", {}).items()},
        )
