"""Closed-form normalized second-order coherence functions.

Only the fermion forms are written out. Boson and classical values are
derived from them through the half-sum rule ``g_C = (g_B + g_F) / 2`` with
``g_C = 1``, so the rule holds by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    AxisKind,
    CoherenceCurve,
    ConfigError,
    GeometryKind,
    GeometrySpec,
    ParticleStatistics,
    Polarization,
    SourceSpec,
    validate_config,
)

_SERIES_CUTOFF = 1e-4


def sinc(x):
    """Unnormalized sinc, sin(x)/x, with sinc(0) = 1."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    x2 = x * x
    out = np.where(small, 1.0 - x2 / 6.0 + x2 * x2 / 120.0, np.sin(safe) / safe)
    return out if out.ndim else float(out)


def dsinc(x):
    """Derivative of :func:`sinc`."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, x)
    out = np.where(small, -x / 3.0 + x**3 / 30.0, (np.cos(safe) - np.sin(safe) / safe) / safe)
    return out if out.ndim else float(out)


def _check_finite(**values):
    for name, v in values.items():
        if not np.all(np.isfinite(np.asarray(v, dtype=float))):
            raise ValueError(f"{name} must be finite")


def _check_beta(beta):
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")


def compose(stat: ParticleStatistics, fermion_value):
    """Map a fermion g2 to the requested statistics via g_B = 2 g_C - g_F."""
    stat = ParticleStatistics.parse(stat)
    f = np.asarray(fermion_value, dtype=float)
    if stat is ParticleStatistics.FERMION:
        out = f
    elif stat is ParticleStatistics.BOSON:
        out = 2.0 - f
    else:
        out = np.ones_like(f)
    return out if out.ndim else float(out)


def g2_hbt_temporal(stat, dnu, tau, beta=1.0):
    """Temporal HBT correlation for a rectangular band of width ``dnu``.

    Fermion: ``1 - beta * sinc^2(pi dnu tau)``.
    """
    _check_finite(dnu=dnu, tau=tau, beta=beta)
    if np.any(np.asarray(dnu) < 0):
        raise ValueError("dnu must be non-negative")
    _check_beta(beta)
    s = sinc(np.pi * np.asarray(dnu) * np.asarray(tau, dtype=float))
    return compose(stat, 1.0 - beta * s**2)


def spatial_arg(l, wavelength, z, dx):
    return np.pi * l * np.asarray(dx, dtype=float) / (wavelength * z)


def g2_hbt_spatial(stat, l, wavelength, z, dx, beta=1.0):
    """Transverse HBT correlation of a uniform slit source of size ``l``."""
    _check_finite(l=l, wavelength=wavelength, z=z, dx=dx, beta=beta)
    if l <= 0 or wavelength <= 0 or z <= 0:
        raise ValueError("l, wavelength and z must be positive")
    _check_beta(beta)
    s = sinc(spatial_arg(l, wavelength, z, dx))
    return compose(stat, 1.0 - beta * s**2)


def g2_hom_spatial(stat, l, wavelength, z, d, dx, polarization=Polarization.PARALLEL, beta=1.0):
    """Transverse correlation behind a HOM beam splitter fed by two equal
    independent sources whose centres are ``d`` apart.

    Parallel polarization (fermion)::

        1 - beta/2 * s^2 + beta/2 * s^2 * cos(2 pi d dx / (lambda z))

    Orthogonal polarization only keeps the same-source terms, which gives a
    half-depth dip ``1 - beta/2 * s^2``.
    """
    _check_finite(l=l, wavelength=wavelength, z=z, d=d, dx=dx, beta=beta)
    if l <= 0 or wavelength <= 0 or z <= 0:
        raise ValueError("l, wavelength and z must be positive")
    if d < 0:
        raise ValueError("d must be non-negative")
    _check_beta(beta)
    dx = np.asarray(dx, dtype=float)
    s2 = sinc(spatial_arg(l, wavelength, z, dx)) ** 2
    if Polarization(polarization) is Polarization.PARALLEL:
        fringe = np.cos(2.0 * np.pi * d * dx / (wavelength * z))
        f = 1.0 - 0.5 * beta * s2 + 0.5 * beta * s2 * fringe
    else:
        f = 1.0 - 0.5 * beta * s2
    return compose(stat, f)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticModel:
    """Bundles everything needed to evaluate one closed-form curve.

    ``axis`` picks the scan coordinate: ``"time"`` for HBT temporal curves,
    ``"position"`` otherwise.
    """

    statistics: ParticleStatistics
    geometry: GeometrySpec
    source: SourceSpec
    polarization: Polarization | None = None
    beta: float = 1.0
    axis: AxisKind = AxisKind.POSITION

    def __post_init__(self):
        validate_config(self.source, self.geometry)
        object.__setattr__(self, "statistics", ParticleStatistics.parse(self.statistics))
        object.__setattr__(self, "axis", AxisKind(self.axis))
        hom = GeometryKind(self.geometry.kind) is GeometryKind.HOM
        if hom and self.polarization is None:
            raise ConfigError("polarization required for HOM")
        if not hom and self.polarization is not None:
            raise ConfigError("polarization only allowed for HOM")
        if hom and self.axis is AxisKind.TIME:
            raise ConfigError("HOM curves are spatial only")
        if self.polarization is not None:
            object.__setattr__(self, "polarization", Polarization(self.polarization))
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")

    def __call__(self, coord):
        src, geo = self.source, self.geometry
        if self.axis is AxisKind.TIME:
            return g2_hbt_temporal(self.statistics, src.bandwidth_dnu, coord, self.beta)
        if GeometryKind(geo.kind) is GeometryKind.HBT:
            return g2_hbt_spatial(self.statistics, src.length_l, src.wavelength_lambda,
                                  geo.z, coord, self.beta)
        return g2_hom_spatial(self.statistics, src.length_l, src.wavelength_lambda, geo.z,
                              geo.d, coord, self.polarization, self.beta)

    def curve(self, coords) -> CoherenceCurve:
        coords = np.asarray(coords, dtype=float)
        g2 = np.asarray(self(coords), dtype=float)
        return CoherenceCurve(
            axis_kind=self.axis,
            coords=coords,
            g2=np.broadcast_to(g2, coords.shape),
            stderr=np.zeros_like(coords),
            metadata={
                "generator": "analytic",
                "statistics": self.statistics.value,
                "geometry": self.geometry.to_dict(),
                "source": self.source.to_dict(),
                "polarization": None if self.polarization is None else self.polarization.value,
                "beta": self.beta,
                "seed": None,
            },
        )


def visibility(curve) -> float:
    """(max - min) / (max + min) over the g2 values of a curve or array."""
    values = curve.g2 if isinstance(curve, CoherenceCurve) else np.asarray(curve, dtype=float)
    if values.size == 0:
        raise ValueError("visibility of an empty curve is undefined")
    hi, lo = float(values.max()), float(values.min())
    if hi + lo == 0:
        raise ValueError("visibility undefined when max + min = 0")
    return (hi - lo) / (hi + lo)


def curve_extremum(model: AnalyticModel, scan_range, n_probe: int = 2001):
    """Global minimum (fermion, classical) or maximum (boson) of ``model``
    over ``scan_range``.

    Dense probing locates the best grid cell, then a bounded scalar search
    refines the coordinate to 1e-9 m (1e-12 s on time axes).
    """
    lo, hi = (float(v) for v in scan_range)
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError("scan_range must be a finite interval of nonzero width")
    if n_probe < 100:
        raise ValueError("n_probe must be at least 100")
    sign = -1.0 if model.statistics is ParticleStatistics.BOSON else 1.0
    xtol = 1e-12 if model.axis is AxisKind.TIME else 1e-9

    grid = np.linspace(lo, hi, n_probe)
    values = sign * np.asarray(model(grid))
    i = int(np.argmin(values))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_probe - 1)]
    best_x, best_v = grid[i], values[i]
    if b - a > xtol:
        res = minimize_scalar(lambda x: sign * float(model(x)), bounds=(a, b),
                              method="bounded", options={"xatol": xtol})
        if res.fun <= best_v:
            best_x, best_v = float(res.x), float(res.fun)
    return float(best_x), float(sign * best_v)


def synth_fermion_curve(boson: CoherenceCurve, classical: CoherenceCurve) -> CoherenceCurve:
    """Pointwise ``g_F = 2 g_C - g_B`` with propagated uncertainty.

    Values below zero are kept and flagged: a fermion coincidence rate
    cannot be negative.
    """
    if boson.axis_kind != classical.axis_kind:
        raise ValueError("curves must share axis_kind")
    if boson.coords.shape != classical.coords.shape or not np.array_equal(
        boson.coords, classical.coords
    ):
        raise ValueError("curves must share identical coordinates")
    g_f = 2.0 * classical.g2 - boson.g2
    se = np.sqrt(4.0 * classical.stderr**2 + boson.stderr**2)
    generators = {boson.metadata.get("generator"), classical.metadata.get("generator")}
    meta = {
        "generator": generators.pop() if len(generators) == 1 else "mixed",
        "statistics": ParticleStatistics.FERMION.value,
        "synthesized_from": ["boson", "classical"],
        "seed": boson.metadata.get("seed"),
    }
    return CoherenceCurve(boson.axis_kind, boson.coords, g_f, se, flagged=g_f < 0, metadata=meta)
