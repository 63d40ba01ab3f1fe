"""Second-order coherence of bosons, fermions and classical particles.

Closed-form curves (:mod:`fermiphot.analytic`), an amplitude-level Monte
Carlo (:mod:`fermiphot.mc`), a detection-event simulator for pseudothermal
light (:mod:`fermiphot.events`), curve fitting (:mod:`fermiphot.estimator`)
and a command-line driver (:mod:`fermiphot.cli`).
"""

from .analytic import (
    AnalyticModel,
    curve_extremum,
    g2_hbt_spatial,
    g2_hbt_temporal,
    g2_hom_spatial,
    synth_fermion_curve,
    visibility,
)
from .core import (
    AxisKind,
    CoherenceCurve,
    ConfigError,
    DetectorSpec,
    FitResult,
    GeometryKind,
    GeometrySpec,
    ParticleStatistics,
    Polarization,
    SourceSpec,
    parse_quantity,
    validate_config,
)
from .estimator import FitModelSpec, default_spec, extract_visibility, fit, jacobian_check
from .mc import NumericalError, g2_mc, g2_mc_scan, verify_cross_term_cancellation, verify_half_sum

__version__ = "0.1.0"

__all__ = [
    "AnalyticModel",
    "AxisKind",
    "CoherenceCurve",
    "ConfigError",
    "DetectorSpec",
    "FitModelSpec",
    "FitResult",
    "GeometryKind",
    "GeometrySpec",
    "NumericalError",
    "ParticleStatistics",
    "Polarization",
    "SourceSpec",
    "curve_extremum",
    "default_spec",
    "extract_visibility",
    "fit",
    "g2_hbt_spatial",
    "g2_hbt_temporal",
    "g2_hom_spatial",
    "g2_mc",
    "g2_mc_scan",
    "jacobian_check",
    "parse_quantity",
    "synth_fermion_curve",
    "validate_config",
    "verify_cross_term_cancellation",
    "verify_half_sum",
    "visibility",
]
