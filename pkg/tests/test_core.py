import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fermiphot.core import (
    AxisKind,
    CoherenceCurve,
    ConfigError,
    DetectorSpec,
    FitResult,
    GeometryKind,
    GeometrySpec,
    ParticleStatistics,
    SourceSpec,
    bandwidth_from_coherence_time,
    coherence_time,
    parse_quantity,
    validate_config,
)

positive = st.floats(min_value=1e-9, max_value=1e3, allow_nan=False, allow_infinity=False)
finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)


@st.composite
def sources(draw):
    return SourceSpec(
        length_l=draw(positive),
        wavelength_lambda=draw(positive),
        bandwidth_dnu=draw(st.floats(0, 1e9)),
        center_x=draw(finite),
        n_subsources=draw(st.integers(2, 500)),
        n_modes=draw(st.integers(1, 64)),
    )


@st.composite
def geometries(draw):
    if draw(st.booleans()):
        return GeometrySpec(GeometryKind.HOM, draw(positive), draw(st.floats(0, 1e-1)))
    return GeometrySpec(GeometryKind.HBT, draw(positive))


@pytest.mark.parametrize("text, value", [
    ("0.59mm", 0.59e-3),
    ("296ns", 296e-9),
    ("296 ns", 296e-9),
    ("3.378MHz", 3.378e6),
    ("910mm", 0.91),
    ("780nm", 780e-9),
    ("50kHz", 5e4),
    ("1e-3", 1e-3),
    (2, 2.0),
])
def test_parse_quantity(text, value):
    assert parse_quantity(text) == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("text", ["", "mm", "1 parsec", "1.2.3m", "abc"])
def test_parse_quantity_rejects(text):
    with pytest.raises(ConfigError):
        parse_quantity(text)


@given(sources())
def test_source_round_trip(src):
    assert SourceSpec.from_dict(src.to_dict()) == src


@given(geometries())
def test_geometry_round_trip(geo):
    assert GeometrySpec.from_dict(geo.to_dict()) == geo


@given(sources(), geometries())
def test_valid_configs_accepted(src, geo):
    assert validate_config(src, geo) == (src, geo)


@given(
    st.floats(allow_nan=True, allow_infinity=True),
    st.floats(allow_nan=True, allow_infinity=True),
    st.one_of(st.none(), st.floats(allow_nan=True, allow_infinity=True)),
    st.sampled_from(list(GeometryKind)),
)
def test_validation_is_total(length, z, d, kind):
    # Every input is either accepted or rejected with ConfigError; nothing else escapes.
    try:
        validate_config(SourceSpec(length, 780e-9), GeometrySpec(kind, z, d))
    except ConfigError as exc:
        assert str(exc)


@pytest.mark.parametrize("source, geometry, message", [
    (SourceSpec(0.0, 780e-9), GeometrySpec("hbt", 0.91), "length_l must be positive"),
    (SourceSpec(-1e-3, 780e-9), GeometrySpec("hbt", 0.91), "length_l must be positive"),
    (SourceSpec(1e-3, 0.0), GeometrySpec("hbt", 0.91), "wavelength_lambda must be positive"),
    (SourceSpec(1e-3, 780e-9, -1.0), GeometrySpec("hbt", 0.91), "bandwidth_dnu"),
    (SourceSpec(1e-3, 780e-9), GeometrySpec("hbt", 0.0), "z must be positive"),
    (SourceSpec(1e-3, 780e-9), GeometrySpec("hom", 0.91), "d required for HOM"),
    (SourceSpec(1e-3, 780e-9), GeometrySpec("hom", 0.91, -1e-3), "d must be non-negative"),
    (SourceSpec(1e-3, 780e-9), GeometrySpec("hbt", 0.91, 1e-3), "d only allowed for HOM"),
    (SourceSpec(1e-3, 780e-9, n_subsources=1), GeometrySpec("hbt", 0.91), "n_subsources"),
    (SourceSpec(math.nan, 780e-9), GeometrySpec("hbt", 0.91), "length_l must be finite"),
])
def test_named_violations(source, geometry, message):
    with pytest.raises(ConfigError, match=message):
        validate_config(source, geometry)


def test_statistics_parse():
    assert ParticleStatistics.parse("Fermion") is ParticleStatistics.FERMION
    with pytest.raises(ConfigError, match="boson, fermion, classical"):
        ParticleStatistics.parse("anyon")


def test_coherence_time_convention():
    assert coherence_time(1 / 296e-9) == pytest.approx(296e-9)
    assert bandwidth_from_coherence_time(296e-9) == pytest.approx(3.378e6, rel=1e-3)
    assert coherence_time(0.0) == math.inf


def test_detector_rejects_negative_jitter():
    with pytest.raises(ConfigError):
        DetectorSpec(jitter_sigma=-1.0)


class TestCoherenceCurve:
    def test_arrays_are_read_only(self):
        c = CoherenceCurve(AxisKind.POSITION, [0.0, 1.0], [1.0, 2.0], [0.1, 0.1])
        with pytest.raises(ValueError):
            c.g2[0] = 5.0
        assert c.points == [(0.0, 1.0, 0.1), (1.0, 2.0, 0.1)]

    def test_scalar_stderr_broadcasts(self):
        c = CoherenceCurve(AxisKind.TIME, [0.0, 1.0, 2.0], [1.0, 1.0, 1.0], 0.0)
        assert c.stderr.shape == (3,)
        assert not c.flagged.any()

    @pytest.mark.parametrize("coords, g2, stderr", [
        ([0.0, 0.0], [1.0, 1.0], 0.0),
        ([1.0, 0.0], [1.0, 1.0], 0.0),
        ([0.0, 1.0], [1.0, np.nan], 0.0),
        ([0.0, 1.0], [1.0, 1.0], [0.1, -0.1]),
        ([0.0, 1.0], [1.0], 0.0),
    ])
    def test_invariants(self, coords, g2, stderr):
        with pytest.raises(ValueError):
            CoherenceCurve(AxisKind.POSITION, coords, g2, stderr)

    def test_analytic_needs_zero_stderr(self):
        with pytest.raises(ValueError, match="zero stderr"):
            CoherenceCurve(AxisKind.POSITION, [0.0, 1.0], [1.0, 1.0], 0.1,
                           metadata={"generator": "analytic"})


class TestFitResult:
    def test_round_trip(self):
        r = FitResult("hbt_temporal", {"dnu": 3.378e6, "beta": 0.9, "background": 1.0},
                      0.1, 7, True, {"dnu": 1e3}, fixed_params={})
        d = r.to_dict()
        assert d["tau_c"] == pytest.approx(1 / 3.378e6)
        assert FitResult.from_dict(d) == r

    def test_converged_must_be_finite(self):
        with pytest.raises(ValueError):
            FitResult("hbt_spatial", {"l": math.nan}, 0.0, 1, True)
        # an unconverged result may carry non-finite values
        FitResult("hbt_spatial", {"l": math.nan}, math.inf, 500, False)
