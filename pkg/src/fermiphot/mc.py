"""Amplitude-level Monte Carlo for two-particle coincidence probabilities.

Each source is a uniform grid of sub-sources with independent random
phases; each temporal mode has a frequency drawn from a rectangular band.
Per realization the engine builds one-particle path amplitudes for two
independently drawn particles ``a`` and ``b`` and composes them per source
pair ``(m, n)``::

    u = A[m,a,1] A[n,b,2]      v = A[m,a,2] A[n,b,1]
    boson |u + v|^2    fermion |u - v|^2    classical |u|^2 + |v|^2

HBT has the single pair (1, 1); HOM sums all four. Realization ``i`` of a run
with seed ``s`` is drawn from ``default_rng([s, i])`` alone, so results do not
depend on how realizations are split across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    ConfigError,
    DetectorSpec,
    GeometryKind,
    GeometrySpec,
    ParticleStatistics,
    Polarization,
    SourceSpec,
    validate_config,
)

BLOCK_SIZE = 250
MIN_REALIZATIONS = 100
STATS = tuple(ParticleStatistics)

# 50:50 beam splitter: transmission t, reflection r.
_T = 1.0 / math.sqrt(2.0)
_R = 1j / math.sqrt(2.0)


class NumericalError(RuntimeError):
    """Raised when an estimate cannot be formed (e.g. vanishing singles)."""


# ---------------------------------------------------------------------------
# propagation


def path_phase(x_source, x_detector, wavelength: float, z: float):
    """Paraxial (Fresnel) path phase k (x_d - x_s)^2 / (2 z)."""
    k = 2.0 * np.pi / wavelength
    dx = np.subtract.outer(np.asarray(x_source, float), np.asarray(x_detector, float))
    return k * dx**2 / (2.0 * z)


def propagate(sub_source_x, emission_phase, mode_frequency, detector: DetectorSpec,
              geometry: GeometrySpec, wavelength: float, n_subsources: int = 1,
              n_modes: int = 1):
    """Amplitude for one sub-source/mode to reach ``detector``.

    Unit phasor ``exp(i [phi + 2 pi nu t + k (x_d - x_s)^2 / (2 z)])`` scaled by
    ``1 / sqrt(n_subsources * n_modes)``. Broadcasts over array inputs.
    """
    phase = (np.asarray(emission_phase, float)
             + 2.0 * np.pi * np.asarray(mode_frequency, float) * detector.t
             + path_phase(sub_source_x, detector.x, wavelength, geometry.z))
    return np.exp(1j * phase) / math.sqrt(n_subsources * n_modes)


def subsource_positions(source: SourceSpec, center: float) -> np.ndarray:
    """Midpoint grid of ``n_subsources`` points across ``[c - l/2, c + l/2]``."""
    n = source.n_subsources
    return center + source.length_l * ((np.arange(n) + 0.5) / n - 0.5)


# ---------------------------------------------------------------------------
# realizations


@dataclass(frozen=True, eq=False)
class Realization:
    """Random inputs of one realization, per source and per particle.

    ``phases[m]`` has shape ``(2, n_subsources, n_modes)`` and
    ``mode_frequencies[m]`` shape ``(2, n_modes)``; axis 0 is particle a/b.
    """

    seed_path: tuple[int, int]
    phases: tuple[np.ndarray, ...]
    mode_frequencies: tuple[np.ndarray, ...]


def draw_realization(seed: int, index: int, sources: Sequence[SourceSpec],
                     shared_phases: bool = False) -> Realization:
    rng = np.random.default_rng([seed, index])
    phases, freqs = [], []
    for m, src in enumerate(sources):
        if shared_phases and m > 0:
            phases.append(phases[0])
            freqs.append(freqs[0])
            continue
        ph = rng.random((2, src.n_subsources, src.n_modes)) * (2.0 * np.pi)
        nu = (rng.random((2, src.n_modes)) - 0.5) * src.bandwidth_dnu
        phases.append(ph)
        freqs.append(nu)
    return Realization((seed, index), tuple(phases), tuple(freqs))


# ---------------------------------------------------------------------------
# setup helpers


def _as_sources(sources, geometry: GeometrySpec) -> tuple[SourceSpec, ...]:
    if isinstance(sources, SourceSpec):
        sources = (sources,)
    sources = tuple(sources)
    kind = GeometryKind(geometry.kind)
    if kind is GeometryKind.HBT:
        if len(sources) != 1:
            raise ConfigError("HBT takes exactly one source")
    else:
        if len(sources) == 1:
            sources = sources * 2
        if len(sources) != 2:
            raise ConfigError("HOM takes one or two sources")
    for src in sources:
        validate_config(src, geometry)
    return sources


def _source_centers(sources, geometry: GeometrySpec) -> list[float]:
    if GeometryKind(geometry.kind) is GeometryKind.HBT:
        return [sources[0].center_x]
    # S1 and the image of S2 sit symmetrically, d apart.
    return [sources[0].center_x - geometry.d / 2.0, sources[1].center_x + geometry.d / 2.0]


def _splitter(geometry: GeometrySpec) -> np.ndarray:
    """Beam-splitter factor [source m, detector j]."""
    if GeometryKind(geometry.kind) is GeometryKind.HBT:
        return np.array([[_T, _R]])
    return np.array([[_T, _R], [_R, _T]])


@dataclass
class _Setup:
    sources: tuple[SourceSpec, ...]
    geometry: GeometrySpec
    polarization: Polarization
    detectors: list[DetectorSpec]
    idx1: np.ndarray
    idx2: np.ndarray
    kernels: list[np.ndarray]          # per source: (n_sub, n_det)
    times: np.ndarray                  # unique detection times
    time_cols: list[np.ndarray]        # detector columns per unique time
    splitter: np.ndarray
    shared_phases: bool


def _build_setup(sources, geometry, pairs, polarization, shared_phases) -> _Setup:
    sources = _as_sources(sources, geometry)
    pairs = [tuple(p) for p in pairs]
    if not pairs:
        raise ConfigError("at least one detector pair required")
    detectors: list[DetectorSpec] = []
    lookup: dict[tuple[float, float], int] = {}
    idx1, idx2 = [], []
    for d1, d2 in pairs:
        for det, idx in ((d1, idx1), (d2, idx2)):
            key = (float(det.x), float(det.t))
            if key not in lookup:
                lookup[key] = len(detectors)
                detectors.append(det)
            idx.append(lookup[key])
    xs = np.array([d.x for d in detectors])
    ts = np.array([d.t for d in detectors])
    centers = _source_centers(sources, geometry)
    kernels = []
    for src, c in zip(sources, centers):
        norm = math.sqrt(src.n_subsources * src.n_modes)
        kernels.append(np.exp(1j * path_phase(subsource_positions(src, c), xs,
                                              src.wavelength_lambda, geometry.z)) / norm)
    times = np.unique(ts)
    time_cols = [np.flatnonzero(ts == t) for t in times]
    if shared_phases:
        if len(sources) < 2:
            raise ConfigError("shared phases need two sources")
        a, b = sources
        if (a.n_subsources, a.n_modes) != (b.n_subsources, b.n_modes):
            raise ConfigError("shared phases need equal discretization")
    pol = Polarization(polarization)
    if GeometryKind(geometry.kind) is GeometryKind.HBT:
        pol = Polarization.PARALLEL
    return _Setup(sources, geometry, pol, detectors, np.array(idx1), np.array(idx2),
                  kernels, times, time_cols, _splitter(geometry), shared_phases)


def _fields(setup: _Setup, real_block: list[Realization]) -> np.ndarray:
    """Path amplitudes A[m, particle, detector, realization, pair]."""
    n_src = len(setup.sources)
    n_det = len(setup.detectors)
    b = len(real_block)
    n_pairs = setup.idx1.size
    out = np.empty((n_src, 2, 2, b, n_pairs), complex)
    for m in range(n_src):
        ph = np.stack([r.phases[m] for r in real_block], axis=1)          # (2, B, N, M)
        nu = np.stack([r.mode_frequencies[m] for r in real_block], axis=1)  # (2, B, M)
        emit = np.exp(1j * ph)
        for p in range(2):
            e = np.empty((b, n_det), complex)
            for t, cols in zip(setup.times, setup.time_cols):
                if t == 0.0:
                    c = emit[p].sum(axis=2)
                else:
                    c = np.einsum("bnk,bk->bn", emit[p], np.exp(2j * np.pi * nu[p] * t))
                e[:, cols] = c @ setup.kernels[m][:, cols]
            out[m, p, 0] = setup.splitter[m, 0] * e[:, setup.idx1]
            out[m, p, 1] = setup.splitter[m, 1] * e[:, setup.idx2]
    return out


@dataclass
class _Terms:
    reduced: dict          # stat -> (B, P)
    full: dict             # stat -> (B, P) coherent eight-path sum (parallel only)
    s1: np.ndarray
    s2: np.ndarray
    cross: np.ndarray      # (n_families, B, P) 2 Re(w_mn w*_m'n'), boson sign
    cross_f: np.ndarray    # same for fermion sign


def _compose(setup: _Setup, amps: np.ndarray) -> _Terms:
    n_src = amps.shape[0]
    shape = amps.shape[3:]
    red = {s: np.zeros(shape) for s in STATS}
    big_u = np.zeros(shape, complex)
    big_v = np.zeros(shape, complex)
    w_plus, w_minus = [], []
    for m in range(n_src):
        for n in range(n_src):
            u = amps[m, 0, 0] * amps[n, 1, 1]
            v = amps[m, 0, 1] * amps[n, 1, 0]
            big_u += u
            big_v += v
            w_plus.append(u + v)
            w_minus.append(u - v)
            classical = np.abs(u) ** 2 + np.abs(v) ** 2
            red[ParticleStatistics.CLASSICAL] += classical
            if m != n and setup.polarization is Polarization.ORTHOGONAL:
                red[ParticleStatistics.BOSON] += classical
                red[ParticleStatistics.FERMION] += classical
            else:
                red[ParticleStatistics.BOSON] += np.abs(u + v) ** 2
                red[ParticleStatistics.FERMION] += np.abs(u - v) ** 2
    full = {
        ParticleStatistics.BOSON: np.abs(big_u + big_v) ** 2,
        ParticleStatistics.FERMION: np.abs(big_u - big_v) ** 2,
        ParticleStatistics.CLASSICAL: red[ParticleStatistics.CLASSICAL],
    }
    fam = [(i, j) for i in range(len(w_plus)) for j in range(i + 1, len(w_plus))]
    if fam:
        cross = np.stack([2 * np.real(w_plus[i] * np.conj(w_plus[j])) for i, j in fam])
        cross_f = np.stack([2 * np.real(w_minus[i] * np.conj(w_minus[j])) for i, j in fam])
    else:
        cross = cross_f = np.zeros((0,) + shape)
    s1 = 0.5 * (np.abs(amps[:, :, 0]) ** 2).sum(axis=(0, 1))
    s2 = 0.5 * (np.abs(amps[:, :, 1]) ** 2).sum(axis=(0, 1))
    return _Terms(red, full, s1, s2, cross, cross_f)


def _run(setup: _Setup, n_realizations: int, seed: int, workers: int = 1) -> _Terms:
    if not isinstance(n_realizations, (int, np.integer)) or n_realizations < MIN_REALIZATIONS:
        raise ConfigError(f"n_realizations must be >= {MIN_REALIZATIONS}")
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    starts = range(0, n_realizations, BLOCK_SIZE)

    def block(start: int) -> _Terms:
        stop = min(start + BLOCK_SIZE, n_realizations)
        reals = [draw_realization(seed, i, setup.sources, setup.shared_phases)
                 for i in range(start, stop)]
        return _compose(setup, _fields(setup, reals))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(block, starts))
    else:
        parts = [block(s) for s in starts]

    def cat(get, axis=0):
        return np.concatenate([get(p) for p in parts], axis=axis)

    return _Terms(
        reduced={s: cat(lambda p, s=s: p.reduced[s]) for s in STATS},
        full={s: cat(lambda p, s=s: p.full[s]) for s in STATS},
        s1=cat(lambda p: p.s1),
        s2=cat(lambda p: p.s2),
        cross=cat(lambda p: p.cross, axis=1),
        cross_f=cat(lambda p: p.cross_f, axis=1),
    )


def ratio_estimate(g_samples: np.ndarray, s1: np.ndarray, s2: np.ndarray):
    """``mean(G) / (2 mean(S1) mean(S2))`` with a delta-method standard error.

    Arrays have realizations on axis 0. The factor 2 counts the two
    particle-to-detector assignments, so independent singles give g2 = 1.
    """
    n = g_samples.shape[0]
    m1, m2 = s1.mean(axis=0), s2.mean(axis=0)
    if np.any(m1 < 1e-30) or np.any(m2 < 1e-30):
        raise NumericalError("degenerate normalization: singles average below 1e-30")
    denom = 2.0 * m1 * m2
    g = g_samples.mean(axis=0) / denom
    psi = g_samples / denom - g * (s1 / m1 + s2 / m2)
    se = psi.std(axis=0, ddof=1) / math.sqrt(n)
    return g, se


# ---------------------------------------------------------------------------
# public estimators


@dataclass
class MCResult:
    """g2 estimates for every statistics on a shared set of realizations."""

    pairs: list[tuple[DetectorSpec, DetectorSpec]]
    g2: dict[ParticleStatistics, np.ndarray]
    stderr: dict[ParticleStatistics, np.ndarray]
    n_realizations: int
    seed: int
    composition: str = "reduced"
    samples: _Terms | None = field(default=None, repr=False)


def g2_mc_scan(sources, geometry: GeometrySpec, pairs, n_realizations: int, seed: int = 0,
               polarization=Polarization.PARALLEL, composition: str = "reduced",
               workers: int = 1, keep_samples: bool = False) -> MCResult:
    """Estimate g2 for all statistics at each ``(det1, det2)`` pair.

    ``composition="full"`` uses the coherent eight-path sum instead of the
    per-source-pair sum; it is only defined for parallel polarization.
    """
    if composition not in ("reduced", "full"):
        raise ConfigError("composition must be 'reduced' or 'full'")
    setup = _build_setup(sources, geometry, pairs, polarization, shared_phases=False)
    if composition == "full" and setup.polarization is Polarization.ORTHOGONAL:
        raise ConfigError("full composition undefined for orthogonal polarization")
    terms = _run(setup, n_realizations, seed, workers)
    src = terms.reduced if composition == "reduced" else terms.full
    g2, se = {}, {}
    for s in STATS:
        g2[s], se[s] = ratio_estimate(src[s], terms.s1, terms.s2)
    return MCResult([tuple(p) for p in pairs], g2, se, n_realizations, seed, composition,
                    terms if keep_samples else None)


def g2_mc(stat, sources, geometry: GeometrySpec, det1: DetectorSpec, det2: DetectorSpec,
          n_realizations: int, seed: int = 0, polarization=Polarization.PARALLEL,
          composition: str = "reduced", workers: int = 1) -> tuple[float, float]:
    """Single-point estimate ``(g2, stderr)`` for one statistics."""
    stat = ParticleStatistics.parse(stat)
    res = g2_mc_scan(sources, geometry, [(det1, det2)], n_realizations, seed,
                     polarization, composition, workers)
    return float(res.g2[stat][0]), float(res.stderr[stat][0])


def spatial_pairs(offsets, x2: float = 0.0, t: float = 0.0):
    """Detector pairs scanning D1 transversely while D2 stays at ``x2``."""
    return [(DetectorSpec(x=x2 + float(dx), t=t), DetectorSpec(x=x2, t=t)) for dx in offsets]


def temporal_pairs(delays, x: float = 0.0):
    return [(DetectorSpec(x=x, t=float(tau)), DetectorSpec(x=x, t=0.0)) for tau in delays]


# ---------------------------------------------------------------------------
# identity checks


def half_sum_terms(u, v):
    """Per-term boson, fermion and classical values for amplitudes ``u, v``."""
    u = np.asarray(u, complex)
    v = np.asarray(v, complex)
    return np.abs(u + v) ** 2, np.abs(u - v) ** 2, np.abs(u) ** 2 + np.abs(v) ** 2


@dataclass
class HalfSumReport:
    passed: bool
    n_realizations: int
    max_rel_error: float
    first_violation: int | None
    tolerance: float


def verify_half_sum(sources, geometry: GeometrySpec, pairs, n_realizations: int = 1000,
                    seed: int = 0, polarization=Polarization.PARALLEL,
                    tolerance: float = 1e-12) -> HalfSumReport:
    """Check ``G_C = (G_B + G_F) / 2`` realization by realization, before averaging."""
    setup = _build_setup(sources, geometry, pairs, polarization, shared_phases=False)
    terms = _run(setup, n_realizations, seed)
    gb = terms.reduced[ParticleStatistics.BOSON]
    gf = terms.reduced[ParticleStatistics.FERMION]
    gc = terms.reduced[ParticleStatistics.CLASSICAL]
    scale = np.maximum(np.abs(gc), np.finfo(float).tiny)
    rel = np.abs(gc - 0.5 * (gb + gf)) / scale
    worst = rel.max(axis=1)
    bad = np.flatnonzero(worst > tolerance)
    return HalfSumReport(
        passed=bad.size == 0,
        n_realizations=n_realizations,
        max_rel_error=float(worst.max()),
        first_violation=None if bad.size == 0 else int(bad[0]),
        tolerance=tolerance,
    )


@dataclass
class CrossTermReport:
    """Full coherent sum vs per-source-pair sum on shared realizations."""

    statistics: ParticleStatistics
    full: np.ndarray
    reduced: np.ndarray
    difference: np.ndarray
    difference_stderr: np.ndarray
    z_score: np.ndarray
    cross_means: np.ndarray      # (n_families, P)
    cross_stderr: np.ndarray
    status: str                  # "agree", "marginal" or "violated"

    @property
    def passed(self) -> bool:
        return self.status == "agree"


def verify_cross_term_cancellation(sources, geometry: GeometrySpec, pairs,
                                   n_realizations: int = 10_000, seed: int = 0,
                                   stat=ParticleStatistics.BOSON,
                                   shared_phases: bool = False) -> CrossTermReport:
    """Compare the eight-path coherent sum with the per-source-pair sum.

    The per-realization difference is exactly the sum of cross terms between
    different source pairs; with independent source phases its mean must
    vanish. ``shared_phases=True`` gives both sources the same phases, a
    negative control where the cross terms survive. Reports ``violated``
    beyond 5 sigma, ``marginal`` between 3 and 5 sigma.
    """
    stat = ParticleStatistics.parse(stat)
    if stat is ParticleStatistics.CLASSICAL:
        raise ConfigError("classical composition has no cross terms")
    setup = _build_setup(sources, geometry, pairs, Polarization.PARALLEL, shared_phases)
    terms = _run(setup, n_realizations, seed)
    denom = 2.0 * terms.s1.mean(axis=0) * terms.s2.mean(axis=0)
    if np.any(denom < 1e-30):
        raise NumericalError("degenerate normalization: singles average below 1e-30")
    full = terms.full[stat] / denom
    red = terms.reduced[stat] / denom
    diff = full - red
    n = n_realizations
    diff_mean = diff.mean(axis=0)
    diff_se = diff.std(axis=0, ddof=1) / math.sqrt(n)
    z = np.where(diff_se > 0, np.abs(diff_mean) / np.where(diff_se > 0, diff_se, 1.0),
                 np.where(np.abs(diff_mean) > 1e-12, np.inf, 0.0))
    cross = (terms.cross if stat is ParticleStatistics.BOSON else terms.cross_f) / denom
    worst = float(z.max())
    status = "agree" if worst <= 3.0 else ("marginal" if worst <= 5.0 else "violated")
    return CrossTermReport(
        statistics=stat,
        full=full.mean(axis=0),
        reduced=red.mean(axis=0),
        difference=diff_mean,
        difference_stderr=diff_se,
        z_score=z,
        cross_means=cross.mean(axis=1),
        cross_stderr=cross.std(axis=1, ddof=1) / math.sqrt(n),
        status=status,
    )
