"""Detection-event simulation of pseudothermal light in an HBT setup.

A pseudothermal field is modelled as ``n_modes`` unit phasors with random
phases and frequencies inside a rectangular band. Photodetection is a
doubly stochastic (Cox) process: sample ``n`` of a detector fires with
probability ``mean_rate * dt * I[n] / <I>``.

Long runs (tens of seconds at 10 ns resolution) never materialize the
trace. It is split into segments; each segment draws its own modes from
``(seed, segment)`` with frequencies on the segment's Fourier grid, so the
time-averaged intensity of every segment is exactly ``n_modes``. Events are
produced by thinning candidate samples and the intensity is only evaluated
at those candidates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import AxisKind, CoherenceCurve, ConfigError

log = logging.getLogger(__name__)

DEFAULT_BIN_WIDTH = 61e-9
DEFAULT_MAX_LAG = 3e-6
DEFAULT_JITTER = 0.45e-9
DEFAULT_SEGMENT_DURATION = 0.1
MAX_MATERIALIZED = 200_000_000


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _phasor_tables(freq_idx, q_len, width):
    m = freq_idx.size
    low = np.empty((width, m), np.complex128)
    high = np.empty((width, m), np.complex128)
    for k in range(m):
        w = np.exp(2j * np.pi * (freq_idx[k] / q_len))
        low[0, k] = 1.0
        for r in range(1, width):
            low[r, k] = low[r - 1, k] * w
        big = low[width - 1, k] * w
        high[0, k] = 1.0
        for r in range(1, width):
            high[r, k] = high[r - 1, k] * big
    return low, high


@numba.njit(cache=True)
def _modal_intensity(idx, freq_idx, coeff, q_len):
    """|sum_k coeff_k exp(2 pi i freq_idx_k n / q_len)|^2 at sorted indices n."""
    width = int(math.sqrt(q_len)) + 2
    low, high = _phasor_tables(freq_idx, q_len, width)
    m = freq_idx.size
    z = coeff.copy()
    out = np.empty(idx.size)
    cur = 0
    for i in range(idx.size):
        gap = idx[i] - cur
        q = gap // width
        r = gap - q * width
        re = 0.0
        im = 0.0
        for k in range(m):
            step = low[r, k]
            if q:
                step = step * high[q, k]
            z[k] = z[k] * step
            re += z[k].real
            im += z[k].imag
        cur = idx[i]
        out[i] = re * re + im * im
    return out


# ---------------------------------------------------------------------------
# intensity traces


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    """Nonnegative intensity on a grid of spacing ``dt``.

    Either modal (lazy, see module docstring) or backed by an explicit
    ``values`` array.
    """

    dt: float
    n_samples: int
    dnu: float = 0.0
    seed: int | None = None
    n_modes: int = 0
    segment_samples: int = 0
    values: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_samples(cls, dt: float, samples) -> "IntensityTrace":
        arr = np.array(samples, dtype=float)
        if arr.ndim != 1 or np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("samples must be a finite nonnegative 1-D array")
        arr.setflags(write=False)
        return cls(dt=float(dt), n_samples=arr.size, values=arr)

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt

    @property
    def is_modal(self) -> bool:
        return self.values is None

    @property
    def mean_level(self) -> float:
        """Exact mean of the intensity, used to scale detection rates."""
        if self.values is not None:
            return float(self.values.mean()) if self.values.size else 0.0
        return float(self.n_modes) if self.n_samples else 0.0

    @property
    def peak_level(self) -> float:
        """Upper bound on any sample."""
        if self.values is not None:
            return float(self.values.max()) if self.values.size else 0.0
        return float(self.n_modes) ** 2

    def segments(self):
        """Yield ``(start, length)`` for each segment."""
        seg = self.segment_samples if self.is_modal else (1 << 20)
        for start in range(0, self.n_samples, seg):
            yield start, min(seg, self.n_samples - start)

    def segment_modes(self, segment: int, length: int):
        """Integer Fourier indices and unit coefficients of one segment."""
        rng = np.random.default_rng([self.seed, segment])
        half = 0.5 * self.dnu * length * self.dt
        lo, hi = math.ceil(-half), math.floor(half)
        freq_idx = rng.choice(hi - lo + 1, size=self.n_modes, replace=False) + lo
        coeff = np.exp(2j * np.pi * rng.random(self.n_modes))
        return freq_idx.astype(np.int64), coeff

    def intensity_at(self, segment: int, start: int, length: int, idx) -> np.ndarray:
        """Intensity at sorted sample indices ``idx`` local to one segment."""
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        if self.values is not None:
            return self.values[start + idx]
        freq_idx, coeff = self.segment_modes(segment, length)
        return _modal_intensity(idx, freq_idx, coeff, length)

    @property
    def samples(self) -> np.ndarray:
        if self.values is not None:
            return self.values
        if self.n_samples > MAX_MATERIALIZED:
            raise MemoryError("trace too long to materialize; use intensity_at")
        out = np.empty(self.n_samples)
        for k, (start, length) in enumerate(self.segments()):
            out[start:start + length] = self.intensity_at(k, start, length, np.arange(length))
        return out


def generate_intensity(dnu: float, duration: float, dt: float, n_modes: int = 32,
                       seed: int = 0,
                       segment_duration: float = DEFAULT_SEGMENT_DURATION) -> IntensityTrace:
    """Pseudothermal intensity |sum of n_modes phasors|^2 sampled every ``dt``.

    Its normalized autocorrelation is ``1 + (1 - 1/n_modes) sinc^2(pi dnu tau)``.
    """
    if not (dnu >= 0 and math.isfinite(dnu)):
        raise ConfigError("dnu must be finite and non-negative")
    if not (dt > 0 and math.isfinite(dt)):
        raise ConfigError("dt must be positive")
    if not duration >= 0:
        raise ConfigError("duration must be non-negative")
    if dnu > 0 and dt > 1.0 / (20.0 * dnu):
        raise ConfigError("dt undersamples the intensity: need dt <= 1/(20 dnu)")
    if not isinstance(n_modes, (int, np.integer)) or n_modes < 1:
        raise ConfigError("n_modes must be a positive integer")
    if n_modes < 32:
        log.warning("n_modes=%d < 32: intensity statistics are far from thermal", n_modes)
    if not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    n = int(round(duration / dt))
    seg = max(1, min(n, int(round(segment_duration / dt))))
    trace = IntensityTrace(dt=float(dt), n_samples=n, dnu=float(dnu), seed=int(seed),
                           n_modes=int(n_modes), segment_samples=seg)
    for _, length in trace.segments():
        available = math.floor(0.5 * dnu * length * dt) - math.ceil(-0.5 * dnu * length * dt) + 1
        if available < n_modes:
            raise ConfigError("band too narrow for n_modes distinct modes per segment")
    return trace


def intensity_autocorrelation(trace: IntensityTrace, max_lag_samples: int) -> np.ndarray:
    """Normalized <I(t) I(t+k dt)> / <I>^2 for k = 0..max_lag_samples, pooled over segments."""
    num = np.zeros(max_lag_samples + 1)
    cnt = np.zeros(max_lag_samples + 1)
    total, n = 0.0, 0
    for k, (start, length) in enumerate(trace.segments()):
        x = trace.intensity_at(k, start, length, np.arange(length)) if trace.is_modal \
            else trace.values[start:start + length]
        total += x.sum()
        n += x.size
        nfft = 1 << int(math.ceil(math.log2(2 * x.size)))
        spec = np.fft.rfft(x, nfft)
        ac = np.fft.irfft(spec * np.conj(spec), nfft)[: max_lag_samples + 1]
        lags = min(max_lag_samples + 1, x.size)
        num[:lags] += ac[:lags]
        cnt[:lags] += x.size - np.arange(lags)
    mean = total / n
    return num / cnt / mean**2


# ---------------------------------------------------------------------------
# event streams


@dataclass(frozen=True, eq=False)
class EventStream:
    detector_id: int
    timestamps: np.ndarray
    duration: float

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=float)
        if ts.ndim != 1:
            raise ValueError("timestamps must be 1-D")
        if ts.size and (ts[0] < 0 or ts[-1] >= self.duration):
            raise ValueError("timestamps must lie in [0, duration)")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        ts.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return self.timestamps.size

    @property
    def rate(self) -> float:
        return self.timestamps.size / self.duration if self.duration > 0 else 0.0


def _candidates(rng, p: float, length: int) -> np.ndarray:
    """Sorted sample indices where a Bernoulli(p) trial succeeds."""
    if p >= 1.0:
        return np.arange(length, dtype=np.int64)
    expected = length * p
    size = int(expected + 6.0 * math.sqrt(expected) + 16)
    pos = np.cumsum(rng.geometric(p, size=size)) - 1
    while pos[-1] < length:
        more = np.cumsum(rng.geometric(p, size=size)) + pos[-1]
        pos = np.concatenate([pos, more])
    return pos[pos < length].astype(np.int64)


def generate_events(trace: IntensityTrace, mean_rate: float, jitter_sigma: float = DEFAULT_JITTER,
                    seed: int = 0, detector_id: int = 1) -> EventStream:
    """Cox-process detection events driven by ``trace``.

    Timestamps are spread uniformly inside their sample, then Gaussian timing
    jitter is added; events pushed outside ``[0, duration)`` are dropped.
    """
    if not (mean_rate >= 0 and math.isfinite(mean_rate)):
        raise ConfigError("mean_rate must be finite and non-negative")
    if mean_rate * trace.dt > 0.1:
        raise ConfigError("mean_rate too high for dt: need mean_rate * dt <= 0.1")
    if not jitter_sigma >= 0:
        raise ConfigError("jitter_sigma must be non-negative")
    mean = trace.mean_level
    if trace.n_samples == 0 or mean <= 0 or mean_rate == 0:
        return EventStream(detector_id, np.empty(0), trace.duration)
    p_max = mean_rate * trace.dt * trace.peak_level / mean
    if p_max > 1.0:
        raise ConfigError("mean_rate too high for dt: peak detection probability exceeds 1")

    chunks = []
    for k, (start, length) in enumerate(trace.segments()):
        rng = np.random.default_rng([seed, detector_id, k])
        idx = _candidates(rng, p_max, length)
        if idx.size == 0:
            continue
        accept = rng.random(idx.size) * trace.peak_level < trace.intensity_at(k, start, length, idx)
        idx = idx[accept]
        t = (start + idx + rng.random(idx.size)) * trace.dt
        if jitter_sigma > 0:
            t = t + rng.normal(0.0, jitter_sigma, idx.size)
        chunks.append(t)
    t = np.sort(np.concatenate(chunks)) if chunks else np.empty(0)
    t = t[(t >= 0) & (t < trace.duration)]
    if t.size > 1:
        t = t[np.concatenate([[True], np.diff(t) > 0])]
    return EventStream(detector_id, t, trace.duration)


# ---------------------------------------------------------------------------
# coincidences


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    bin_width: float
    centers: np.ndarray
    counts: np.ndarray
    total_pairs: int
    singles_rates: tuple[float, float]
    duration: float

    def background_level(self) -> float:
        """Accidental coincidences per bin for uncorrelated streams."""
        r1, r2 = self.singles_rates
        return r1 * r2 * self.bin_width * self.duration


def coincidence_histogram(s1: EventStream, s2: EventStream, bin_width: float = DEFAULT_BIN_WIDTH,
                          max_lag: float = DEFAULT_MAX_LAG) -> CoincidenceHistogram:
    """Histogram of ``t1 - t2`` over all pairs with bins centred on multiples
    of ``bin_width``, out to ``+-max_lag`` (rounded to whole bins)."""
    if not bin_width > 0:
        raise ConfigError("bin_width must be positive")
    if not max_lag >= 0:
        raise ConfigError("max_lag must be non-negative")
    if not math.isclose(s1.duration, s2.duration, rel_tol=1e-12, abs_tol=0.0):
        raise ConfigError("streams must cover the same duration")
    half_bins = int(round(max_lag / bin_width))
    n_bins = 2 * half_bins + 1
    centers = (np.arange(n_bins) - half_bins) * bin_width
    edge = (half_bins + 0.5) * bin_width
    counts = np.zeros(n_bins, np.int64)
    t1, t2 = s1.timestamps, s2.timestamps
    if t1.size and t2.size:
        lo = np.searchsorted(t2, t1 - edge, side="left")
        hi = np.searchsorted(t2, t1 + edge, side="right")
        step = 1 << 18
        for a in range(0, t1.size, step):
            b = min(a + step, t1.size)
            n = hi[a:b] - lo[a:b]
            if not n.sum():
                continue
            first = np.repeat(np.arange(a, b), n)
            offset = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
            lag = t1[first] - t2[lo[first] + offset]
            k = np.floor((lag + edge) / bin_width).astype(np.int64)
            k = k[(k >= 0) & (k < n_bins) & (np.abs(lag) < edge)]
            counts += np.bincount(k, minlength=n_bins)
    rates = (s1.rate, s2.rate)
    return CoincidenceHistogram(bin_width, centers, counts, int(counts.sum()), rates, s1.duration)


def normalize_histogram(h: CoincidenceHistogram) -> CoherenceCurve:
    """g2 per bin as count over the accidental level ``r1 r2 w T``.

    Poisson errors; an empty bin reports the one-count level as its error.
    """
    r1, r2 = h.singles_rates
    if r1 <= 0 or r2 <= 0:
        raise ConfigError("zero singles rate: cannot normalize")
    if h.duration <= 0:
        raise ConfigError("duration must be positive")
    scale = h.background_level()
    counts = h.counts.astype(float)
    return CoherenceCurve(
        AxisKind.TIME, h.centers, counts / scale, np.sqrt(np.maximum(counts, 1.0)) / scale,
        metadata={"generator": "event", "statistics": "boson",
                  "bin_width": h.bin_width, "duration": h.duration,
                  "singles_rates": list(h.singles_rates)},
    )


def synth_fermion_histogram(boson: CoherenceCurve, background_level: float = 1.0) -> CoherenceCurve:
    """``g_F = 2 * background - g_B``; bins below zero are flagged."""
    if not background_level > 0:
        raise ValueError("background_level must be positive")
    g_f = 2.0 * background_level - boson.g2
    meta = dict(boson.metadata, statistics="fermion", synthesized_from=["boson", "background"],
                background_level=background_level)
    return CoherenceCurve(boson.axis_kind, boson.coords, g_f, boson.stderr, flagged=g_f < 0,
                          metadata=meta)


# ---------------------------------------------------------------------------
# text interchange


def write_events(path, streams) -> None:
    """Two columns ``detector_id timestamp_seconds`` at 1 ps resolution."""
    streams = list(streams)
    duration = max((s.duration for s in streams), default=0.0)
    ids = np.concatenate([np.full(len(s), s.detector_id) for s in streams]) if streams else []
    ts = np.concatenate([s.timestamps for s in streams]) if streams else []
    order = np.lexsort((ids, ts)) if len(ts) else []
    with open(path, "w") as fh:
        fh.write(f"# duration_s={duration!r}\n")
        for i in order:
            fh.write(f"{int(ids[i])} {ts[i]:.12f}\n")


def read_events(path) -> dict[int, EventStream]:
    duration = None
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "duration_s=" in line:
                    duration = float(line.split("duration_s=", 1)[1])
                continue
            det, t = line.split()
            rows.append((int(det), float(t)))
    by_id: dict[int, list[float]] = {}
    for det, t in rows:
        by_id.setdefault(det, []).append(t)
    if duration is None:
        duration = max((t for _, t in rows), default=0.0) + 1e-12
    return {det: EventStream(det, np.sort(np.array(ts)), duration) for det, ts in by_id.items()}
