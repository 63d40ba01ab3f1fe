"""Weighted nonlinear least squares for the coherence-curve models.

Four models share one form, ``background + sign * beta * shape(x)``, where
``sign`` is +1 for bosons and -1 for fermions:

=================  ===============================================  ===================
model_id           shape                                            free parameters
=================  ===============================================  ===================
hbt_temporal       sinc^2(pi dnu tau)                               dnu, beta, background
hbt_spatial        sinc^2(pi l x / (lambda z))                      l, beta, background
hom_orthogonal     sinc^2(...) / 2                                  l, beta, background
hom_parallel       sinc^2(...) (1 - cos(2 pi d x / (lambda z))) / 2  l, d, beta, background
=================  ===============================================  ===================

With ``background = 1`` these coincide with :mod:`fermiphot.analytic`.
The solver is a projected Levenberg-Marquardt (damped Gauss-Newton) on
parameters rescaled by their starting magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .analytic import dsinc, sinc, visibility
from .core import CoherenceCurve, ConfigError, FitResult, ParticleStatistics

SINC2_HALF = 1.3915573782515103  # sinc^2(u) = 1/2

MODEL_PARAMS = {
    "hbt_temporal": ("dnu", "beta", "background"),
    "hbt_spatial": ("l", "beta", "background"),
    "hom_orthogonal": ("l", "beta", "background"),
    "hom_parallel": ("l", "d", "beta", "background"),
}
GEOMETRY_PARAMS = ("wavelength", "z")

DEFAULT_BOUNDS = {
    "dnu": (1e2, 1e11),
    "l": (1e-6, 1e-1),
    "d": (0.0, 1e-1),
    "beta": (0.0, 1.0),
    "background": (0.0, 10.0),
}


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FitModelSpec:
    """Which parameters float (with start value and box) and which are held.

    ``free_params`` maps name to ``(initial, lower, upper)``; ``initial`` may
    be ``None`` to use the data-driven initializer.
    """

    model_id: str
    statistics: ParticleStatistics = ParticleStatistics.FERMION
    fixed_params: Mapping[str, float] = field(default_factory=dict)
    free_params: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if self.model_id not in MODEL_PARAMS:
            raise ConfigError(f"unknown model id {self.model_id!r}; valid ids: "
                              + ", ".join(MODEL_PARAMS))
        stat = ParticleStatistics.parse(self.statistics)
        if stat is ParticleStatistics.CLASSICAL:
            raise ConfigError("classical curves are flat; nothing to fit")
        object.__setattr__(self, "statistics", stat)
        names = set(MODEL_PARAMS[self.model_id])
        free, fixed = set(self.free_params), set(self.fixed_params)
        if free & fixed:
            raise ConfigError(f"parameters both fixed and free: {sorted(free & fixed)}")
        if free - names:
            raise ConfigError(f"unknown free parameters: {sorted(free - names)}")
        needed = names | (set(GEOMETRY_PARAMS) if self.spatial else set())
        missing = needed - free - fixed
        if missing:
            raise ConfigError(f"parameters neither fixed nor free: {sorted(missing)}")
        for name, (init, lo, hi) in self.free_params.items():
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ConfigError(f"free parameter {name} needs finite bounds lo < hi")
            if init is not None and not lo <= init <= hi:
                raise ConfigError(f"initial {name}={init} outside [{lo}, {hi}]")
        if not free:
            raise ConfigError("no free parameters")

    @property
    def spatial(self) -> bool:
        return self.model_id != "hbt_temporal"

    @property
    def sign(self) -> float:
        return 1.0 if self.statistics is ParticleStatistics.BOSON else -1.0

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in MODEL_PARAMS[self.model_id] if n in self.free_params)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "statistics": self.statistics.value,
            "fixed_params": dict(self.fixed_params),
            "free_params": {k: list(v) for k, v in self.free_params.items()},
        }


def default_spec(model_id: str, statistics="fermion", wavelength: float = 780e-9,
                 z: float = 0.91, fixed: Mapping[str, float] | None = None,
                 initial: Mapping[str, float] | None = None,
                 bounds: Mapping[str, tuple] | None = None) -> FitModelSpec:
    """Spec with every model parameter free under default bounds unless fixed."""
    if model_id not in MODEL_PARAMS:
        raise ConfigError(f"unknown model id {model_id!r}; valid ids: " + ", ".join(MODEL_PARAMS))
    fixed = dict(fixed or {})
    initial = dict(initial or {})
    bounds = {**DEFAULT_BOUNDS, **(bounds or {})}
    fixed_params = {k: v for k, v in fixed.items()}
    if model_id != "hbt_temporal":
        fixed_params.setdefault("wavelength", wavelength)
        fixed_params.setdefault("z", z)
    free = {name: (initial.get(name), *bounds[name])
            for name in MODEL_PARAMS[model_id] if name not in fixed_params}
    return FitModelSpec(model_id, ParticleStatistics.parse(statistics), fixed_params, free)


# ---------------------------------------------------------------------------
# models and Jacobians


def model_and_jacobian(model_id: str, sign: float, params: Mapping[str, float], x,
                       want=()):
    """Model values and the partial derivatives named in ``want``."""
    x = np.asarray(x, dtype=float)
    beta, bg = params["beta"], params["background"]
    jac = {}
    if model_id == "hbt_temporal":
        a = np.pi * x
        u = a * params["dnu"]
        s, ds = sinc(u), dsinc(u)
        f = bg + sign * beta * s**2
        if "dnu" in want:
            jac["dnu"] = sign * beta * 2 * s * ds * a
        if "beta" in want:
            jac["beta"] = sign * s**2
    else:
        lz = params["wavelength"] * params["z"]
        a = np.pi * x / lz
        u = a * params["l"]
        s, ds = sinc(u), dsinc(u)
        ds2_dl = 2 * s * ds * a
        # HOM dips carry half the HBT weight.
        weight = 1.0 if model_id == "hbt_spatial" else 0.5
        if model_id == "hom_parallel":
            b = 2 * np.pi * x / lz
            v = b * params["d"]
            one_minus_cos = 1.0 - np.cos(v)
            shape, dshape_dl = s**2 * one_minus_cos, ds2_dl * one_minus_cos
            if "d" in want:
                jac["d"] = sign * weight * beta * s**2 * np.sin(v) * b
        else:
            shape, dshape_dl = s**2, ds2_dl
        f = bg + sign * weight * beta * shape
        if "l" in want:
            jac["l"] = sign * weight * beta * dshape_dl
        if "beta" in want:
            jac["beta"] = sign * weight * shape
    if "background" in want:
        jac["background"] = np.ones_like(x)
    return f, jac


def evaluate_model(model_id: str, statistics, params: Mapping[str, float], x):
    sign = 1.0 if ParticleStatistics.parse(statistics) is ParticleStatistics.BOSON else -1.0
    return model_and_jacobian(model_id, sign, params, x)[0]


@dataclass
class JacobianReport:
    passed: bool
    max_rel_error: float
    worst_param: str | None
    worst_x: float | None
    tolerance: float


def jacobian_check(spec: FitModelSpec, params: Mapping[str, float], probe_points,
                   tolerance: float = 1e-5, rel_step: float = 1e-6) -> JacobianReport:
    """Compare analytic partials with central differences.

    The error of each entry is measured against ``max(|J|, |J_fd|, floor)``
    with ``floor = 1e-3 * max(1, |f|) / |p|``, the natural scale of the
    column; this keeps entries that vanish exactly (an even function at its
    peak) from dividing rounding noise by zero.
    """
    full = {**spec.fixed_params, **params}
    for name, (_, lo, hi) in spec.free_params.items():
        if not lo <= full[name] <= hi:
            raise ValueError(f"{name}={full[name]} outside bounds")
    x = np.asarray(probe_points, dtype=float)
    names = spec.free_names
    f, jac = model_and_jacobian(spec.model_id, spec.sign, full, x, names)
    worst, worst_name, worst_x = 0.0, None, None
    for name in names:
        p = full[name]
        h = rel_step * abs(p) if p != 0 else rel_step * 1e-3
        up = dict(full, **{name: p + h})
        dn = dict(full, **{name: p - h})
        fd = (model_and_jacobian(spec.model_id, spec.sign, up, x)[0]
              - model_and_jacobian(spec.model_id, spec.sign, dn, x)[0]) / (2 * h)
        floor = 1e-3 * np.maximum(1.0, np.abs(f)) / max(abs(p), h)
        err = np.abs(jac[name] - fd) / np.maximum(np.maximum(np.abs(jac[name]), np.abs(fd)), floor)
        i = int(np.argmax(err))
        if err[i] > worst:
            worst, worst_name, worst_x = float(err[i]), name, float(x[i])
    return JacobianReport(worst <= tolerance, worst, worst_name, worst_x, tolerance)


# ---------------------------------------------------------------------------
# initialization


def _half_width(x, excess, level):
    """Smallest |x| on each side where ``excess`` first drops below ``level``."""
    widths = []
    for side in (1.0, -1.0):
        sel = side * x >= 0
        xs, es = np.abs(x[sel]), excess[sel]
        order = np.argsort(xs)
        xs, es = xs[order], es[order]
        below = np.flatnonzero(es < level)
        if below.size and below[0] > 0:
            i = below[0]
            x0, x1, e0, e1 = xs[i - 1], xs[i], es[i - 1], es[i]
            widths.append(x0 + (e0 - level) * (x1 - x0) / (e0 - e1) if e0 != e1 else x1)
    if widths:
        return float(np.mean(widths))
    return float(np.max(np.abs(x))) / 2 or 1.0


def initial_guess(curve_x, curve_y, spec: FitModelSpec) -> dict[str, float]:
    """Data-driven start values.

    Background from the far-range median, depth from the central feature,
    widths from its half-maximum, HOM source separation from the dominant
    frequency of an even cosine transform of the residual.
    """
    x, y = np.asarray(curve_x, float), np.asarray(curve_y, float)
    sign = spec.sign
    far = np.abs(x) >= 0.8 * np.max(np.abs(x))
    bg = float(np.median(y[far] if far.sum() >= 3 else y))
    excess = sign * (y - bg)
    centre = float(excess[np.argmin(np.abs(x))])
    lz = spec.fixed_params.get("wavelength", 1.0) * spec.fixed_params.get("z", 1.0)
    guess = {"background": bg}
    mid = spec.model_id
    if mid in ("hbt_temporal", "hbt_spatial"):
        beta = centre
        width = _half_width(x, excess, beta / 2)
    elif mid == "hom_orthogonal":
        beta = 2 * centre
        width = _half_width(x, excess, beta / 4)
    else:
        # The fringe term makes the cosine transform of the excess most
        # negative at f = d / (lambda z).
        span = x.max() - x.min()
        spacing = np.median(np.diff(np.sort(x)))
        freqs = np.linspace(1.0 / span, 0.5 / spacing, 4000)
        weights = np.gradient(x)
        cosine = (excess * weights) @ np.cos(2 * np.pi * np.outer(x, freqs))
        f_d = freqs[int(np.argmin(cosine))]
        guess["d"] = f_d * lz
        beta = 2 * float(excess.max())
        width = _half_width(x, excess, beta / 4)
    guess["beta"] = float(np.clip(beta, 0.05, 1.0))
    if mid == "hbt_temporal":
        guess["dnu"] = SINC2_HALF / (np.pi * width)
    else:
        guess["l"] = SINC2_HALF * lz / (np.pi * width)
    return guess


def _profile_start(x, y, w, spec: FitModelSpec, names, p, auto_l: bool) -> np.ndarray:
    """Refined hom_parallel start from a profile scan over (l, d).

    The model is linear in background and beta, so for every grid point
    those two are solved in closed form and only (l, d) are scanned. The d
    grid spans half to twice the start value, fine enough that the fringe
    phase at the scan edge is off by at most pi/4 between neighbours; this
    removes the fringe-order ambiguity that traps a local solver.
    """
    free = dict(zip(names, p))
    bounds = {n: spec.free_params[n][1:] for n in names}
    params = {**spec.fixed_params, **free}
    lz = params["wavelength"] * params["z"]
    reach = float(np.max(np.abs(x)))

    def grid(name, lo, hi, n, log):
        if name not in free:
            return np.array([params[name]])
        blo, bhi = bounds[name]
        lo, hi = max(lo, blo), min(hi, bhi)
        return np.geomspace(lo, hi, n) if log else np.linspace(lo, hi, n)

    d0 = params["d"]
    spacing = float(np.median(np.diff(np.sort(x))))
    n_d = int(np.clip(math.ceil(1.5 * d0 * 8 * reach / lz), 64, 20000))
    # Above the sampling Nyquist limit the fringe aliases onto a lower d.
    ds = grid("d", 0.5 * d0, min(2.0 * d0, 0.5 * lz / spacing), n_d, False)
    if auto_l:
        ls = grid("l", 0.1 * lz / reach, 10 * lz / spacing, 80, True)
    else:
        ls = grid("l", 0.5 * params["l"], 2.0 * params["l"], 24, True)

    lin = [n for n in ("background", "beta") if n in free]
    best = (math.inf, None)
    b = 2 * np.pi * x / lz
    fringe = 1.0 - np.cos(np.outer(ds, b))                          # (n_d, N)
    for l in ls:
        s2 = sinc(np.pi * x * l / lz) ** 2
        shape = spec.sign * 0.5 * s2 * fringe                       # beta = 1
        target = np.broadcast_to(y, shape.shape).copy()
        cols = []
        if "background" in free:
            cols.append(np.ones_like(shape))
        else:
            target -= params["background"]
        if "beta" in free:
            cols.append(shape)
        else:
            target -= params["beta"] * shape
        if cols:
            a = np.stack(cols, axis=-1) * w[None, :, None]          # (n_d, N, k)
            ata = np.einsum("dnk,dnj->dkj", a, a)
            atb = np.einsum("dnk,dn->dk", a, target * w)
            ata += 1e-15 * np.trace(ata, axis1=1, axis2=2)[:, None, None] * np.eye(len(cols))
            coef = np.linalg.solve(ata, atb[..., None])[..., 0]
            for i, n in enumerate(lin):
                coef[:, i] = np.clip(coef[:, i], *bounds[n])
            resid = (target - np.einsum("dnk,dk->dn", np.stack(cols, axis=-1), coef)) * w
        else:
            coef = np.zeros((ds.size, 0))
            resid = target * w
        sse = np.einsum("dn,dn->d", resid, resid)
        i = int(np.argmin(sse))
        if sse[i] < best[0]:
            best = (float(sse[i]), (l, ds[i], coef[i]))
    l, d, coef = best[1]
    refined = dict(free, l=l, d=d, **dict(zip(lin, coef)))
    return np.array([refined[n] for n in names], float)


# ---------------------------------------------------------------------------
# solver


def _lm(model_id, sign, x, y, w, fixed, names, p0, lo, hi, max_iter, iter_offset=0,
        history=None):
    scale = np.where(p0 != 0, np.abs(p0), np.maximum(hi - lo, 1e-300) * 1e-3)
    q = p0 / scale
    qlo, qhi = lo / scale, hi / scale

    def evaluate(qv, jac=True):
        params = dict(fixed, **dict(zip(names, qv * scale)))
        f, j = model_and_jacobian(model_id, sign, params, x, names if jac else ())
        r = w * (y - f)
        if not jac:
            return r, None
        jm = np.column_stack([-w * j[n] * s for n, s in zip(names, scale)])
        return r, jm

    r, jm = evaluate(q)
    cost = 0.5 * float(r @ r)
    if history is not None:
        history.append(cost)
    lam = 1e-3
    converged, message = False, "maximum iterations reached"
    it = 0
    for it in range(1, max_iter + 1):
        if cost == 0.0:
            converged, message = True, "exact fit"
            break
        grad = jm.T @ r
        # Parameters pinned at a bound with the descent direction pointing
        # outward are held for this step; the rest solve the reduced system.
        active = ((q <= qlo) & (grad > 0)) | ((q >= qhi) & (grad < 0))
        free = ~active
        a = jm[:, free].T @ jm[:, free]
        diag = np.maximum(np.diag(a), 1e-12 * max(np.max(np.diag(a), initial=0.0), 1e-300))
        while True:
            step = np.zeros_like(q)
            if free.any():
                try:
                    step[free] = np.linalg.solve(a + lam * np.diag(diag), -grad[free])
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
            q_new = np.clip(q + step, qlo, qhi)
            taken = q_new - q
            rel_step = float(np.max(np.abs(taken) / np.maximum(np.abs(q), 1e-12)))
            r_new, _ = evaluate(q_new, jac=False)
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new < cost:
                break
            if rel_step < 1e-10 or lam > 1e20:
                # No descent left at float resolution.
                converged = rel_step < 1e-10
                message = "step below tolerance" if converged else "damping exhausted"
                break
            lam *= 4.0
        if cost_new >= cost:
            break
        drop = cost - cost_new
        q = q_new
        r, jm = evaluate(q)
        cost = 0.5 * float(r @ r)
        if history is not None:
            history.append(cost)
        lam = max(lam / 3.0, 1e-15)
        if rel_step < 1e-10:
            converged, message = True, "relative step below 1e-10"
            break
        if drop <= 1e-12 * cost_new:
            converged, message = True, "relative cost change below 1e-12"
            break
    return q * scale, r, jm / scale, cost, it + iter_offset, converged, message


def fit(curve: CoherenceCurve, spec: FitModelSpec, max_iter: int = 500,
        profile: bool | None = None, history: list | None = None) -> FitResult:
    """Fit ``spec`` to the unflagged points of ``curve``.

    Points are weighted by 1/stderr^2 when the curve carries errors. For
    ``hom_parallel`` with a free ``d`` the start is first refined by a
    profile scan (see :func:`_profile_start`) so the solver begins on the
    right fringe order.

    If ``history`` is a list, the weighted cost at the start and after every
    accepted step of the final solve is appended to it.

    ``hom_parallel`` is only identifiable for ``d > l``: the shape is
    symmetric in (l, d) up to a factor (l/d)^2 absorbed by beta.
    """
    keep = ~curve.flagged
    x, y, se = curve.coords[keep], curve.g2[keep], curve.stderr[keep]
    names = spec.free_names
    if x.size < len(names) + 2:
        raise FitError("need at least two more points than free parameters")
    weighted = bool(np.any(se > 0))
    if weighted and np.any(se <= 0):
        raise FitError("weighted fit needs stderr > 0 at every point")
    w = 1.0 / se if weighted else np.ones_like(y)

    guess = None
    init = []
    for n in names:
        value = spec.free_params[n][0]
        if value is None:
            guess = guess or initial_guess(x, y, spec)
            value = guess[n]
        init.append(value)
    lo = np.array([spec.free_params[n][1] for n in names], float)
    hi = np.array([spec.free_params[n][2] for n in names], float)
    p = np.clip(np.array(init, float), lo, hi)
    fixed = dict(spec.fixed_params)

    if profile is None:
        profile = spec.model_id == "hom_parallel" and "d" in names
    if profile:
        auto_l = "l" in names and spec.free_params["l"][0] is None
        p = np.clip(_profile_start(x, y, w, spec, names, p, auto_l), lo, hi)
    iterations = 0
    p, r, jm, cost, iterations, converged, message = _lm(
        spec.model_id, spec.sign, x, y, w, fixed, names, p, lo, hi, max_iter, iterations,
        history)

    sv = np.linalg.svd(jm, compute_uv=False)
    stderr = {}
    if sv.size == 0 or sv[-1] <= 1e-12 * sv[0]:
        converged = False
        message = "singular Jacobian"
    else:
        cov = np.linalg.pinv(jm.T @ jm)
        if not weighted:
            dof = max(x.size - len(names), 1)
            cov = cov * (2 * cost / dof)
        stderr = {n: float(math.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    params = dict(zip(names, (float(v) for v in p)))
    if not all(math.isfinite(v) for v in params.values()):
        converged = False
    return FitResult(
        model_id=spec.model_id,
        params=params,
        residual_norm=float(math.sqrt(2 * cost)),
        iterations=iterations,
        converged=converged,
        stderr=stderr,
        statistics=spec.statistics.value,
        message=message,
        fixed_params=dict(spec.fixed_params),
    )


def fitted_values(result: FitResult, x):
    return evaluate_model(result.model_id, result.statistics,
                          {**result.fixed_params, **result.params}, x)


def extract_visibility(result: FitResult, curve: CoherenceCurve, n_grid: int = 4001) -> float:
    """Visibility of the fitted model over the scanned range (not of the raw data)."""
    if not result.converged:
        raise FitError("visibility needs a converged fit")
    grid = np.union1d(np.linspace(curve.coords.min(), curve.coords.max(), n_grid), curve.coords)
    return visibility(np.asarray(fitted_values(result, grid)))
