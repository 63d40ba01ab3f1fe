"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear in the
terminal summary) or directly with ``python tests/test_acceptance.py``.
"""

import json
import sys
import time

import numpy as np
import pytest

from fermiphot import analytic as an
from fermiphot import cli
from fermiphot import estimator as es
from fermiphot import events as ev
from fermiphot import mc
from fermiphot.core import (
    AxisKind,
    CoherenceCurve,
    GeometrySpec,
    ParticleStatistics,
    Polarization,
    SourceSpec,
)

LAM, Z = 780e-9, 0.91
SEED = cli.DEFAULT_SEED
RESULTS: dict[int, str] = {}


def record(n: int, passed: bool, detail: str) -> bool:
    RESULTS[n] = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    return passed


# ---------------------------------------------------------------------------
# criteria; each returns (passed, detail)


def criterion_1():
    t0 = time.perf_counter()
    x = np.linspace(-3e-3, 3e-3, 21)
    configs = [
        (SourceSpec(0.55e-3, LAM, n_subsources=200), GeometrySpec("hbt", Z),
         Polarization.PARALLEL),
        (SourceSpec(0.59e-3, LAM, n_subsources=200), GeometrySpec("hom", Z, 2e-3),
         Polarization.PARALLEL),
        (SourceSpec(0.59e-3, LAM, n_subsources=200), GeometrySpec("hom", Z, 2e-3),
         Polarization.ORTHOGONAL),
    ]
    reports = [mc.verify_half_sum(src, geo, mc.spatial_pairs(x), 1000, SEED, pol)
               for src, geo, pol in configs]
    temporal = mc.verify_half_sum(SourceSpec(0.1e-3, LAM, 1 / 296e-9, n_subsources=2,
                                             n_modes=64),
                                  GeometrySpec("hbt", Z),
                                  mc.temporal_pairs(np.linspace(0, 1e-6, 11)), 1000, SEED)
    reports.append(temporal)
    elapsed = time.perf_counter() - t0
    worst = max(r.max_rel_error for r in reports)
    ok = all(r.passed for r in reports) and worst <= 1e-12 and elapsed < 5.0
    return ok, (f"max relative error {worst:.2e} over {len(reports)} configs x 1000 "
                f"realizations (tol 1e-12), {elapsed:.2f} s (limit 5 s)")


def criterion_2():
    x = np.linspace(-3e-3, 3e-3, 2001)
    checks = {
        "boson(0)=2": an.g2_hbt_spatial("boson", 0.55e-3, LAM, Z, 0.0) == 2.0
        and an.g2_hbt_temporal("boson", 3.378e6, 0.0) == 2.0,
        "fermion(0)=0": an.g2_hbt_spatial("fermion", 0.55e-3, LAM, Z, 0.0) == 0.0
        and an.g2_hbt_temporal("fermion", 3.378e6, 0.0) == 0.0,
        "classical=1": bool(np.all(an.g2_hbt_spatial("classical", 0.55e-3, LAM, Z, x) == 1.0)),
    }
    hom0 = abs(an.g2_hom_spatial("fermion", 0.59e-3, LAM, Z, 5e-3, 0.0) - 1.0)
    flat = np.max(np.abs(an.g2_hom_spatial("fermion", 0.59e-3, LAM, Z, 0.0, x) - 1.0))
    checks["HOM fermion(0)=1"] = hom0 <= 1e-12
    checks["HOM d=0 flat"] = flat <= 1e-12
    failed = [k for k, v in checks.items() if not v]
    return not failed, (f"HBT limits exact; HOM |g(0)-1| = {hom0:.1e}, d=0 max dev "
                        f"{flat:.1e}" + (f"; failed: {failed}" if failed else ""))


def _mc_oracle(source, geometry, pol, x, n):
    res = mc.g2_mc_scan(source, geometry, mc.spatial_pairs(x), n, SEED, pol)
    zmax, se_mean = 0.0, {}
    for s in ParticleStatistics:
        if geometry.d is None:
            exact = an.g2_hbt_spatial(s, source.length_l, LAM, Z, x)
        else:
            exact = an.g2_hom_spatial(s, source.length_l, LAM, Z, geometry.d, x, pol)
        # exact-zero points (fermion HBT at dx=0) carry round-off-sized stderr; an
        # absolute 1e-12 floor keeps them from dominating
        err = np.maximum(np.abs(res.g2[s] - exact) - 1e-12, 0.0)
        z = np.where(err > 0, err / np.maximum(res.stderr[s], 1e-300), 0.0)
        zmax = max(zmax, float(z.max()))
        se_mean[s] = res.stderr[s]
    return zmax, se_mean


def criterion_3():
    t0 = time.perf_counter()
    x = np.linspace(-3e-3, 3e-3, 21)
    n = 20_000
    configs = {
        "HBT l=0.55": (SourceSpec(0.55e-3, LAM, n_subsources=200), GeometrySpec("hbt", Z),
                       Polarization.PARALLEL),
        "HOM-par l=0.59": (SourceSpec(0.59e-3, LAM, n_subsources=200),
                           GeometrySpec("hom", Z, 2e-3), Polarization.PARALLEL),
        "HOM-orth l=0.59": (SourceSpec(0.59e-3, LAM, n_subsources=200),
                            GeometrySpec("hom", Z, 2e-3), Polarization.ORTHOGONAL),
    }
    worst_z, ratios = 0.0, []
    for src, geo, pol in configs.values():
        z1, se1 = _mc_oracle(src, geo, pol, x, n)
        z4, se4 = _mc_oracle(src, geo, pol, x, 4 * n)
        worst_z = max(worst_z, z1)
        for s in ParticleStatistics:
            keep = se4[s] > 0
            ratios.append(np.mean(se1[s][keep]) / np.mean(se4[s][keep]))
    elapsed = time.perf_counter() - t0
    ratio_ok = all(abs(r / 2 - 1) <= 0.2 for r in ratios)
    ok = worst_z <= 3.0 and ratio_ok and elapsed < 180
    return ok, (f"max |MC - exact| / stderr = {worst_z:.2f} (limit 3) at N=2e4, seed {SEED}; "
                f"stderr(N)/stderr(4N) in [{min(ratios):.3f}, {max(ratios):.3f}] "
                f"(2 +- 20%); {elapsed:.1f} s (limit 180 s)")


def criterion_4():
    t0 = time.perf_counter()
    src = SourceSpec(0.59e-3, LAM, n_subsources=200)
    geo = GeometrySpec("hom", Z, 2e-3)
    pairs = mc.spatial_pairs(np.linspace(-1.5e-3, 1.5e-3, 11))
    real = [mc.verify_cross_term_cancellation(src, geo, pairs, 10_000, SEED, stat)
            for stat in ("boson", "fermion")]
    ctrl = [mc.verify_cross_term_cancellation(src, geo, pairs, 10_000, SEED, stat,
                                              shared_phases=True)
            for stat in ("boson", "fermion")]
    elapsed = time.perf_counter() - t0
    z_real = max(float(r.z_score.max()) for r in real)
    z_ctrl = min(float(r.z_score.max()) for r in ctrl)
    ok = (all(r.status == "agree" for r in real) and all(c.status != "agree" for c in ctrl)
          and elapsed < 60)
    return ok, (f"independent phases max z = {z_real:.2f} (agree <= 3); shared-phase control "
                f"max z = {z_ctrl:.1f} ({'/'.join(c.status for c in ctrl)}); "
                f"{elapsed:.1f} s (limit 60 s)")


def criterion_5():
    t0 = time.perf_counter()
    cfg = cli.resolve("events", {"synth_fermion": True, "seed": SEED})
    out = cli.run_events(cfg, None)
    boson, fermion = out["boson"], out["fermion"]
    fb = es.fit(boson, es.default_spec("hbt_temporal", "boson"))
    ff = es.fit(fermion, es.default_spec("hbt_temporal", "fermion"))
    elapsed = time.perf_counter() - t0
    tau_err = abs(fb.tau_c / 296e-9 - 1)
    dnu_err = abs(ff.params["dnu"] / fb.params["dnu"] - 1)
    flags_ok = np.array_equal(fermion.flagged, fermion.g2 < 0)
    # the run itself may have no sub-zero bins; check the flagging path on a boson
    # curve whose peak bin overshoots 2
    g = boson.g2.copy()
    peak = int(np.argmax(g))
    g[peak] = 2.5
    forced = ev.synth_fermion_histogram(CoherenceCurve(AxisKind.TIME, boson.coords, g,
                                                       boson.stderr))
    flags_ok &= bool(forced.flagged[peak]) and int(forced.flagged.sum()) == \
        int(np.sum(forced.g2 < 0))
    ok = (fb.converged and ff.converged and tau_err <= 0.05 and dnu_err <= 0.05 and flags_ok
          and elapsed < 120)
    return ok, (f"boson tau_c = {fb.tau_c * 1e9:.2f} ns ({100 * tau_err:.2f}% from 296 ns); "
                f"fermion tau_c = {ff.tau_c * 1e9:.2f} ns, dnu within {100 * dnu_err:.2f}% of boson; "
                f"{int(fermion.flagged.sum())} sub-zero bins flagged (forced case ok: "
                f"{flags_ok}); {elapsed:.1f} s (limit 120 s)")


def criterion_6():
    x = np.linspace(-3e-3, 3e-3, 41)
    rng = np.random.default_rng(SEED)
    noiseless, within = [], []
    for l in (0.55e-3, 0.64e-3):
        model = an.AnalyticModel("fermion", GeometrySpec("hbt", Z), SourceSpec(l, LAM))
        clean = model.curve(x)
        res = es.fit(clean, es.default_spec("hbt_spatial", "fermion"))
        noiseless.append(abs(res.params["l"] / l - 1))
        noisy = CoherenceCurve(AxisKind.POSITION, x, clean.g2 + rng.normal(0, 0.02, x.size),
                               0.02)
        res = es.fit(noisy, es.default_spec("hbt_spatial", "fermion"))
        within.append(res.converged and abs(res.params["l"] - l) <= 3 * res.stderr["l"])
    grid = np.linspace(-3e-3, 3e-3, 2001)
    fermion = an.visibility(an.AnalyticModel("fermion", GeometrySpec("hbt", Z),
                                             SourceSpec(0.55e-3, LAM))(grid))
    # the far level 1 of the boson curve is reached at the first sinc^2 zero
    boson = an.visibility(an.AnalyticModel("boson", GeometrySpec("hbt", Z),
                                           SourceSpec(0.55e-3, LAM))(
        np.union1d(grid, [LAM * Z / 0.55e-3])))
    ortho_model = an.AnalyticModel("fermion", GeometrySpec("hom", Z, 5e-3),
                                   SourceSpec(0.59e-3, LAM), Polarization.ORTHOGONAL)
    ortho = an.visibility(np.append(ortho_model(np.linspace(-30e-3, 30e-3, 600_001)),
                                    ortho_model(0.0)))
    vis_ok = (abs(fermion - 1) <= 1e-12 and abs(boson - 1 / 3) <= 1e-12
              and abs(ortho - 1 / 3) <= 1e-12)
    ok = max(noiseless) <= 1e-6 and all(within) and vis_ok
    return ok, (f"noiseless l rel error {max(noiseless):.1e} (tol 1e-6); noisy within 3 sigma: "
                f"{within}; visibilities fermion {fermion:.12f}, boson {boson:.12f}, "
                f"orthogonal HOM {ortho:.12f}; measured 52.14%/60.13% not reproducible "
                "from printed parameters")


def criterion_7(tmp_path):
    code = cli.main(["reproduce", "fig6", "--out", str(tmp_path)])
    report = (tmp_path / "fig6" / "report.txt").read_text()
    line = next(s for s in report.splitlines() if "d = 5 mm minimum" in s)
    model = an.AnalyticModel("fermion", GeometrySpec("hom", Z, 5e-3), SourceSpec(0.59e-3, LAM),
                             Polarization.PARALLEL)
    brute = float(np.min(model(np.linspace(-3e-3, 3e-3, 600_001))))
    _, g_min = an.curve_extremum(model, (-3e-3, 3e-3))
    stated = "stated value 0.25" in line
    verdict = "DISCREPANCY" in report or "agreement with the stated value" in report
    honest = ("DISCREPANCY" in report) == (abs(g_min - 0.25) > 0.01)
    ok = code == 0 and f"{g_min:.6f}" in line and stated and verdict and honest \
        and abs(g_min - brute) <= 1e-9
    return ok, (f"computed minimum {g_min:.6f} (dense grid {brute:.6f}) vs stated 0.25; "
                f"report states {'discrepancy' if 'DISCREPANCY' in report else 'agreement'}")


JAC_CASES = {
    "hbt_temporal": np.linspace(-1.5e-6, 1.5e-6, 21),
    "hbt_spatial": np.linspace(-3e-3, 3e-3, 21),
    "hom_orthogonal": np.linspace(-3e-3, 3e-3, 21),
    "hom_parallel": np.linspace(-3e-3, 3e-3, 21),
}
TRUTH = {
    "hbt_temporal": (dict(dnu=1 / 296e-9, beta=0.9, background=1.0),
                     np.linspace(-1.5e-6, 1.5e-6, 201)),
    "hbt_spatial": (dict(l=0.55e-3, beta=0.9, background=1.0), np.linspace(-3e-3, 3e-3, 201)),
    "hom_orthogonal": (dict(l=0.59e-3, beta=0.9, background=1.0),
                       np.linspace(-3e-3, 3e-3, 201)),
    "hom_parallel": (dict(l=0.59e-3, d=2e-3, beta=0.9, background=1.0),
                     np.linspace(-3e-3, 3e-3, 301)),
}


def criterion_8():
    rng = np.random.default_rng(SEED)
    worst_jac, jac_ok = 0.0, True
    for model_id, probes in JAC_CASES.items():
        spec = es.default_spec(model_id, "fermion")
        for _ in range(20):
            p = {"beta": rng.uniform(0.1, 1.0), "background": rng.uniform(0.5, 2.0)}
            if model_id == "hbt_temporal":
                p["dnu"] = rng.uniform(1e5, 1e8)
            else:
                p["l"] = rng.uniform(1e-4, 2e-3)
            if model_id == "hom_parallel":
                p["d"] = rng.uniform(1e-4, 1e-2)
            rep = es.jacobian_check(spec, p, probes)
            jac_ok &= rep.passed
            worst_jac = max(worst_jac, rep.max_rel_error)
    worst_fit, fit_ok = 0.0, True
    for model_id, (truth, x) in TRUTH.items():
        for stat in ("boson", "fermion"):
            y = es.evaluate_model(model_id, stat, {**truth, "wavelength": LAM, "z": Z}, x)
            axis = AxisKind.TIME if model_id == "hbt_temporal" else AxisKind.POSITION
            curve = CoherenceCurve(axis, x, y, 0.0)
            for scale in (0.7, 1.3, None):
                init = None if scale is None else {
                    k: min(v * scale, es.DEFAULT_BOUNDS[k][1]) for k, v in truth.items()}
                res = es.fit(curve, es.default_spec(model_id, stat, initial=init))
                err = max(abs(res.params[k] / v - 1) for k, v in truth.items())
                fit_ok &= res.converged
                worst_fit = max(worst_fit, err)
    ok = jac_ok and fit_ok and worst_fit <= 1e-6
    return ok, (f"jacobian max rel error {worst_jac:.1e} (tol 1e-5) at 4 x 20 points; "
                f"round-trip max rel error {worst_fit:.1e} (tol 1e-6)")


def _snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def criterion_9(tmp_path):
    runs = {
        "analytic": (["analytic", "--statistics", "all", "--geometry", "hom", "--d", "2mm"],
                     "analytic_boson.json"),
        "mc": (["mc", "--statistics", "all", "--n-realizations", "2000",
                "--synth-fermion", "1"], "mc_fermion_synth.json"),
        "events": (["events", "--duration", "1", "--synth-fermion", "1"],
                   "events_fermion.json"),
    }
    failures, count = [], 0
    for name, (argv, sidecar) in runs.items():
        first, again = tmp_path / name / "first", tmp_path / name / "again"
        assert cli.main(argv + ["--out", str(first)]) == 0
        assert cli.main(["rerun", str(first / sidecar), "--out", str(again)]) == 0
        a, b = _snapshot(first), _snapshot(again)
        count += len(b)
        if not b or any(a.get(k) != v for k, v in b.items()):
            failures.append(name)
    # fit reruns from its report
    first, again = tmp_path / "fit" / "first", tmp_path / "fit" / "again"
    curve = tmp_path / "events" / "first" / "events_boson.csv"
    assert cli.main(["fit", "--input", str(curve), "--model", "hbt_temporal",
                     "--out", str(first)]) == 0
    assert cli.main(["rerun", str(first / "events_boson_fit.json"), "--out", str(again)]) == 0
    a, b = _snapshot(first), _snapshot(again)
    count += len(b)
    if a != b:
        failures.append("fit")
    meta = json.loads((first / "events_boson_fit.json").read_text())
    ok = not failures and "timing" not in meta
    return ok, (f"{count} files re-created byte-identically from metadata for analytic, mc, "
                "events, fit" if ok else f"mismatch in {failures}")


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}
NEEDS_DIR = {7, 9}


# ---------------------------------------------------------------------------
# pytest entry points


@pytest.mark.slow
@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, tmp_path):
    args = (tmp_path,) if n in NEEDS_DIR else ()
    passed, detail = CRITERIA[n](*args)
    assert record(n, passed, detail), RESULTS[n]


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    failed = 0
    for n, func in CRITERIA.items():
        with tempfile.TemporaryDirectory() as tmp:
            args = (Path(tmp),) if n in NEEDS_DIR else ()
            passed, detail = func(*args)
        record(n, passed, detail)
        failed += not passed
        print(RESULTS[n], flush=True)
    sys.exit(1 if failed else 0)
