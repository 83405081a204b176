"""Acceptance suite: the ten release criteria, one test each.

Each test records a PASS/FAIL line (printed in the terminal summary)
with its key numbers and wall time.  Scales and tolerances are the
release contract; do not shrink them to make a slow machine happy.
"""

import csv
import functools
import math
import time

import numpy as np
import pytest
from conftest import random_pd_spec

from ica_sens.copulas import PARAMETRIC_FAMILIES
from ica_sens.data import (
    complete_moments,
    estimate_identifiable_moments,
    load_dataset,
    synthetic_trial,
)
from ica_sens.experiments import (
    LogNormalStudyConfig,
    cmd_lognormal_study,
    cmd_rerun,
    cmd_sensitivity,
    cmd_t_curves,
    cmd_vine_grid,
    cmd_zeta_curve,
)
from ica_sens.ica import (
    ica_from_mi,
    ica_t,
    knn_mutual_information,
    rho_delta,
    zeta,
)
from ica_sens.rng import RngSeed
from ica_sens.samplers import mvn_sample, mvt_sample
from ica_sens.sensitivity import SensitivityConfig, ThetaScheme, sample_theta_u
from ica_sens.stats import energy_two_sample
from ica_sens.vine import (
    FREE_SLOTS,
    build_vine,
    dvine_sample,
    grid_compare,
    sample_rho_assignment,
    slot_feasible,
    to_canonical,
)
from ica_sens.experiments import vine_grid_summary

RESULTS = {}

ROOT = RngSeed(20240817, 0)


def criterion(num, title):
    """Record a PASS/FAIL summary line around one acceptance test."""

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                detail = fn(*args, **kwargs) or ""
            except BaseException as e:
                first = str(e).splitlines()[0][:140] if str(e) else e.__class__.__name__
                RESULTS[num] = ("FAIL", f"{title}: {first}")
                raise
            RESULTS[num] = ("PASS", f"{title}: {detail} [{time.perf_counter() - t0:.1f}s]")

        return wrapper

    return deco


def zeta_oracle(nu: float) -> float:
    """High-precision recomputation of the tail-weight correction."""
    import mpmath as mp

    with mp.workdps(50):
        half = mp.mpf(nu) / 2
        val = (
            2 * (mp.loggamma(half) - mp.loggamma(half + mp.mpf(1) / 2) + mp.log(half) / 2)
            + (1 + mp.mpf(nu)) * (mp.digamma(half + mp.mpf(1) / 2) - mp.digamma(half))
            - (2 + mp.mpf(nu)) / mp.mpf(nu)
        )
        return float(val)


def write_trial_csv(path, rng):
    """Synthetic two-arm trial with vision-study-like moments."""
    ds = synthetic_trial(
        101, 89, (-11.2, -4.4), (-8.3, -2.9),
        (math.sqrt(216.0), math.sqrt(252.5)), (math.sqrt(132.5), math.sqrt(160.8)),
        0.73, 0.71, rng,
    )
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "treat", "diff24", "diff52"])
        for i in range(len(ds.treat)):
            w.writerow(
                [i + 1, int(ds.treat[i]), repr(float(ds.surrogate[i])), repr(float(ds.true_outcome[i]))]
            )
    return path


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        f.readline()  # version/seed/config comment
        return list(csv.DictReader(f))


# --------------------------------------------------------------------------


@criterion(1, "tail-weight correction")
def test_c01_tail_correction():
    t0 = time.perf_counter()
    z3 = zeta(3.0)
    assert abs(z3 - 0.04238) <= 1e-4, f"zeta(3) = {z3}"
    assert abs(z3 - zeta_oracle(3.0)) <= 1e-12
    grid = np.arange(3, 101, dtype=float)
    values = zeta(grid)
    assert (np.diff(values) < 0).all(), "not strictly decreasing on 3..100"
    z_big = zeta(1e6)
    assert z_big < 1e-5, f"zeta(1e6) = {z_big}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"took {elapsed:.2f}s (budget 1s)"
    return f"zeta(3)={z3:.6f}, decreasing on 3..100, zeta(1e6)={z_big:.2e}"


@criterion(2, "t-pair agreement curves")
def test_c02_t_curves(tmp_path):
    t0 = time.perf_counter()
    nu_list = [3.0, 4.0, 5.0, 7.0, 1e9]
    rho_sq = list(np.linspace(0.0, 1.0, 101))
    res = cmd_t_curves(nu_list, rho_sq, tmp_path / "t", ROOT, figures=False)
    rows = read_rows(res.files["t_curves.csv"])
    by_nu = {}
    for r in rows:
        by_nu.setdefault(float(r["nu"]), []).append((float(r["ica_t"]), float(r["ica_n"])))
    for nu in (3.0, 4.0, 5.0, 7.0):
        curve = by_nu[nu]
        assert len(curve) == 101
        assert all(t >= n for t, n in curve), f"ica_t < ica_n at nu={nu}"
        gap0 = curve[0][0] - curve[0][1]
        expected = 1.0 - math.exp(-2.0 * zeta_oracle(nu))
        assert abs(gap0 - expected) <= 1e-12, f"gap at zero: {gap0} vs {expected}"
    gap3 = by_nu[3.0][0][0] - by_nu[3.0][0][1]
    assert abs(gap3 - 0.0813) <= 1e-4, f"nu=3 zero-correlation gap {gap3}"
    assert all(t - n < 0.02 for t, n in by_nu[7.0]), "nu=7 gap reached 0.02"
    assert all(abs(t - n) <= 1e-6 for t, n in by_nu[1e9]), "nu=1e9 not at identity"
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"took {elapsed:.2f}s (budget 1s)"
    return f"gap(nu=3, rho=0)={gap3:.4f}, max gap(nu=7)={max(t - n for t, n in by_nu[7.0]):.4f}"


def _pipeline_agreement(sampler, closed_form):
    hits = []
    g = ROOT.generator(31)
    for i in range(50):
        spec, _, _ = random_pd_spec(g)
        y = sampler(spec, ROOT.generator(32, i))
        dt = y[:, 1] - y[:, 0]
        ds = y[:, 3] - y[:, 2]
        mi = knn_mutual_information(dt, ds, k=10, rng=ROOT.generator(33, i))
        hits.append(abs(ica_from_mi(mi) - closed_form(spec)) <= 0.05)
    return sum(hits)


@criterion(3, "normal pipeline vs closed form")
def test_c03_normal_pipeline():
    t0 = time.perf_counter()
    good = _pipeline_agreement(
        lambda spec, g: mvn_sample(spec.mu, spec.sigma, 2000, g),
        lambda spec: rho_delta(spec) ** 2,
    )
    elapsed = time.perf_counter() - t0
    assert good >= 47, f"only {good}/50 within 0.05"
    assert elapsed < 120.0, f"took {elapsed:.1f}s (budget 2min)"
    return f"{good}/50 within 0.05"


@criterion(4, "t pipeline vs closed form")
def test_c04_t_pipeline():
    t0 = time.perf_counter()
    good = _pipeline_agreement(
        lambda spec, g: mvt_sample(spec.mu, spec.sigma, 5.0, 2000, g),
        lambda spec: ica_t(rho_delta(spec), 5.0),
    )
    elapsed = time.perf_counter() - t0
    assert good >= 47, f"only {good}/50 within 0.05"
    assert elapsed < 120.0, f"took {elapsed:.1f}s (budget 2min)"
    return f"{good}/50 within 0.05"


@criterion(5, "neighbor-count information estimator")
def test_c05_mi_estimator_accuracy():
    t0 = time.perf_counter()
    maes = {}
    for rho in (0.0, 0.5, 0.8):
        truth = -0.5 * math.log1p(-rho * rho)
        cov = np.array([[1.0, rho], [rho, 1.0]])
        errs = []
        for s in range(100):
            xy = mvn_sample(np.zeros(2), cov, 2000, ROOT.generator(51, int(rho * 10), s))
            mi = knn_mutual_information(xy[:, 0], xy[:, 1], k=10, rng=ROOT.generator(52, int(rho * 10), s))
            errs.append(abs(mi - truth))
        maes[rho] = float(np.mean(errs))
        assert maes[rho] < 0.07, f"MAE {maes[rho]:.4f} at correlation {rho}"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s (budget 1min)"
    return "MAE " + ", ".join(f"{r}: {m:.4f}" for r, m in maes.items())


@criterion(6, "admissible-completion sampling")
def test_c06_completion_sampling(vision_moments):
    t0 = time.perf_counter()
    scheme = ThetaScheme.unrestricted()
    n_draws = 10_000
    pd_count = 0
    rejections = 0
    for i in range(n_draws):
        theta, rej = sample_theta_u(vision_moments, scheme, ROOT.generator(61, i))
        rejections += rej
        eigs = np.linalg.eigvalsh(complete_moments(vision_moments, theta).sigma)
        pd_count += bool(eigs.min() > 0.0)
    rate = n_draws / (n_draws + rejections)
    elapsed = time.perf_counter() - t0
    assert pd_count == n_draws, f"only {pd_count}/{n_draws} draws were PD"
    assert elapsed < 30.0, f"took {elapsed:.1f}s (budget 30s)"
    return f"{pd_count}/{n_draws} PD by eigenvalue check; acceptance rate {rate:.3f}"


@criterion(7, "skewed-outcome study")
def test_c07_lognormal_study(tmp_path):
    t0 = time.perf_counter()
    res = cmd_lognormal_study(
        LogNormalStudyConfig(), tmp_path / "full", ROOT.substream(71), figures=False
    )
    _, d = res.data
    assert np.isfinite(d).all(), "a setting produced no estimate"
    assert (d >= -1.0).all() and (d <= 1.0).all(), "difference left [-1, 1]"
    assert d.mean() > 0.0, f"mean difference {d.mean():.4f} not positive"
    assert d.max() > 0.3, f"largest difference {d.max():.4f} <= 0.3"
    # shrinking log-scale sds 20x scales the prior variance by 400
    res_small = cmd_lognormal_study(
        LogNormalStudyConfig(wishart_scale=LogNormalStudyConfig().wishart_scale / 400.0),
        tmp_path / "tiny", ROOT.substream(72), figures=False,
    )
    _, d_small = res_small.data
    assert np.abs(d_small).max() < 0.05, f"max |d| {np.abs(d_small).max():.4f} at tiny skew"
    elapsed = time.perf_counter() - t0
    assert elapsed < 600.0, f"took {elapsed:.1f}s (budget 10min)"
    return (
        f"mean d={d.mean():.3f}, max d={d.max():.3f}, "
        f"near-normal max |d|={np.abs(d_small).max():.4f}"
    )


@criterion(8, "copula cells match the normal model in-arm")
def test_c08_indistinguishable_margins(vision_moments):
    t0 = time.perf_counter()
    g = ROOT.generator(81)
    rejected = 0
    tests = 0
    combos = 0
    while combos < 20:
        rho = sample_rho_assignment("unrestricted", g)
        families = tuple(str(g.choice(PARAMETRIC_FAMILIES)) for _ in FREE_SLOTS)
        if not all(slot_feasible(f, r) for f, r in zip(families, rho.values)):
            continue
        if all(f == "gaussian" for f in families):
            continue  # the twin itself; self-comparison tests nothing
        spec = build_vine(vision_moments, families, rho)
        twin = build_vine(vision_moments, ("gaussian",) * 4, rho)
        y = to_canonical(dvine_sample(spec, 10_000, ROOT.generator(82, combos)))
        y_twin = to_canonical(dvine_sample(twin, 10_000, ROOT.generator(83, combos)))
        for cols in ((2, 0), (3, 1)):  # (S0, T0) and (S1, T1) pairs
            _, p = energy_two_sample(
                y[:, cols], y_twin[:, cols], ROOT.generator(84, combos, cols[0])
            )
            tests += 1
            rejected += int(p <= 0.05)
        combos += 1
    elapsed = time.perf_counter() - t0
    # Bin(40, 0.05): P(X >= 7) ~ 0.4%, so 7+ rejections signal a real gap
    assert rejected <= 6, f"{rejected}/{tests} rejections at the 5% level"
    assert elapsed < 300.0, f"took {elapsed:.1f}s (budget 5min)"
    return f"{rejected}/{tests} rejections at nominal 5%"


@criterion(9, "copula-grid study at full scale")
def test_c09_grid_study(tmp_path):
    t0 = time.perf_counter()
    # Draw regenerated until the estimated treatment-surrogate correlations land
    # near the configured 0.73/0.71 (this stream gives 0.733/0.710); a wide miss
    # would change which dependence regimes the grid explores.
    trial = write_trial_csv(tmp_path / "trial.csv", ROOT.generator(91, 17))
    im = estimate_identifiable_moments(load_dataset(trial))

    ci = grid_compare(im, "conditional_independence", 200, 2000, RngSeed(20240817, 92))
    pos = grid_compare(im, "positive_restricted", 200, 2000, RngSeed(20240817, 93))
    unr = grid_compare(im, "unrestricted", 200, 2000, RngSeed(20240817, 94))

    ci_summary = vine_grid_summary(ci)
    medians = [
        b["median_abs_diff"] for b in vine_grid_summary(pos)["deciles"] if b["n"] > 0
    ]
    drops = all(b <= a + 1e-12 for a, b in zip(medians, medians[1:]))
    unr_max = max(abs(r.diff) for r in unr.rows if r.feasible and math.isfinite(r.ica_c))
    ci_max = max(abs(r.diff) for r in ci.rows if r.feasible and math.isfinite(r.ica_c))

    # All three claims are evaluated before asserting so a failure still
    # reports the full picture.
    failures = []
    if not ci_summary["p95_abs_diff"] < 0.1:
        failures.append(
            f"conditional-independence 95th pct {ci_summary['p95_abs_diff']:.4f} >= 0.1"
        )
    if not drops:
        failures.append(
            f"positive binned medians not non-increasing: {[round(m, 4) for m in medians]}"
        )
    if not unr_max >= 2.0 * ci_max:
        failures.append(
            f"unrestricted max {unr_max:.4f} < 2x conditional-independence max {ci_max:.4f}"
        )
    elapsed = time.perf_counter() - t0
    if not elapsed < 1800.0:
        failures.append(f"took {elapsed:.1f}s (budget 30min)")
    assert not failures, "; ".join(failures)
    return (
        f"ci p95={ci_summary['p95_abs_diff']:.4f}, "
        f"positive medians {[round(m, 3) for m in medians]}, "
        f"max ratio {unr_max / ci_max:.1f}x"
    )


@criterion(10, "manifest reruns are byte-identical")
def test_c10_determinism(tmp_path):
    t0 = time.perf_counter()
    trial = write_trial_csv(tmp_path / "trial.csv", ROOT.generator(101))
    runs = {
        "zeta-curve": lambda out: cmd_zeta_curve([3.0, 5.0, 9.0], out, ROOT.substream(102)),
        "t-curves": lambda out: cmd_t_curves(
            [3.0], [0.0, 0.5, 1.0], out, ROOT.substream(103), figures=False
        ),
        "lognormal-study": lambda out: cmd_lognormal_study(
            LogNormalStudyConfig(n_settings=3, m_outcomes=300, k_neighbors=5),
            out, ROOT.substream(104), figures=False,
        ),
        "sensitivity": lambda out: cmd_sensitivity(
            trial,
            SensitivityConfig(n_replicates=6, m_outcomes=300, k_neighbors=5, analytic=False),
            out, ROOT.substream(105), figures=False,
        ),
        "vine-grid": lambda out: cmd_vine_grid(
            trial, "conditional_independence", 1, 256, out, ROOT.substream(106),
            k_neighbors=5, figures=False,
        ),
    }
    for name, run in runs.items():
        first = run(tmp_path / name / "a")
        redo = cmd_rerun(first.files["manifest.json"], tmp_path / name / "b", threads=2)
        assert redo.manifest.outputs == first.manifest.outputs, f"{name} digests drifted"
        for out_name in first.manifest.outputs:
            a = (tmp_path / name / "a" / out_name).read_bytes()
            b = (tmp_path / name / "b" / out_name).read_bytes()
            assert a == b, f"{name}/{out_name} differs between runs"
    elapsed = time.perf_counter() - t0
    return f"{len(runs)}/{len(runs)} commands byte-identical under rerun with threads=2"
