"""Acceptance gate: package-level performance and exactness criteria.

One test per criterion.  Each prints a single PASS/FAIL line with the
measured values, then asserts, so the verdict is visible in captured
output and in the verbose test listing.

Criteria 1-3 share one run of the desk-scale prediction study (two
simulated datasets, four proposal variances, a hundred scoring
replicates each).  The remaining criteria are self-contained.
"""

from __future__ import annotations

import math
import time
from dataclasses import replace as dreplace

import numpy as np
import pytest

import oracles
from test_baselines import random_planar, uniform_grid_dataset
from test_design import brute_force_design, random_planar_dataset
from test_diagnostics import fake_trace
from test_initialize import on_grid_truth, piecewise_outcome, planar_dataset
from test_sampler import batch_mcse, make_break_data

from flowbreaks.baselines import radiation_flux_matrix, rank_of, ring_population
from flowbreaks.design import InclusionState, boundary_mask, build_design
from flowbreaks.diagnostics import psrf, psrf_series, variance_decomposition
from flowbreaks.initialize import initial_values
from flowbreaks.sampler import SamplerConfig, lasso_gibbs_block, run_chains
from flowbreaks.simharness import SimScenario, bench_scaling, generate, run_study


def check(criterion, ok, detail):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} — {detail}", flush=True)
    assert ok, f"criterion {criterion}: {detail}"


# --------------------------------------------------------- shared study run


STUDY_SCENARIO = SimScenario(
    n_locations=20,
    sigma2=0.38,
    break_fraction=1.0,
    datasets=2,
    replicates=100,
    sweep=(0.03, 0.1, 0.2, 0.4),
    seed=11,
)
STUDY_CONFIG = SamplerConfig(outer_iterations=5000, burn_in=1000, chains=4, seed=0)
REFERENCE_PROPOSAL = 0.2


@pytest.fixture(scope="module")
def study():
    start = time.perf_counter()
    report = run_study(STUDY_SCENARIO, STUDY_CONFIG, case="I")
    return report, time.perf_counter() - start


def test_criterion_01_out_of_sample_error(study):
    report, elapsed = study
    sampler_mse = report.lasso_mse(REFERENCE_PROPOSAL)
    gravity = report.gravity_mean_mse()
    crude = report.crude_mean_mse()
    noise = STUDY_SCENARIO.sigma2
    ok = (
        noise <= sampler_mse <= 1.3 * noise
        and gravity >= 1.5 * sampler_mse
        and abs(crude - sampler_mse) <= 0.10 * sampler_mse
        and elapsed <= 30 * 60
    )
    check(
        "1",
        ok,
        f"sampler mse {sampler_mse:.4f} in [{noise:.3f}, {1.3 * noise:.3f}]; "
        f"gravity/sampler {gravity / sampler_mse:.1f}x (need >=1.5x); "
        f"crude-vs-sampler gap {abs(crude - sampler_mse) / sampler_mse:.2%} (need <=10%); "
        f"study runtime {elapsed:.0f}s (limit 1800s)",
    )


def test_criterion_02_acceptance_rate_window(study):
    report, _ = study
    rates = [report.acceptance(v) for v in STUDY_SCENARIO.sweep]
    at_ref = report.acceptance(REFERENCE_PROPOSAL)
    decreasing = all(a > b for a, b in zip(rates, rates[1:]))
    ok = 0.12 <= at_ref <= 0.35 and decreasing
    shown = {v: round(r, 4) for v, r in zip(STUDY_SCENARIO.sweep, rates)}
    check(
        "2",
        ok,
        f"acceptance by proposal variance {shown}; at {REFERENCE_PROPOSAL}: "
        f"{at_ref:.4f} (need in [0.12, 0.35]); strictly decreasing: {decreasing}",
    )


def test_criterion_03_break_point_coverage(study):
    report, _ = study
    coverage = report.coverage(REFERENCE_PROPOSAL)
    events = sum(
        c.coverage_events for c in report.cells if c.sigma2_theta == REFERENCE_PROPOSAL
    )
    ok = coverage >= 0.60 and events >= 2 * STUDY_SCENARIO.n_locations
    check(
        "3",
        ok,
        f"interval coverage {coverage:.3f} over {events} true break-points "
        f"across {STUDY_SCENARIO.datasets} datasets (need >=0.60)",
    )


# ------------------------------------------------------- conjugate limits


def test_criterion_04_flat_prior_and_quadrature_limits():
    # With break-points frozen at truth, inclusion fixed, and the shrinkage
    # weight driven to zero, coefficient posteriors are the conjugate
    # flat-prior ones centered on least squares.
    rng = np.random.default_rng(210)
    data, truth = make_break_data(rng, S=12, sigma=0.4)
    theta_true = np.asarray(truth["theta"], dtype=float)
    init = dreplace(initial_values(data, "I"), theta=theta_true)
    cfg = SamplerConfig(
        outer_iterations=4000,
        burn_in=500,
        chains=1,
        seed=11,
        freeze_theta=True,
        lambda2_fixed=0.0,
    )
    (trace,) = run_chains(data, "I", cfg, init=init)
    incl = InclusionState(
        eta=np.ones(12, dtype=bool), boundary=boundary_mask(data, theta_true)
    )
    X = build_design(data, theta_true, incl, "I").matrix
    want = oracles.ols_lstsq(np.column_stack([np.ones(X.shape[0]), X]), data.outcome)
    worst = abs(trace.mu.mean() - want[0]) / (3 * batch_mcse(trace.mu) + 1e-9)
    for c in range(X.shape[1]):
        err = abs(trace.beta[:, c].mean() - want[c + 1])
        tol = 3 * batch_mcse(trace.beta[:, c]) + 1e-9
        worst = max(worst, err / tol)

    # Single-covariate run against the exact posterior from quadrature.
    rng = np.random.default_rng(58)
    x = rng.normal(1.0, 0.8, size=25)
    y = 1.2 * x + math.sqrt(0.5) * rng.normal(size=25)
    block = lasso_gibbs_block(
        X=x[:, None],
        y=y,
        sweeps=11_000,
        rng=np.random.default_rng(59),
        mu=0.0,
        sigma2=0.5,
        lambda2=4.0,
        update_mu=False,
        update_sigma2=False,
        update_lambda2=False,
    )
    draws = block["beta"][1000:, 0]
    grid = np.linspace(draws.min() - 1.0, draws.max() + 1.0, 4001)
    cdf = oracles.lasso_p1_posterior_cdf(x, y, 0.5, math.sqrt(4.0), grid)
    ks = oracles.ks_distance(draws, grid, cdf)

    ok = worst < 1.0 and draws.shape[0] == 10_000 and ks < 0.05
    check(
        "4",
        ok,
        f"worst |posterior mean - OLS| / (3 MCSE) = {worst:.3f} (need <1); "
        f"KS vs quadrature {ks:.4f} on {draws.shape[0]} draws (need <0.05)",
    )


# ------------------------------------------------- exact structural checks


def test_criterion_05_design_and_boundary_brute_force():
    rng = np.random.default_rng(220)
    design_exact = 0
    for k in range(50):
        case = "I" if k % 2 == 0 else "II"
        S = int(rng.integers(3, 7))
        data = random_planar_dataset(rng, S)
        lo, hi = np.nanmin(data.log_distance), np.nanmax(data.log_distance)
        theta = rng.uniform(lo, hi, size=S)
        incl = InclusionState(eta=rng.random(S) < 0.6, boundary=rng.random(S) < 0.25)
        built = build_design(data, theta, incl, case)
        want, names = brute_force_design(data, theta, incl, case)
        design_exact += int(
            list(built.column_map) == names and np.array_equal(built.matrix, want)
        )

    agree = total = 0
    while total < 1000:
        S = int(rng.integers(3, 9))
        data = random_planar_dataset(rng, S)
        d_all = data.pair_log_distance
        for _ in range(3):
            theta = np.empty(S)
            for i in range(S):
                d = d_all[data.source_rows(i)]
                if rng.random() < 0.3:
                    theta[i] = rng.choice(d)  # exercise exact ties
                else:
                    theta[i] = rng.uniform(d.min() - 0.5, d.max() + 0.5)
            got = boundary_mask(data, theta)
            for i in range(S):
                want = oracles.boundary_brute(d_all[data.source_rows(i)], theta[i])
                agree += int(bool(got[i]) == want)
                total += 1
    ok = design_exact == 50 and agree == total
    check(
        "5",
        ok,
        f"design matrices exact on {design_exact}/50 random instances; "
        f"boundary rule agreed on {agree}/{total} threshold draws",
    )


def test_criterion_06_psrf_components_and_calibration():
    s1 = np.array([1.0, 3.0, 2.0, 5.0])
    s2 = np.array([2.0, 4.0, 1.0, 6.0])
    l1 = np.array([0, 1, 0, 1])
    l2 = np.array([0, 0, 1, 1])
    dec = variance_decomposition([fake_trace(s1, l1, 0), fake_trace(s2, l2, 1)])
    want = oracles.variance_components_brute([s1, s2], [l1, l2])
    toy_err = max(
        abs(dec.total - want["total"]),
        abs(dec.within_chain - want["within_chain"]),
        abs(dec.within_model - want["within_model"]),
        abs(dec.within_model_chain - want["within_model_chain"]),
    )

    rng = np.random.default_rng(230)
    iid = [
        fake_trace(rng.normal(size=2000), np.zeros(2000, dtype=int), c)
        for c in range(4)
    ]
    p1_iid, _ = psrf(variance_decomposition(iid))

    series = [rng.normal(size=40) for _ in range(3)]
    labels = [rng.integers(0, 2, size=40) for _ in range(3)]
    base = [fake_trace(s, l, c) for c, (s, l) in enumerate(zip(series, labels))]
    moved = [
        fake_trace(-3.0 * s + 7.0, l, c)
        for c, (s, l) in enumerate(zip(series, labels))
    ]
    pb = psrf(variance_decomposition(base))
    pm = psrf(variance_decomposition(moved))
    affine_err = max(abs(pb[0] - pm[0]), abs(pb[1] - pm[1]))

    ok = toy_err < 1e-12 and 0.9 <= p1_iid <= 1.1 and affine_err < 1e-9
    check(
        "6",
        ok,
        f"two-chain toy component error {toy_err:.1e} (need <1e-12); "
        f"iid-normal psrf1 {p1_iid:.4f} (need in [0.9, 1.1]); "
        f"affine-map psrf drift {affine_err:.1e} (need <1e-9)",
    )


def test_criterion_07_initializer_exact_recovery():
    rng = np.random.default_rng(40)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    has_break = rng.random(S) < 0.5
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = np.where(has_break, rng.uniform(2.5, 4.0, size=S), 0.0)
    data.outcome = piecewise_outcome(data, theta, 3.0, (0.7, 0.7), slopes, effects)
    init = initial_values(data, "II")
    eta_ok = np.array_equal(init.eta, has_break)
    theta_ok = np.array_equal(init.theta[has_break], theta[has_break])
    check(
        "7",
        eta_ok and theta_ok,
        f"inclusion pattern recovered exactly: {eta_ok}; on-grid break-points "
        f"recovered exactly: {theta_ok} ({int(has_break.sum())}/{S} break sources)",
    )


def test_criterion_08_competing_model_references():
    rng = np.random.default_rng(240)
    ring_exact = rank_agree = rank_total = 0
    for _ in range(100):
        S = int(rng.integers(3, 13))
        data, dist = random_planar(rng, S)
        got = ring_population(data)
        want = oracles.ring_population_brute(dist, np.exp(data.log_population))
        ring_exact += int(np.array_equal(got, want, equal_nan=True))
        for u in range(S):
            for v in range(S):
                if u != v:
                    rank_total += 1
                    rank_agree += int(rank_of(data, u, v) == oracles.rank_brute(dist, u, v))

    side = 12
    gdata, _ = uniform_grid_dataset(side)
    S = gdata.n_locations
    flux = radiation_flux_matrix(gdata, np.full(S, 100.0))
    interior = [
        a * side + b
        for a in range(side // 3, 2 * side // 3 + 1)
        for b in range(side // 3, 2 * side // 3 + 1)
    ]
    mask = np.zeros((S, S), dtype=bool)
    mask[np.ix_(interior, range(S))] = True
    mask &= ~np.eye(S, dtype=bool)
    slope = float(np.polyfit(gdata.log_distance[mask], np.log(flux[mask]), 1)[0])

    ok = ring_exact == 100 and rank_agree == rank_total and -4.5 <= slope <= -3.5
    check(
        "8",
        ok,
        f"ring populations exact on {ring_exact}/100 instances; ranks agreed on "
        f"{rank_agree}/{rank_total} pairs; uniform-grid decay slope {slope:.3f} "
        f"(need in [-4.5, -3.5])",
    )


# ------------------------------------------------------------- performance


def test_criterion_09_bench_scaling_slope():
    report = bench_scaling([10, 20, 40, 80])
    ok = 3.0 <= report.slope <= 4.6
    times = ", ".join(f"{t:.2e}" for t in report.seconds_per_iteration)
    pairwise = ", ".join(f"{v:.2f}" for v in report.pairwise_slopes)
    check(
        "9",
        ok,
        f"least-squares log-log slope {report.slope:.3f} over S=(10,20,40,80) "
        f"(need in [3.0, 4.6]); pairwise slopes [{pairwise}]; "
        f"seconds/iteration [{times}]",
    )


def test_criterion_10_grouped_model_psrf_convergence():
    scenario = SimScenario(n_locations=20, break_fraction=1.0, seed=11)
    data, _ = generate(
        scenario, np.random.default_rng(np.random.SeedSequence([11, 0]))
    )
    cfg = SamplerConfig(outer_iterations=15000, burn_in=5000, chains=4, seed=7)
    traces = run_chains(data, "II", cfg)
    _, p1, p2 = psrf_series(traces)
    ok = abs(float(p2[-1]) - 1.0) <= 0.05 and float(np.max(p1)) < 1.5
    check(
        "10",
        ok,
        f"final model-aware psrf2 {p2[-1]:.4f} (need within 0.05 of 1); "
        f"max psrf1 {np.max(p1):.4f} across batches (need <1.5)",
    )
