"""Grid-search break-point initialization and BIC screening."""

from __future__ import annotations

import numpy as np
import pytest

import oracles
from flowbreaks.design import InclusionState, build_design, hinge
from flowbreaks.flowdata import FlowRecord, Location, build_dataset
from flowbreaks.initialize import (
    bic_inclusion,
    fit_crude_bic,
    grid_search_theta,
    initial_values,
    theta_grid,
)

S_DEFAULT = 12  # sources need >= 10 destinations for the grid search


def planar_dataset(rng, S=S_DEFAULT):
    coords = rng.uniform(0.0, 300.0, size=(S, 2))
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    locs = [
        Location(id=f"L{i:02d}", population=int(rng.integers(500, 50_000)))
        for i in range(S)
    ]
    flows = [
        FlowRecord(locs[i].id, locs[j].id, 1)
        for i in range(S) for j in range(S) if i != j
    ]
    data, _ = build_dataset(
        locs, flows, distance_source="explicit_matrix", distance_km=dist
    )
    return data


def source_arrays(data, i):
    rows = data.source_rows(i)
    y = data.outcome[rows]
    d = data.pair_log_distance[rows]
    pop_dst = data.log_population[data.dest_index[rows]]
    return y, d, pop_dst


def on_grid_truth(data, rng, grid_size=50):
    """Break-points chosen exactly on each source's search grid."""
    S = data.n_locations
    theta = np.empty(S)
    for i in range(S):
        _, d, _ = source_arrays(data, i)
        grid = theta_grid(d, grid_size)
        theta[i] = grid[int(rng.integers(10, grid_size - 10))]
    return theta


def piecewise_outcome(data, theta, mu, b_pop, slopes, effects):
    src, dst = data.source_index, data.dest_index
    d = data.pair_log_distance
    y = (
        mu
        + b_pop[0] * data.log_population[src]
        + b_pop[1] * data.log_population[dst]
        + slopes[src] * d
        + effects[src] * hinge(d, theta[src])
    )
    return np.asarray(y)


def test_grid_search_recovers_on_grid_break_exactly():
    rng = np.random.default_rng(31)
    data = planar_dataset(rng)
    theta = on_grid_truth(data, rng)
    S = data.n_locations
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = rng.uniform(2.0, 4.0, size=S)
    data.outcome = piecewise_outcome(
        data, theta, 3.0, (0.7, 0.7), slopes, effects
    )
    for i in range(S):
        got, fallback = grid_search_theta(data, i)
        assert not fallback
        assert got == theta[i]


def test_grid_search_flat_profile_when_no_break():
    rng = np.random.default_rng(32)
    data = planar_dataset(rng)
    S = data.n_locations
    slopes = rng.uniform(-2.5, -0.8, size=S)
    data.outcome = piecewise_outcome(
        data, np.full(S, 99.0), 3.0, (0.7, 0.7), slopes, np.zeros(S)
    )
    for i in range(3):
        theta_hat, _ = grid_search_theta(data, i)
        y, d, pop_dst = source_arrays(data, i)
        rss = oracles.rss_scan(y, d, pop_dst, np.array([theta_hat]))[0]
        X = np.column_stack([np.ones_like(d), pop_dst, d])
        rss_small = float(np.sum((y - X @ oracles.ols_lstsq(X, y)) ** 2))
        assert rss == pytest.approx(rss_small, abs=1e-9)


def test_grid_search_matches_exhaustive_scan_on_noisy_data():
    rng = np.random.default_rng(33)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = rng.uniform(1.0, 3.0, size=S)
    clean = piecewise_outcome(data, theta, 3.0, (0.7, 0.7), slopes, effects)
    data.outcome = clean + rng.normal(0.0, 0.6, size=clean.shape)
    for i in range(S):
        got, _ = grid_search_theta(data, i, grid_size=50)
        y, d, pop_dst = source_arrays(data, i)
        grid = theta_grid(d, 50)
        rss = oracles.rss_scan(y, d, pop_dst, grid)
        assert got == grid[int(np.argmin(rss))]


def test_short_source_falls_back_to_midpoint():
    rng = np.random.default_rng(34)
    data = planar_dataset(rng, S=5)  # only 4 destinations per source
    data.outcome = rng.normal(size=data.n_pairs)
    theta_hat, fallback = grid_search_theta(data, 0)
    assert fallback
    _, d, _ = source_arrays(data, 0)
    assert theta_hat == pytest.approx(0.5 * (d.min() + d.max()))


def test_bic_prefers_break_on_strongly_kinked_data():
    rng = np.random.default_rng(35)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    data.outcome = piecewise_outcome(
        data, theta, 3.0, (0.7, 0.7), np.full(S, -2.0), np.full(S, 3.0)
    )
    for i in range(S):
        assert bic_inclusion(data, i, theta[i]) is True


def test_bic_prefers_no_break_on_exactly_linear_data():
    rng = np.random.default_rng(36)
    data = planar_dataset(rng)
    S = data.n_locations
    data.outcome = piecewise_outcome(
        data, np.full(S, 99.0), 3.0, (0.7, 0.7), np.full(S, -1.5), np.zeros(S)
    )
    for i in range(S):
        theta0, _ = grid_search_theta(data, i)
        assert bic_inclusion(data, i, theta0) is False


def test_bic_matches_independent_computation_on_noisy_data():
    rng = np.random.default_rng(37)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = np.where(rng.random(S) < 0.5, rng.uniform(1.5, 3.0, size=S), 0.0)
    clean = piecewise_outcome(data, theta, 3.0, (0.7, 0.7), slopes, effects)
    data.outcome = clean + rng.normal(0.0, np.sqrt(0.38), size=clean.shape)
    for i in range(S):
        theta0, _ = grid_search_theta(data, i)
        y, d, pop_dst = source_arrays(data, i)
        n = len(y)
        X_small = np.column_stack([np.ones_like(d), pop_dst, d])
        rss_small = float(np.sum((y - X_small @ oracles.ols_lstsq(X_small, y)) ** 2))
        rss_break = oracles.rss_scan(y, d, pop_dst, np.array([theta0]))[0]
        # k counts regression columns including the intercept: 4 vs 3
        want = oracles.bic_scalar(rss_break, n, 4) < oracles.bic_scalar(rss_small, n, 3)
        assert bic_inclusion(data, i, theta0) == want


def test_case_one_initializer_recovers_noiseless_model():
    rng = np.random.default_rng(38)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = rng.uniform(2.0, 4.0, size=S)
    mu, b_pop = 3.0, (0.7, 0.6)
    data.outcome = piecewise_outcome(data, theta, mu, b_pop, slopes, effects)
    init = initial_values(data, "I")
    assert np.array_equal(init.theta, theta)
    assert init.mu == pytest.approx(mu, abs=1e-6)
    cm = list(init.column_map)
    assert init.beta[cm.index("pop_src")] == pytest.approx(b_pop[0], abs=1e-6)
    assert init.beta[cm.index("pop_dst")] == pytest.approx(b_pop[1], abs=1e-6)
    for i in range(S):
        assert init.beta[cm.index(f"slope:{i}")] == pytest.approx(slopes[i], abs=1e-6)
        assert init.beta[cm.index(f"hinge:{i}")] == pytest.approx(effects[i], abs=1e-6)
    assert init.sigma2 == pytest.approx(0.0, abs=1e-12)


def test_case_two_initializer_flags_no_breaks_on_linear_data():
    rng = np.random.default_rng(39)
    data = planar_dataset(rng)
    S = data.n_locations
    data.outcome = piecewise_outcome(
        data, np.full(S, 99.0), 3.0, (0.7, 0.7), np.full(S, -1.5), np.zeros(S)
    )
    init = initial_values(data, "II")
    assert not init.eta.any()
    cm = list(init.column_map)
    hinge_idx = [cm.index(f"hinge:{i}") for i in range(S)]
    assert np.all(init.beta[hinge_idx] == 0.0)


def test_case_two_initializer_recovers_mixed_inclusion_noiseless():
    rng = np.random.default_rng(40)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    has_break = rng.random(S) < 0.5
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = np.where(has_break, rng.uniform(2.5, 4.0, size=S), 0.0)
    data.outcome = piecewise_outcome(data, theta, 3.0, (0.7, 0.7), slopes, effects)
    init = initial_values(data, "II")
    assert np.array_equal(init.eta, has_break)


def test_crude_bic_fit_predicts_training_outcome():
    rng = np.random.default_rng(41)
    data = planar_dataset(rng)
    S = data.n_locations
    theta = on_grid_truth(data, rng)
    slopes = rng.uniform(-2.5, -0.8, size=S)
    effects = rng.uniform(2.0, 4.0, size=S)
    data.outcome = piecewise_outcome(data, theta, 3.0, (0.7, 0.7), slopes, effects)
    fit = fit_crude_bic(data)
    assert fit.fitted.shape == (data.n_pairs,)
    assert np.max(np.abs(fit.fitted - data.outcome)) < 1e-6
