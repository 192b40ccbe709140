"""Crude starting values: per-source break-point grid search and BIC screening.

The sampler needs somewhere to start.  For each source we grid-search the
break-point over the middle of its observed log-distance range, minimizing
the residual sum of squares of a small per-source piecewise regression.
A per-source BIC comparison of break vs no-break models then screens which
sources plausibly have a break at all.  Full-model OLS at those values
yields starting coefficients and error variance.

The same machinery doubles as a standalone "crude" estimator used as a
benchmark model in the simulation study.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import InclusionState, boundary_mask, build_design, full_column_map, hinge
from .flowdata import FlowDataset
from .linreg import RankDeficientError, ols

GRID_SIZE = 50
MIN_DESTINATIONS = 10
GRID_PERCENTILES = (5.0, 95.0)


def _source_arrays(data: FlowDataset, source: int):
    rows = data.source_rows(source)
    if rows.stop == rows.start:
        raise ValueError(f"source {source} has no retained pairs")
    y = data.outcome[rows]
    d = data.pair_log_distance[rows]
    pop_dst = data.log_population[data.dest_index[rows]]
    return y, d, pop_dst


def theta_grid(d: np.ndarray, grid_size: int = GRID_SIZE) -> np.ndarray:
    lo, hi = np.percentile(d, GRID_PERCENTILES)
    return np.linspace(lo, hi, grid_size)


def _rss_at_theta(y, d, pop_dst, theta: float) -> float:
    X = np.column_stack([np.ones_like(d), pop_dst, d, hinge(d, theta)])
    coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(resid @ resid)


def grid_search_theta(
    data: FlowDataset, source: int, grid_size: int = GRID_SIZE
) -> tuple[float, bool]:
    """Break-point grid search for one source.

    Scans ``grid_size`` points between the 5th and 95th percentile of the
    source's observed log distances and returns the RSS-minimizing point.
    Sources with fewer than 10 destinations cannot support the search; they
    fall back to the midpoint of their distance range and the second return
    value flags that.
    """
    y, d, pop_dst = _source_arrays(data, source)
    if d.shape[0] < MIN_DESTINATIONS:
        return float(0.5 * (d.min() + d.max())), True
    grid = theta_grid(d, grid_size)
    rss = np.array([_rss_at_theta(y, d, pop_dst, t) for t in grid])
    return float(grid[int(np.argmin(rss))]), False


def bic_inclusion(data: FlowDataset, source: int, theta0: float) -> bool:
    """True when the per-source break model beats the no-break model by BIC.

    BIC = n*log(RSS/n) + k*log(n) with k counting all regression columns
    including the intercept.  Near-zero residual variance in the no-break
    model means the data are already explained; the smaller model wins.
    """
    y, d, pop_dst = _source_arrays(data, source)
    n = y.shape[0]
    X_small = np.column_stack([np.ones_like(d), pop_dst, d])
    coef, _, _, _ = np.linalg.lstsq(X_small, y, rcond=None)
    rss_small = float(np.sum((y - X_small @ coef) ** 2))
    rss_break = _rss_at_theta(y, d, pop_dst, theta0)
    scale = 1.0 + float(y @ y) / n
    eps = 1e-12 * scale
    if rss_small / n < eps:
        return False
    if rss_break / n < eps:
        return True
    bic_break = n * np.log(rss_break / n) + 4 * np.log(n)
    bic_small = n * np.log(rss_small / n) + 3 * np.log(n)
    return bool(bic_break < bic_small)


@dataclass(frozen=True)
class InitialValues:
    """Starting state for the sampler, in full-layout coordinates."""

    case: str
    theta: np.ndarray
    eta: np.ndarray
    boundary: np.ndarray
    mu: float
    beta: np.ndarray
    sigma2: float
    fallback: np.ndarray
    column_map: tuple[str, ...]


def initial_values(data: FlowDataset, case: str, grid_size: int = GRID_SIZE) -> InitialValues:
    """Grid-search break-points, screen inclusion, and OLS-fit the full model.

    Case I keeps every source's hinge column; case II includes hinges only
    for sources passing the BIC screen and routes population/intercept
    columns by that screen.  Structurally empty columns (for example a group
    with no members) are fitted as zero; genuine collinearity among
    supported columns raises RankDeficientError.
    """
    S = data.n_locations
    theta = np.empty(S)
    fallback = np.zeros(S, dtype=bool)
    for i in range(S):
        theta[i], fallback[i] = grid_search_theta(data, i, grid_size)
    if case == "II":
        eta = np.array([bic_inclusion(data, i, theta[i]) for i in range(S)])
    else:
        eta = np.ones(S, dtype=bool)
    boundary = boundary_mask(data, theta)
    incl = InclusionState(eta=eta, boundary=boundary)
    dm = build_design(data, theta, incl, case)

    labels = list(dm.column_map)
    keep = np.ones(len(labels), dtype=bool)
    if case == "II":
        # hinge columns stay only for screened-in sources
        for c, lab in enumerate(labels):
            if lab.startswith("hinge:") and not eta[int(lab.split(":")[1])]:
                keep[c] = False
    X = dm.matrix[:, keep]
    kept_labels = [lab for lab, k in zip(labels, keep) if k]

    # structurally empty columns cannot be identified; fit them as zero
    nonzero = np.ptp(X, axis=0) > 0.0
    X_fit = np.column_stack([np.ones(data.n_pairs), X[:, nonzero]])
    fit_names = ["intercept"] + [lab for lab, nz in zip(kept_labels, nonzero) if nz]
    res = ols(X_fit, data.outcome, names=fit_names)

    full_labels = full_column_map(case, S)
    beta = np.zeros(len(full_labels))
    coef_iter = iter(res.coef[1:])
    for lab, nz in zip(kept_labels, nonzero):
        if nz:
            beta[full_labels.index(lab)] = next(coef_iter)
    dof = data.n_pairs - X_fit.shape[1]
    sigma2 = res.rss / dof if dof > 0 else res.rss / data.n_pairs
    return InitialValues(
        case=case,
        theta=theta,
        eta=eta,
        boundary=boundary,
        mu=float(res.coef[0]),
        beta=beta,
        sigma2=float(sigma2),
        fallback=fallback,
        column_map=full_labels,
    )


@dataclass(frozen=True)
class CrudeBICFit:
    """Ungrouped OLS fit with grid-searched breaks and BIC-selected hinges."""

    theta: np.ndarray
    eta: np.ndarray
    mu: float
    beta: np.ndarray
    sigma2: float
    fitted: np.ndarray
    column_map: tuple[str, ...]


def fit_crude_bic(data: FlowDataset, grid_size: int = GRID_SIZE) -> CrudeBICFit:
    """Benchmark estimator: case-I structure with BIC-screened hinge columns.

    Returns fitted values over the canonical pair order; prediction at the
    training covariates reuses them directly.
    """
    S = data.n_locations
    theta = np.empty(S)
    for i in range(S):
        theta[i], _ = grid_search_theta(data, i, grid_size)
    eta = np.array([bic_inclusion(data, i, theta[i]) for i in range(S)])
    boundary = boundary_mask(data, theta)
    incl = InclusionState(eta=np.ones(S, dtype=bool), boundary=boundary)
    dm = build_design(data, theta, incl, "I")
    keep = np.ones(len(dm.column_map), dtype=bool)
    for c, lab in enumerate(dm.column_map):
        if lab.startswith("hinge:") and not eta[int(lab.split(":")[1])]:
            keep[c] = False
    X = dm.matrix[:, keep]
    kept_labels = [lab for lab, k in zip(dm.column_map, keep) if k]
    nonzero = np.ptp(X, axis=0) > 0.0
    X_fit = np.column_stack([np.ones(data.n_pairs), X[:, nonzero]])
    res = ols(X_fit, data.outcome, names=["intercept"] + [l for l, nz in zip(kept_labels, nonzero) if nz])

    full_labels = full_column_map("I", S)
    beta = np.zeros(len(full_labels))
    coef_iter = iter(res.coef[1:])
    for lab, nz in zip(kept_labels, nonzero):
        if nz:
            beta[full_labels.index(lab)] = next(coef_iter)
    dof = data.n_pairs - X_fit.shape[1]
    return CrudeBICFit(
        theta=theta,
        eta=eta,
        mu=float(res.coef[0]),
        beta=beta,
        sigma2=float(res.rss / dof if dof > 0 else res.rss / data.n_pairs),
        fitted=X_fit @ res.coef,
        column_map=full_labels,
    )
