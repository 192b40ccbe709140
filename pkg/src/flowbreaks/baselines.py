"""Classical flow-prediction baselines: gravity, radiation, and rank models.

The gravity model regresses log intensity on log populations and log
distance with a single shared decay exponent.  The radiation and rank
models are parameter-free given populations and geometry; they depend on
distance only through the local population ordering around each source.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowdata import FlowDataset
from .linreg import ols


@dataclass(frozen=True)
class GravityParams:
    """log G = log_k + alpha*log(m) + beta*log(n) - gamma*log(r)."""

    log_k: float
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class GravityFitReport:
    """OLS fit summary: estimates with standard errors and error variance."""

    estimates: dict[str, float]
    stderr: dict[str, float]
    residual_variance: float
    in_sample_mse: float
    n_pairs: int

    def to_text(self) -> str:
        lines = ["parameter,estimate,stderr"]
        for name in self.estimates:
            lines.append(f"{name},{self.estimates[name]:.10g},{self.stderr[name]:.10g}")
        lines.append(f"residual_variance,{self.residual_variance:.10g},")
        lines.append(f"in_sample_mse,{self.in_sample_mse:.10g},")
        lines.append(f"n_pairs,{self.n_pairs},")
        return "\n".join(lines) + "\n"


def gravity_log_intensity(params: GravityParams, log_m, log_n, log_r) -> np.ndarray:
    """Log flow intensity under the gravity model; inputs must be finite."""
    log_m, log_n, log_r = (np.asarray(x, dtype=float) for x in (log_m, log_n, log_r))
    if not (np.all(np.isfinite(log_m)) and np.all(np.isfinite(log_n)) and np.all(np.isfinite(log_r))):
        raise ValueError("gravity covariates must be finite")
    return params.log_k + params.alpha * log_m + params.beta * log_n - params.gamma * log_r


def fit_gravity(data: FlowDataset) -> tuple[GravityParams, GravityFitReport]:
    """Least-squares gravity fit on the retained pairs.

    Raises RankDeficientError naming the offending columns when the
    covariates are collinear (for example a constant population column).
    """
    names = ["intercept", "log_pop_src", "log_pop_dst", "log_distance"]
    X = np.column_stack(
        [
            np.ones(data.n_pairs),
            data.log_population[data.source_index],
            data.log_population[data.dest_index],
            data.pair_log_distance,
        ]
    )
    res = ols(X, data.outcome, names=names, with_stderr=True)
    params = GravityParams(
        log_k=float(res.coef[0]),
        alpha=float(res.coef[1]),
        beta=float(res.coef[2]),
        gamma=float(-res.coef[3]),
    )
    dof = data.n_pairs - 4
    report = GravityFitReport(
        estimates={
            "log_k": params.log_k,
            "alpha": params.alpha,
            "beta": params.beta,
            "gamma": params.gamma,
        },
        stderr=dict(zip(["log_k", "alpha", "beta", "gamma"], (float(s) for s in res.stderr))),
        residual_variance=res.rss / dof if dof > 0 else float("nan"),
        in_sample_mse=res.rss / data.n_pairs,
        n_pairs=data.n_pairs,
    )
    return params, report


def gravity_predict(params: GravityParams, data: FlowDataset) -> np.ndarray:
    """Predicted log intensity for every retained pair of the dataset."""
    return gravity_log_intensity(
        params,
        data.log_population[data.source_index],
        data.log_population[data.dest_index],
        data.pair_log_distance,
    )


def radiation_flux(total_outflow, m_i, n_j, s_ij) -> np.ndarray:
    """Radiation-model expected flow T_i * m*n / ((m+s)(m+n+s)).

    All inputs must be non-negative; populations must be positive.
    """
    T, m, n, s = (np.asarray(x, dtype=float) for x in (total_outflow, m_i, n_j, s_ij))
    if np.any(T < 0) or np.any(s < 0):
        raise ValueError("total outflow and ring population must be non-negative")
    if np.any(m <= 0) or np.any(n <= 0):
        raise ValueError("populations must be positive")
    return T * m * n / ((m + s) * (m + n + s))


def ring_population(data: FlowDataset) -> np.ndarray:
    """s[i, j]: total population strictly closer to i than j is, excluding i.

    Ties with d(i, j) are excluded.  The diagonal is NaN.
    """
    S = data.n_locations
    pop = np.exp(data.log_population)
    out = np.full((S, S), np.nan)
    for i in range(S):
        d_i = data.distance_km[i]
        # member[j, k]: k lies strictly inside the ring for pair (i, j);
        # k == j drops out because d(i, j) < d(i, j) is false
        member = d_i[None, :] < d_i[:, None]
        member[:, i] = False
        out[i] = np.where(member, pop[None, :], 0.0).sum(axis=1)
        out[i, i] = np.nan
    return out


def radiation_flux_matrix(data: FlowDataset, total_outflow: np.ndarray) -> np.ndarray:
    """Radiation-model flux for every ordered pair; diagonal NaN."""
    S = data.n_locations
    T = np.asarray(total_outflow, dtype=float)
    if T.shape != (S,):
        raise ValueError(f"total_outflow must have shape ({S},)")
    pop = np.exp(data.log_population)
    s = ring_population(data)
    out = np.full((S, S), np.nan)
    for i in range(S):
        others = [j for j in range(S) if j != i]
        out[i, others] = radiation_flux(T[i], pop[i], pop[others], s[i, others])
    return out


def rank_of(data: FlowDataset, u: int, v: int) -> int:
    """Number of locations w != u with d(u, w) <= d(u, v); v itself counts."""
    if u == v:
        raise ValueError("rank is defined for distinct locations")
    S = data.n_locations
    others = np.concatenate([np.arange(u), np.arange(u + 1, S)])
    d = data.distance_km[u, others]
    return int((d <= data.distance_km[u, v]).sum())


def rank_probabilities(data: FlowDataset, u: int) -> np.ndarray:
    """Destination choice probabilities proportional to 1/rank, normalized.

    Entry v holds Pr(u -> v); the u-th entry is NaN.
    """
    S = data.n_locations
    inv = np.full(S, np.nan)
    for v in range(S):
        if v != u:
            inv[v] = 1.0 / rank_of(data, u, v)
    total = np.nansum(inv)
    return inv / total
