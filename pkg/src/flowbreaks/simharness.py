"""Synthetic flow generation and the desk-scale simulation study.

A scenario draws locations uniformly on a square, populations log-uniformly,
and per-source decay slopes with an optional slope change at a per-source
break-point.  Counts are round(exp(Y)) with the exact log intensities kept
in the truth record, so every generated outcome can be reproduced from the
record alone.

The study fits three predictors per simulated dataset — the gravity
baseline, the crude BIC-screened least-squares model, and the shrinkage
sampler — and scores them by mean squared error on freshly generated
replicate datasets, alongside Metropolis acceptance rates and break-point
interval coverage across a sweep of proposal variances.  The benchmark
times one full outer sampler iteration at increasing location counts and
reports the log-log growth slope.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace

import numpy as np

from .baselines import GravityParams, fit_gravity
from .diagnostics import posterior_mean_matrix, prediction_error, summarize
from .flowdata import FlowDataset, FlowRecord, Location, LoadReport, build_dataset
from .initialize import CrudeBICFit, fit_crude_bic
from .design import full_column_map
from .sampler import SamplerConfig, run_chains, time_per_iteration, with_sweep_value


class ScenarioError(ValueError):
    """Raised for invalid scenario settings."""


@dataclass(frozen=True)
class SimScenario:
    """Generative settings for one synthetic study.

    Locations are uniform on a ``region_km`` square with log-uniform
    populations; each source gets its own decay slope, and a
    ``break_fraction`` share of sources additionally get a positive slope
    change at a break-point placed at a random quantile of that source's
    log distances.  ``sigma2`` is the observation noise variance and
    ``sweep`` the Metropolis proposal variances the study crosses with
    every simulated dataset.
    """

    n_locations: int = 20
    sigma2: float = 0.38
    region_km: float = 500.0
    population_range: tuple[float, float] = (1e3, 1e5)
    intercept: float = 4.0
    pop_coefficients: tuple[float, float] = (0.75, 0.75)
    slope_range: tuple[float, float] = (-2.6, -0.7)
    break_effect_range: tuple[float, float] = (3.0, 5.0)
    break_quantile_range: tuple[float, float] = (0.35, 0.65)
    break_fraction: float = 2.0 / 3.0
    datasets: int = 2
    replicates: int = 100
    sweep: tuple[float, ...] = (0.03, 0.1, 0.2, 0.4)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "population_range", tuple(float(x) for x in self.population_range))
        object.__setattr__(self, "pop_coefficients", tuple(float(x) for x in self.pop_coefficients))
        object.__setattr__(self, "slope_range", tuple(float(x) for x in self.slope_range))
        object.__setattr__(self, "break_effect_range", tuple(float(x) for x in self.break_effect_range))
        object.__setattr__(
            self, "break_quantile_range", tuple(float(x) for x in self.break_quantile_range)
        )
        object.__setattr__(self, "sweep", tuple(float(x) for x in self.sweep))
        if self.n_locations < 2:
            raise ScenarioError("n_locations must be >= 2")
        if self.sigma2 < 0:
            raise ScenarioError("sigma2 must be >= 0")
        if self.region_km <= 0:
            raise ScenarioError("region_km must be positive")
        if not 1 <= self.population_range[0] <= self.population_range[1]:
            raise ScenarioError("population_range must satisfy 1 <= low <= high")
        if len(self.pop_coefficients) != 2:
            raise ScenarioError("pop_coefficients must have two entries")
        for name in ("slope_range", "break_effect_range", "break_quantile_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ScenarioError(f"{name} must satisfy low <= high")
        qlo, qhi = self.break_quantile_range
        if not 0.0 < qlo <= qhi < 1.0:
            raise ScenarioError("break_quantile_range must lie strictly inside (0, 1)")
        if not 0.0 <= self.break_fraction <= 1.0:
            raise ScenarioError("break_fraction must be in [0, 1]")
        if self.datasets < 1 or self.replicates < 1:
            raise ScenarioError("datasets and replicates must be >= 1")
        if not self.sweep or any(v <= 0 for v in self.sweep):
            raise ScenarioError("sweep must list positive proposal variances")


@dataclass(frozen=True)
class TruthRecord:
    """Generative parameters plus the exact log intensities of one dataset.

    ``log_intensity`` already includes the drawn noise; counts are
    round(exp(log_intensity)), so the record reproduces the dataset bit for
    bit.  ``theta`` is drawn for every source but only enters the mean for
    sources with ``has_break``.
    """

    sigma2: float
    coordinates_km: np.ndarray
    populations: np.ndarray
    mu: float
    pop_coefficients: np.ndarray
    slope: np.ndarray
    break_effect: np.ndarray
    theta: np.ndarray
    has_break: np.ndarray
    log_intensity: np.ndarray

    @property
    def n_locations(self) -> int:
        return self.populations.shape[0]

    def distance_matrix(self) -> np.ndarray:
        diff = self.coordinates_km[:, None, :] - self.coordinates_km[None, :, :]
        return np.sqrt((diff**2).sum(axis=2))

    def mean_matrix(self) -> np.ndarray:
        """Noiseless log intensity per ordered pair; NaN diagonal."""
        return _mean_matrix(
            self.distance_matrix(),
            np.log(self.populations),
            self.mu,
            self.pop_coefficients,
            self.slope,
            self.break_effect,
            self.theta,
            self.has_break,
        )

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if isinstance(value, np.ndarray):
                clean = np.where(np.isnan(value), None, value.astype(object))
                out[key] = clean.tolist()
            else:
                out[key] = value
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TruthRecord":
        def arr(key, dtype=float):
            raw = payload[key]
            cleaned = np.array(
                [[np.nan if v is None else v for v in row] for row in raw], dtype=dtype
            ) if raw and isinstance(raw[0], list) else np.array(
                [np.nan if v is None else v for v in raw], dtype=dtype
            )
            return cleaned

        return cls(
            sigma2=float(payload["sigma2"]),
            coordinates_km=arr("coordinates_km"),
            populations=arr("populations"),
            mu=float(payload["mu"]),
            pop_coefficients=arr("pop_coefficients"),
            slope=arr("slope"),
            break_effect=arr("break_effect"),
            theta=arr("theta"),
            has_break=np.array(payload["has_break"], dtype=bool),
            log_intensity=arr("log_intensity"),
        )


def _mean_matrix(dist, lp, mu, pop_coef, slope, break_effect, theta, has_break) -> np.ndarray:
    S = lp.shape[0]
    logd = np.full((S, S), np.nan)
    off = ~np.eye(S, dtype=bool)
    logd[off] = np.log(dist[off])
    with np.errstate(invalid="ignore"):
        h = np.maximum(logd - theta[:, None], 0.0)
        return (
            mu
            + pop_coef[0] * lp[:, None]
            + pop_coef[1] * lp[None, :]
            + slope[:, None] * logd
            + np.where(has_break[:, None], break_effect[:, None] * h, 0.0)
        )


def _location_ids(S: int) -> list[str]:
    width = len(str(S - 1))
    return [f"L{i:0{width}d}" for i in range(S)]


def _draw_truth(scenario: SimScenario, rng: np.random.Generator) -> TruthRecord:
    S = scenario.n_locations
    coords = rng.uniform(0.0, scenario.region_km, size=(S, 2))
    lo, hi = scenario.population_range
    populations = np.rint(np.exp(rng.uniform(np.log(lo), np.log(hi), size=S)))
    populations = np.maximum(populations, 1.0)
    slope = rng.uniform(*scenario.slope_range, size=S)
    n_break = int(round(scenario.break_fraction * S))
    has_break = np.zeros(S, dtype=bool)
    if n_break:
        has_break[rng.choice(S, size=n_break, replace=False)] = True
    break_effect = np.zeros(S)
    break_effect[has_break] = rng.uniform(*scenario.break_effect_range, size=n_break)

    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    off = ~np.eye(S, dtype=bool)
    if np.any(dist[off] <= 0.0):
        raise ScenarioError("two locations coincide; reseed the scenario")
    theta = np.empty(S)
    quantiles = rng.uniform(*scenario.break_quantile_range, size=S)
    for i in range(S):
        theta[i] = np.quantile(np.log(dist[i][off[i]]), quantiles[i])

    pop_coef = np.asarray(scenario.pop_coefficients, dtype=float)
    lp = np.log(populations)
    mean = _mean_matrix(dist, lp, scenario.intercept, pop_coef, slope, break_effect, theta, has_break)
    Y = mean + np.sqrt(scenario.sigma2) * rng.standard_normal((S, S))
    np.fill_diagonal(Y, np.nan)
    return TruthRecord(
        sigma2=scenario.sigma2,
        coordinates_km=coords,
        populations=populations,
        mu=scenario.intercept,
        pop_coefficients=pop_coef,
        slope=slope,
        break_effect=break_effect,
        theta=theta,
        has_break=has_break,
        log_intensity=Y,
    )


def _dataset_from_intensity(truth: TruthRecord, Y: np.ndarray) -> tuple[FlowDataset, LoadReport]:
    S = truth.n_locations
    ids = _location_ids(S)
    locations = [Location(id=ids[i], population=int(truth.populations[i])) for i in range(S)]
    with np.errstate(invalid="ignore", over="raise"):
        try:
            counts = np.rint(np.exp(Y))
        except FloatingPointError as exc:
            raise ScenarioError("generated intensity overflows the count scale") from exc
    flows = [
        FlowRecord(source=ids[i], destination=ids[j], count=int(counts[i, j]))
        for i in range(S)
        for j in range(S)
        if i != j
    ]
    return build_dataset(
        locations, flows, distance_source="explicit_matrix", distance_km=truth.distance_matrix()
    )


def generate(scenario: SimScenario, rng: np.random.Generator) -> tuple[FlowDataset, TruthRecord]:
    """Draw one synthetic dataset plus the truth record that regenerates it."""
    truth = _draw_truth(scenario, rng)
    data, _ = _dataset_from_intensity(truth, truth.log_intensity)
    return data, truth


def replicate_dataset(truth: TruthRecord, rng: np.random.Generator) -> FlowDataset:
    """Fresh dataset from the same parameters and geometry, new noise."""
    S = truth.n_locations
    noise = np.sqrt(truth.sigma2) * rng.standard_normal((S, S))
    Y = truth.mean_matrix() + noise
    np.fill_diagonal(Y, np.nan)
    data, _ = _dataset_from_intensity(truth, Y)
    return data


# --- study ----------------------------------------------------------------


def gravity_matrix(params: GravityParams, data: FlowDataset) -> np.ndarray:
    """Gravity log intensity for every ordered pair; NaN diagonal."""
    lp = data.log_population
    with np.errstate(invalid="ignore"):
        return (
            params.log_k
            + params.alpha * lp[:, None]
            + params.beta * lp[None, :]
            - params.gamma * data.log_distance
        )


def crude_bic_matrix(fit: CrudeBICFit, data: FlowDataset) -> np.ndarray:
    """Crude-model log intensity for every ordered pair; NaN diagonal."""
    S = data.n_locations
    lp = data.log_population
    labels = full_column_map("I", S)
    assert fit.column_map == labels
    slope = fit.beta[2 : 2 + S]
    b4 = fit.beta[2 + S :]
    with np.errstate(invalid="ignore"):
        h = np.maximum(data.log_distance - fit.theta[:, None], 0.0)
        return (
            fit.mu
            + fit.beta[0] * lp[:, None]
            + fit.beta[1] * lp[None, :]
            + slope[:, None] * data.log_distance
            + b4[:, None] * h
        )


@dataclass(frozen=True)
class StudyCell:
    """One (dataset, proposal variance) sampler fit and its scores."""

    dataset_index: int
    sigma2_theta: float
    mse: float
    mean_acceptance: float
    coverage_hits: int
    coverage_events: int
    psrf1_final: float
    psrf2_final: float


@dataclass(frozen=True)
class StudyReport:
    """Scores of every fitted cell plus per-dataset baselines."""

    scenario: SimScenario
    case: str
    config: SamplerConfig
    gravity_mse: tuple[float, ...]
    crude_mse: tuple[float, ...]
    training_dropped_pairs: tuple[int, ...]
    cells: tuple[StudyCell, ...]

    def _cells_at(self, sigma2_theta: float) -> list[StudyCell]:
        cells = [c for c in self.cells if c.sigma2_theta == sigma2_theta]
        if not cells:
            raise ScenarioError(f"no study cell at sigma2_theta={sigma2_theta}")
        return cells

    def lasso_mse(self, sigma2_theta: float) -> float:
        return float(np.mean([c.mse for c in self._cells_at(sigma2_theta)]))

    def gravity_mean_mse(self) -> float:
        return float(np.mean(self.gravity_mse))

    def crude_mean_mse(self) -> float:
        return float(np.mean(self.crude_mse))

    def acceptance(self, sigma2_theta: float) -> float:
        return float(np.mean([c.mean_acceptance for c in self._cells_at(sigma2_theta)]))

    def coverage(self, sigma2_theta: float) -> float:
        cells = self._cells_at(sigma2_theta)
        events = sum(c.coverage_events for c in cells)
        return sum(c.coverage_hits for c in cells) / events if events else float("nan")

    def prediction_table(self) -> str:
        """Out-of-sample MSE by model; sampler rows split by proposal variance."""
        per_ds = ",".join(f"dataset_{d}" for d in range(len(self.gravity_mse)))
        lines = [f"model,sigma2_theta,{per_ds},mean"]

        def row(name, sv, values):
            cols = ",".join(f"{v:.6g}" for v in values)
            return f"{name},{sv},{cols},{np.mean(values):.6g}"

        lines.append(row("gravity", "", self.gravity_mse))
        lines.append(row("crude_bic", "", self.crude_mse))
        for sv in self.scenario.sweep:
            lines.append(row("bayes_lasso", sv, [c.mse for c in self._cells_at(sv)]))
        return "\n".join(lines) + "\n"

    def acceptance_table(self) -> str:
        """Mean Metropolis acceptance by proposal variance."""
        per_ds = ",".join(f"dataset_{d}" for d in range(len(self.gravity_mse)))
        lines = [f"sigma2_theta,{per_ds},mean"]
        for sv in self.scenario.sweep:
            vals = [c.mean_acceptance for c in self._cells_at(sv)]
            cols = ",".join(f"{v:.6g}" for v in vals)
            lines.append(f"{sv},{cols},{np.mean(vals):.6g}")
        return "\n".join(lines) + "\n"

    def coverage_table(self) -> str:
        """Break-point interval coverage over true-break sources."""
        per_ds = ",".join(f"dataset_{d}" for d in range(len(self.gravity_mse)))
        lines = [f"sigma2_theta,{per_ds},pooled"]
        for sv in self.scenario.sweep:
            cells = self._cells_at(sv)
            cols = ",".join(f"{c.coverage_hits}/{c.coverage_events}" for c in cells)
            lines.append(f"{sv},{cols},{self.coverage(sv):.6g}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "scenario": asdict(self.scenario),
            "case": self.case,
            "config": asdict(self.config),
            "gravity_mse": list(self.gravity_mse),
            "crude_mse": list(self.crude_mse),
            "training_dropped_pairs": list(self.training_dropped_pairs),
            "cells": [asdict(c) for c in self.cells],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _cell_seed(base_seed: int, dataset: int, sweep_index: int) -> int:
    return int(np.random.SeedSequence([base_seed, dataset, sweep_index]).generate_state(1)[0])


def run_study(scenario: SimScenario, config: SamplerConfig, case: str = "I") -> StudyReport:
    """Full study: generate, fit all three models, score against replicates.

    Every cell derives its chain seeds from (config.seed, dataset index,
    sweep index), so reruns are reproducible and cells are independent.
    """
    gravity_scores: list[float] = []
    crude_scores: list[float] = []
    dropped: list[int] = []
    cells: list[StudyCell] = []
    for d in range(scenario.datasets):
        truth_ss, rep_ss = np.random.SeedSequence([scenario.seed, d]).spawn(2)
        truth = _draw_truth(scenario, np.random.default_rng(truth_ss))
        data, report = _dataset_from_intensity(truth, truth.log_intensity)
        dropped.append(report.dropped_zero_pairs)
        rep_rng = np.random.default_rng(rep_ss)
        replicates = [replicate_dataset(truth, rep_rng) for _ in range(scenario.replicates)]

        gparams, _ = fit_gravity(data)
        gravity_scores.append(prediction_error(gravity_matrix(gparams, data), replicates))
        crude = fit_crude_bic(data, grid_size=config.grid_size)
        crude_scores.append(prediction_error(crude_bic_matrix(crude, data), replicates))

        break_ids = [data.location_ids[i] for i in np.flatnonzero(truth.has_break)]
        for k, sv in enumerate(scenario.sweep):
            cfg = replace(with_sweep_value(config, sv), seed=_cell_seed(config.seed, d, k))
            traces = run_chains(data, case, cfg)
            diag = summarize(traces)
            mse = prediction_error(posterior_mean_matrix(traces, data), replicates)
            hits = 0
            for sid in break_ids:
                iv = diag.intervals[f"theta:{sid}"]
                true_theta = truth.theta[data.index_of(sid)]
                if iv is not None and iv[1] <= true_theta <= iv[2]:
                    hits += 1
            cells.append(
                StudyCell(
                    dataset_index=d,
                    sigma2_theta=sv,
                    mse=mse,
                    mean_acceptance=diag.mean_acceptance,
                    coverage_hits=hits,
                    coverage_events=len(break_ids),
                    psrf1_final=float(diag.psrf1_series[-1]),
                    psrf2_final=float(diag.psrf2_series[-1]),
                )
            )
    return StudyReport(
        scenario=scenario,
        case=case,
        config=config,
        gravity_mse=tuple(gravity_scores),
        crude_mse=tuple(crude_scores),
        training_dropped_pairs=tuple(dropped),
        cells=tuple(cells),
    )


# --- benchmark --------------------------------------------------------------


@dataclass(frozen=True)
class BenchReport:
    """Per-iteration wall time versus location count with growth slopes."""

    case: str
    s_values: tuple[int, ...]
    seconds_per_iteration: tuple[float, ...]
    slope: float
    pairwise_slopes: tuple[float, ...]
    iterations: int

    def to_text(self) -> str:
        lines = ["n_locations,seconds_per_iteration"]
        for s, t in zip(self.s_values, self.seconds_per_iteration):
            lines.append(f"{s},{t:.6e}")
        lines.append(f"# least-squares log-log slope: {self.slope:.4f}")
        pw = ", ".join(f"{v:.4f}" for v in self.pairwise_slopes)
        lines.append(f"# pairwise slopes: {pw}")
        return "\n".join(lines) + "\n"


def bench_scaling(
    s_values,
    config: SamplerConfig | None = None,
    case: str = "I",
    iterations: int = 25,
    warmup: int = 5,
    repeats: int = 3,
    scenario: SimScenario | None = None,
) -> BenchReport:
    """Time one outer sampler iteration at each location count.

    Data are drawn from ``scenario`` resized to each count (deterministic in
    the scenario seed).  The summary slope is the least-squares slope of
    log time against log count; pairwise slopes show where the asymptotic
    growth rate is reached.
    """
    s_values = [int(s) for s in s_values]
    if any(b <= a for a, b in zip(s_values, s_values[1:])) or any(s < 2 for s in s_values):
        raise ScenarioError("s_values must be ascending location counts >= 2")
    config = config or SamplerConfig()
    base = scenario or SimScenario()
    times = []
    for s in s_values:
        scen = replace(base, n_locations=s)
        rng = np.random.default_rng(np.random.SeedSequence([base.seed, s]))
        data, _ = generate(scen, rng)
        times.append(time_per_iteration(data, case, config, iterations, warmup, repeats))
    logs = np.log(np.asarray(s_values, dtype=float))
    logt = np.log(np.asarray(times))
    slope = float(np.polyfit(logs, logt, 1)[0]) if len(s_values) > 1 else float("nan")
    pairwise = tuple(float(v) for v in np.diff(logt) / np.diff(logs)) if len(s_values) > 1 else ()
    return BenchReport(
        case=case,
        s_values=tuple(s_values),
        seconds_per_iteration=tuple(float(t) for t in times),
        slope=slope,
        pairwise_slopes=pairwise,
        iterations=iterations,
    )
