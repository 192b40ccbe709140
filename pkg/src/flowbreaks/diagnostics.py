"""Convergence diagnostics and posterior prediction for sampler traces.

Convergence is assessed with a variance decomposition that respects the
trans-dimensional nature of the chains: states are grouped both by chain
and by visited model (inclusion pattern), giving two potential scale
reduction factors.  PSRF1 compares total variation against within-chain
variation; PSRF2 compares within-model variation against within-model,
within-chain variation.  Both approach 1 as chains mix across and within
models.

Prediction averages the per-state linear predictor over every stored
state, so model uncertainty is integrated out with weights equal to the
models' visit frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import hinge, n_head_columns
from .flowdata import FlowDataset
from .sampler import ChainTrace


class DiagnosticsError(ValueError):
    """Raised for inconsistent traces or malformed requests."""


@dataclass(frozen=True)
class VarianceDecomposition:
    """Variance components of a scalar across chains and visited models.

    With C chains of T states each and M distinct models, components are

    * total: sum over all states of squared deviation from the grand mean,
      divided by (C*T - 1);
    * within_chain: deviations from chain means, divided by C*(T - 1);
    * within_model: deviations from model means (pooled over chains),
      divided by (C*T - M);
    * within_model_chain: deviations from per-(chain, model) cell means,
      divided by C*(T - M).  Empty cells contribute no terms.
    """

    total: float
    within_chain: float
    within_model: float
    within_model_chain: float
    n_chains: int
    n_per_chain: int
    n_models: int


def _scalar_series(trace: ChainTrace, scalar: str) -> np.ndarray:
    if scalar in ("sigma2", "mu", "lambda2"):
        return getattr(trace, scalar)
    kind, _, key = scalar.partition(":")
    if kind == "theta" and key:
        idx = int(key) if key.isdigit() else trace.location_ids.index(key)
        return trace.theta[:, idx]
    if kind == "beta" and key:
        return trace.beta[:, trace.column_map.index(key)]
    raise DiagnosticsError(f"unknown scalar selector {scalar!r}")


def variance_decomposition(
    traces: list[ChainTrace], scalar: str = "sigma2", stop: int | None = None
) -> VarianceDecomposition:
    """Compute the four variance components over states [0, stop) per chain."""
    _check_traces(traces)
    T_full = traces[0].n_states
    stop = T_full if stop is None else stop
    if not 1 <= stop <= T_full:
        raise DiagnosticsError(f"stop must be in [1, {T_full}]")
    C = len(traces)
    T = stop
    x = np.stack([_scalar_series(tr, scalar)[:stop] for tr in traces])  # (C, T)
    labels = np.stack([tr.model_labels[:stop] for tr in traces])

    grand = x.mean()
    ss_total = float(((x - grand) ** 2).sum())
    chain_means = x.mean(axis=1, keepdims=True)
    ss_chain = float(((x - chain_means) ** 2).sum())

    uniq = np.unique(labels)
    M = uniq.shape[0]
    ss_model = 0.0
    ss_model_chain = 0.0
    for m in uniq:
        sel = labels == m
        vals = x[sel]
        ss_model += float(((vals - vals.mean()) ** 2).sum())
        for c in range(C):
            cell = x[c][sel[c]]
            if cell.size:
                ss_model_chain += float(((cell - cell.mean()) ** 2).sum())

    def _ratio(ss: float, denom: float) -> float:
        if denom <= 0:
            return 0.0 if ss == 0.0 else float("inf")
        return ss / denom

    return VarianceDecomposition(
        total=_ratio(ss_total, C * T - 1),
        within_chain=_ratio(ss_chain, C * (T - 1)),
        within_model=_ratio(ss_model, C * T - M),
        within_model_chain=_ratio(ss_model_chain, C * (T - M)),
        n_chains=C,
        n_per_chain=T,
        n_models=M,
    )


def psrf(decomp: VarianceDecomposition) -> tuple[float, float]:
    """(PSRF1, PSRF2) from a variance decomposition; 0/0 counts as 1."""

    def _r(num: float, den: float) -> float:
        if den == 0.0:
            return 1.0 if num == 0.0 else float("inf")
        return num / den

    return _r(decomp.total, decomp.within_chain), _r(decomp.within_model, decomp.within_model_chain)


def psrf_series(
    traces: list[ChainTrace], scalar: str = "sigma2", n_batches: int = 10
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """PSRF trajectories over cumulative batch prefixes.

    Chains are cut into ``n_batches`` equal batches; the k-th entry uses all
    states up to and including batch k.  Returns (batch_ends, psrf1, psrf2).
    """
    T = traces[0].n_states
    if n_batches < 1:
        raise DiagnosticsError("n_batches must be >= 1")
    ends = np.unique(np.maximum(1, (np.arange(1, n_batches + 1) * T) // n_batches))
    p1 = np.empty(ends.shape[0])
    p2 = np.empty(ends.shape[0])
    for k, stop in enumerate(ends):
        p1[k], p2[k] = psrf(variance_decomposition(traces, scalar, stop=int(stop)))
    return ends, p1, p2


@dataclass(frozen=True)
class DiagnosticsReport:
    """Posterior summary: intervals, inclusion, acceptance, PSRF series."""

    alpha: float
    n_chains: int
    n_states: int
    scalar_name: str
    intervals: dict[str, tuple[float, float, float] | None]
    inclusion_probabilities: dict[str, float]
    break_flagged: dict[str, bool]
    acceptance: dict[str, float]
    mean_acceptance: float
    batch_ends: np.ndarray
    psrf1_series: np.ndarray
    psrf2_series: np.ndarray

    def to_text(self) -> str:
        lines = [
            f"chains,{self.n_chains}",
            f"states_per_chain,{self.n_states}",
            f"interval_level,{1 - self.alpha}",
            f"mean_metropolis_acceptance,{self.mean_acceptance:.6g}",
            "",
            "parameter,mean,lower,upper",
        ]
        for name, iv in self.intervals.items():
            if iv is None:
                lines.append(f"{name},unavailable,,")
            else:
                lines.append(f"{name},{iv[0]:.10g},{iv[1]:.10g},{iv[2]:.10g}")
        lines.append("")
        lines.append("source,inclusion_probability,break_flagged,acceptance_rate")
        for sid in self.inclusion_probabilities:
            lines.append(
                f"{sid},{self.inclusion_probabilities[sid]:.6g},"
                f"{int(self.break_flagged[sid])},{self.acceptance[sid]:.6g}"
            )
        lines.append("")
        lines.append(f"batch_end,psrf1({self.scalar_name}),psrf2({self.scalar_name})")
        for e, a, b in zip(self.batch_ends, self.psrf1_series, self.psrf2_series):
            lines.append(f"{e},{a:.10g},{b:.10g}")
        return "\n".join(lines) + "\n"

    def psrf_table(self) -> str:
        """Plot-ready series: batch index, batch end, psrf1, psrf2."""
        lines = ["batch,batch_end,psrf1,psrf2"]
        for k, (e, a, b) in enumerate(zip(self.batch_ends, self.psrf1_series, self.psrf2_series), start=1):
            lines.append(f"{k},{e},{a:.10g},{b:.10g}")
        return "\n".join(lines) + "\n"


def _check_traces(traces: list[ChainTrace]) -> None:
    if not traces:
        raise DiagnosticsError("need at least one trace")
    first = traces[0]
    for tr in traces[1:]:
        if tr.location_ids != first.location_ids or tr.column_map != first.column_map:
            raise DiagnosticsError("traces come from different model setups")
        if tr.n_states != first.n_states:
            raise DiagnosticsError("traces have different lengths")


def summarize(
    traces: list[ChainTrace], alpha: float = 0.05, scalar: str = "sigma2", n_batches: int = 10
) -> DiagnosticsReport:
    """Pooled posterior summaries over all chains.

    Break-point intervals for a source use only states where its hinge term
    is active (included and not boundary); a source never active gets an
    unavailable interval.  A source is flagged as having a break when the
    pooled interval of its hinge coefficient excludes zero.
    """
    _check_traces(traces)
    first = traces[0]
    S = len(first.location_ids)
    qs = (alpha / 2.0, 1.0 - alpha / 2.0)

    intervals: dict[str, tuple[float, float, float] | None] = {}
    for name in ("mu", "sigma2", "lambda2"):
        x = np.concatenate([_scalar_series(tr, name) for tr in traces])
        intervals[name] = (float(x.mean()), *(float(q) for q in np.quantile(x, qs)))
    for j, label in enumerate(first.column_map):
        x = np.concatenate([tr.beta[:, j] for tr in traces])
        intervals[f"beta:{label}"] = (float(x.mean()), *(float(q) for q in np.quantile(x, qs)))

    inclusion: dict[str, float] = {}
    flagged: dict[str, bool] = {}
    acceptance: dict[str, float] = {}
    eta_all = np.concatenate([tr.eta for tr in traces])
    boundary_all = np.concatenate([tr.boundary for tr in traces])
    theta_all = np.concatenate([tr.theta for tr in traces])
    counts = sum(tr.accept_counts for tr in traces)
    props = sum(tr.n_proposals for tr in traces)
    for i, sid in enumerate(first.location_ids):
        active = eta_all[:, i] & ~boundary_all[:, i]
        if active.any():
            th = theta_all[active, i]
            intervals[f"theta:{sid}"] = (float(th.mean()), *(float(q) for q in np.quantile(th, qs)))
        else:
            intervals[f"theta:{sid}"] = None
        inclusion[sid] = float(eta_all[:, i].mean())
        iv = intervals[f"beta:hinge:{i}"]
        flagged[sid] = bool(iv is not None and (iv[1] > 0.0 or iv[2] < 0.0))
        acceptance[sid] = float(counts[i] / props[i]) if props[i] > 0 else 0.0

    with_props = props > 0
    mean_acc = float(counts[with_props].sum() / props[with_props].sum()) if with_props.any() else 0.0
    ends, p1, p2 = psrf_series(traces, scalar, n_batches)
    return DiagnosticsReport(
        alpha=alpha,
        n_chains=len(traces),
        n_states=first.n_states,
        scalar_name=scalar,
        intervals=intervals,
        inclusion_probabilities=inclusion,
        break_flagged=flagged,
        acceptance=acceptance,
        mean_acceptance=mean_acc,
        batch_ends=ends,
        psrf1_series=p1,
        psrf2_series=p2,
    )


# --- prediction -----------------------------------------------------------


@dataclass(frozen=True)
class PairPrediction:
    source: str
    destination: str
    log_distance: float
    mean: float
    lower: float
    upper: float


def _pooled_arrays(traces: list[ChainTrace]):
    mu = np.concatenate([tr.mu for tr in traces])
    beta = np.concatenate([tr.beta for tr in traces])
    theta = np.concatenate([tr.theta for tr in traces])
    routing = np.concatenate([tr.eta_routing for tr in traces])
    sigma2 = np.concatenate([tr.sigma2 for tr in traces])
    return mu, beta, theta, routing, sigma2


def _pair_draws(traces, src_idx: int, log_d: float, lp_src: float, lp_dst: float) -> np.ndarray:
    """Linear predictor for one pair under every stored state."""
    first = traces[0]
    head = n_head_columns(first.case)
    S = len(first.location_ids)
    mu, beta, theta, routing, _ = _pooled_arrays(traces)
    slope = beta[:, head + src_idx]
    b4 = beta[:, head + S + src_idx]
    h = hinge(log_d, theta[:, src_idx])
    if first.case == "I":
        base = mu + beta[:, 0] * lp_src + beta[:, 1] * lp_dst
    else:
        g = routing[:, src_idx]
        base = mu + np.where(
            g,
            beta[:, 2] * lp_src + beta[:, 3] * lp_dst + beta[:, 4],
            beta[:, 0] * lp_src + beta[:, 1] * lp_dst,
        )
    return base + slope * log_d + b4 * h


def predict(
    traces: list[ChainTrace],
    new_pairs,
    alpha: float = 0.05,
    interval: str = "mean",
    rng: np.random.Generator | None = None,
) -> list[PairPrediction]:
    """Posterior mean and interval of the log intensity for new pairs.

    Each pair is ``(source_id, destination_id, log_distance, log_pop_src,
    log_pop_dst)`` and must reference a location known to the traces.
    ``interval="mean"`` gives quantiles of the per-state linear predictor;
    ``interval="predictive"`` adds observation noise drawn per state.
    Averaging over states weights each visited model by its visit frequency.
    """
    _check_traces(traces)
    if interval not in ("mean", "predictive"):
        raise DiagnosticsError("interval must be 'mean' or 'predictive'")
    ids = traces[0].location_ids
    qs = (alpha / 2.0, 1.0 - alpha / 2.0)
    if interval == "predictive" and rng is None:
        rng = np.random.default_rng(0)
    out = []
    sigma2 = _pooled_arrays(traces)[4]
    for pair in new_pairs:
        sid, did, log_d, lp_src, lp_dst = pair
        if sid not in ids:
            raise DiagnosticsError(f"unknown source location {sid!r}")
        if did not in ids:
            raise DiagnosticsError(f"unknown destination location {did!r}")
        if not np.isfinite([log_d, lp_src, lp_dst]).all():
            raise DiagnosticsError(f"non-finite covariates for pair {sid!r}->{did!r}")
        draws = _pair_draws(traces, ids.index(sid), float(log_d), float(lp_src), float(lp_dst))
        if interval == "predictive":
            draws = draws + np.sqrt(sigma2) * rng.standard_normal(draws.shape[0])
        lo, hi = np.quantile(draws, qs)
        out.append(
            PairPrediction(
                source=sid,
                destination=did,
                log_distance=float(log_d),
                mean=float(draws.mean()),
                lower=float(lo),
                upper=float(hi),
            )
        )
    return out


def posterior_mean_matrix(traces: list[ChainTrace], data: FlowDataset, chunk: int = 2048) -> np.ndarray:
    """Posterior-mean log intensity for every ordered pair of ``data``.

    Uses the dataset's populations and distances; the diagonal is NaN.
    """
    _check_traces(traces)
    first = traces[0]
    if data.location_ids != first.location_ids:
        raise DiagnosticsError("dataset locations do not match the traces")
    S = data.n_locations
    head = n_head_columns(first.case)
    mu, beta, theta, routing, _ = _pooled_arrays(traces)
    R = mu.shape[0]
    lp = data.log_population
    D = data.log_distance  # (S, S), NaN diagonal
    total = np.zeros((S, S))
    for start in range(0, R, chunk):
        sl = slice(start, min(start + chunk, R))
        mu_c = mu[sl]
        beta_c = beta[sl]
        theta_c = theta[sl]
        slope = beta_c[:, head : head + S]  # (r, S)
        b4 = beta_c[:, head + S :]
        if first.case == "I":
            src_base = mu_c[:, None] + beta_c[:, 0:1] * lp[None, :]  # (r, S)
            dst_coef = np.broadcast_to(beta_c[:, 1:2], (sl.stop - sl.start, S))
        else:
            g = routing[sl]
            src_base = mu_c[:, None] + np.where(
                g, beta_c[:, 2:3] * lp[None, :] + beta_c[:, 4:5], beta_c[:, 0:1] * lp[None, :]
            )
            dst_coef = np.where(g, beta_c[:, 3:4], beta_c[:, 1:2])
        with np.errstate(invalid="ignore"):
            h = np.maximum(D[None, :, :] - theta_c[:, :, None], 0.0)
            pred = (
                src_base[:, :, None]
                + dst_coef[:, :, None] * lp[None, None, :]
                + slope[:, :, None] * D[None, :, :]
                + b4[:, :, None] * h
            )
        total += np.nansum(pred, axis=0)
    out = total / R
    np.fill_diagonal(out, np.nan)
    return out


def prediction_error(pred_matrix: np.ndarray, replicates: list[FlowDataset]) -> float:
    """Mean squared error of point predictions against replicate outcomes.

    ``pred_matrix`` holds predicted log intensity per ordered pair; each
    replicate must cover the same locations.  Squared errors pool over all
    replicate pairs.
    """
    if not replicates:
        raise DiagnosticsError("need at least one replicate dataset")
    S = replicates[0].n_locations
    if pred_matrix.shape != (S, S):
        raise DiagnosticsError(f"prediction matrix shape {pred_matrix.shape} does not match S={S}")
    ids = replicates[0].location_ids
    sq_sum = 0.0
    n = 0
    for rep in replicates:
        if rep.location_ids != ids:
            raise DiagnosticsError("replicate covers different locations than predictions")
        pred = pred_matrix[rep.source_index, rep.dest_index]
        if np.any(~np.isfinite(pred)):
            raise DiagnosticsError("replicate contains a pair without a finite prediction")
        sq_sum += float(((rep.outcome - pred) ** 2).sum())
        n += rep.n_pairs
    return sq_sum / n
