"""MCMC engine for break-point distance-decay regression.

One outer iteration updates, in order,

1. every source's break-point by a random-walk Metropolis move whose
   proposal is Normal(current, sigma2_theta), rejecting proposals outside
   the source's observed log-distance range;
2. the boundary screen: sources whose break-point strands fewer than 5% of
   their pairs on either side lose their hinge term (coefficient forced to
   zero) until the break-point moves back inside;
3. the coefficient block: the design matrix is rebuilt at the new
   break-points and a Bayesian LASSO Gibbs sweep runs ``inner_h`` times.
   Coefficients get the scale-mixture (double-exponential) shrinkage prior;
   the intercept is unpenalized with a flat prior and the error variance
   has the scale-invariant prior 1/sigma2.  In case II each sweep also
   makes one reversible-jump proposal toggling a uniformly chosen hinge
   column in or out of the model, accepted by the Metropolis-Hastings-Green
   ratio with a Normal birth proposal matched to the conditional likelihood
   (the dimension-matching map is the identity, so its Jacobian is 1).

Case I keeps every non-boundary hinge in the model; case II additionally
tracks which sources belong to the with-break group, giving that group its
own intercept offset and population effects.  The group routing used to
build the matrix is the inclusion pattern from the previous iteration, as
the pattern produced by a sweep only takes structural effect at the next
rebuild.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .design import (
    CASES,
    BOUNDARY_FRACTION,
    InclusionState,
    boundary_mask,
    full_column_map,
    n_head_columns,
)
from .flowdata import FlowDataset
from .initialize import GRID_SIZE, InitialValues, initial_values

DEFAULT_INNER_H = {"I": 2, "II": 3}
JITTER_THETA_SD = 0.1
JITTER_BETA_RANGE = (0.8, 1.2)


class SamplerError(RuntimeError):
    """Raised when a chain cannot proceed (for example a singular precision)."""


@dataclass(frozen=True)
class SamplerConfig:
    """Run-length, proposal, and prior settings for one sampler run.

    ``inner_h`` defaults to 2 Gibbs sweeps per outer iteration in case I
    and 3 in case II; case II requires at least 3 so that a coefficient
    zeroed by a jump is not frozen by stale conditioning within the block.
    The ``*_fixed`` and ``freeze_*`` fields pin parts of the state for
    validation runs; ``lambda2_fixed = 0`` turns the shrinkage prior off
    entirely (flat prior on coefficients).
    """

    outer_iterations: int = 15000
    burn_in: int = 5000
    thin: int = 1
    chains: int = 4
    sigma2_theta: float = 0.2
    inner_h: int | None = None
    lambda_shape: float = 1.0
    lambda_rate: float = 0.1
    seed: int = 0
    boundary_fraction: float = BOUNDARY_FRACTION
    grid_size: int = GRID_SIZE
    workers: int = 1
    lambda2_fixed: float | None = None
    sigma2_fixed: float | None = None
    mu_fixed: float | None = None
    freeze_theta: bool = False
    freeze_inclusion: bool = False

    def __post_init__(self):
        if self.outer_iterations < 1:
            raise ValueError("outer_iterations must be >= 1")
        if not 0 <= self.burn_in < self.outer_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < outer_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.sigma2_theta <= 0:
            raise ValueError("sigma2_theta must be positive")
        if self.inner_h is not None and self.inner_h < 1:
            raise ValueError("inner_h must be >= 1")
        if self.lambda_shape <= 0 or self.lambda_rate <= 0:
            raise ValueError("lambda hyperprior parameters must be positive")
        if not 0 < self.boundary_fraction < 1:
            raise ValueError("boundary_fraction must be in (0, 1)")
        if self.lambda2_fixed is not None and self.lambda2_fixed < 0:
            raise ValueError("lambda2_fixed must be >= 0")
        if self.sigma2_fixed is not None and self.sigma2_fixed <= 0:
            raise ValueError("sigma2_fixed must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolved_inner_h(self, case: str) -> int:
        h = DEFAULT_INNER_H[case] if self.inner_h is None else self.inner_h
        if case == "II" and h < 3:
            raise ValueError("case II requires inner_h >= 3")
        if case == "I" and h < 2:
            raise ValueError("case I requires inner_h >= 2")
        return h


@dataclass
class ParameterState:
    """Full sampler state in the untrimmed column layout.

    ``beta`` and ``tau2`` are indexed by ``column_map``; inactive columns
    hold coefficient zero and their tau2 entry is meaningless.  ``inclusion``
    is the pattern (which sources currently have a nonzero hinge term) and
    ``eta_routing`` the grouping the current design matrix was built with.
    """

    case: str
    mu: float
    beta: np.ndarray
    theta: np.ndarray
    sigma2: float
    lambda2: float
    tau2: np.ndarray
    inclusion: InclusionState
    eta_routing: np.ndarray
    column_map: tuple[str, ...] = field(repr=False)

    @property
    def eta(self) -> np.ndarray:
        return self.inclusion.eta

    @property
    def boundary(self) -> np.ndarray:
        return self.inclusion.boundary

    def group_intercepts(self) -> tuple[float, float]:
        """(no-break group, with-break group) intercepts; equal in case I."""
        if self.case == "I":
            return self.mu, self.mu
        off = self.beta[self.column_map.index("intercept:g1")]
        return self.mu, self.mu + off


@dataclass
class ChainTrace:
    """Stored post-burn-in states of one chain plus acceptance bookkeeping."""

    case: str
    chain_index: int
    location_ids: tuple[str, ...]
    column_map: tuple[str, ...]
    iterations: np.ndarray
    mu: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    sigma2: np.ndarray
    lambda2: np.ndarray
    eta: np.ndarray
    eta_routing: np.ndarray
    boundary: np.ndarray
    model_labels: np.ndarray
    accept_counts: np.ndarray
    n_proposals: np.ndarray
    config: SamplerConfig

    @property
    def n_states(self) -> int:
        return self.iterations.shape[0]

    def acceptance_rate(self) -> np.ndarray:
        """Per-source Metropolis acceptance over post-burn-in proposals."""
        return self.accept_counts / np.maximum(self.n_proposals, 1)


def model_labels_from_eta(eta: np.ndarray) -> np.ndarray:
    """Stable 64-bit label per inclusion pattern row."""
    uniq, inverse = np.unique(eta, axis=0, return_inverse=True)
    labels = np.empty(uniq.shape[0], dtype=np.uint64)
    for k, row in enumerate(uniq):
        digest = hashlib.blake2b(np.packbits(row).tobytes(), digest_size=8).digest()
        labels[k] = np.frombuffer(digest, dtype=np.uint64)[0]
    return labels[inverse]


class _ChainRunner:
    """Preallocated buffers and cached quantities for one chain."""

    def __init__(self, data: FlowDataset, case: str, config: SamplerConfig):
        self.data = data
        self.case = case
        self.config = config
        self.S = data.n_locations
        self.n = data.n_pairs
        self.head = n_head_columns(case)
        self.p_full = self.head + 2 * self.S
        self.column_map = full_column_map(case, self.S)
        self.y = data.outcome
        self.src = data.source_index
        self.dst = data.dest_index
        self.logd = data.pair_log_distance
        self.ps = data.log_population[self.src]
        self.pd = data.log_population[self.dst]
        ranges = data.theta_ranges()
        self.theta_lo = ranges[:, 0]
        self.theta_hi = ranges[:, 1]
        self.n_rows_per_source = np.bincount(self.src, minlength=self.S)
        self.boundary_need = np.ceil(config.boundary_fraction * self.n_rows_per_source - 1e-9).astype(int)
        self.X = np.zeros((self.n, self.p_full))
        rows = np.arange(self.n)
        self.X[rows, self.head + self.src] = self.logd
        if case == "I":
            self.X[:, 0] = self.ps
            self.X[:, 1] = self.pd
        self.hinge_flat = rows * self.p_full + (self.head + self.S + self.src)
        self.slope_cols = np.arange(self.head, self.head + self.S)
        self.hinge_cols = np.arange(self.head + self.S, self.p_full)
        self.flat_prior = config.lambda2_fixed == 0.0
        self.has_rows = self.n_rows_per_source > 0
        self.inner_h = config.resolved_inner_h(case)
        self.y_mean = float(self.y.mean())
        # recomputed every outer iteration
        self.G = np.empty((self.p_full, self.p_full))
        self.Xty = np.empty(self.p_full)
        self.col_sums = np.empty(self.p_full)

    # --- outer-iteration pieces -------------------------------------------

    def base_predictor(self, state: ParameterState) -> np.ndarray:
        """Everything except the hinge contribution, per retained pair."""
        b = state.beta
        if self.case == "I":
            base = state.mu + b[0] * self.ps + b[1] * self.pd
        else:
            g = state.eta_routing[self.src]
            base = state.mu + np.where(
                g,
                b[2] * self.ps + b[3] * self.pd + b[4],
                b[0] * self.ps + b[1] * self.pd,
            )
        return base + b[self.slope_cols][self.src] * self.logd

    def metropolis_theta(self, state: ParameterState, rng: np.random.Generator, tallies, proposals) -> None:
        theta = state.theta
        beta4 = state.beta[self.hinge_cols]
        b4r = beta4[self.src]
        rmh = self.y - self.base_predictor(state)
        cur = rmh - b4r * np.maximum(self.logd - theta[self.src], 0.0)
        rss_cur = np.bincount(self.src, weights=cur * cur, minlength=self.S)
        prop = theta + math.sqrt(self.config.sigma2_theta) * rng.standard_normal(self.S)
        with np.errstate(invalid="ignore"):
            in_range = (prop > self.theta_lo) & (prop < self.theta_hi)
        cand = rmh - b4r * np.maximum(self.logd - prop[self.src], 0.0)
        rss_prop = np.bincount(self.src, weights=cand * cand, minlength=self.S)
        log_ratio = (rss_cur - rss_prop) / (2.0 * state.sigma2)
        accept = in_range & (np.log(rng.random(self.S)) < log_ratio)
        theta[accept] = prop[accept]
        tallies += accept
        proposals += self.has_rows  # sources with no pairs propose nothing

    def boundary_screen(self, state: ParameterState) -> None:
        t = state.theta[self.src]
        left = np.bincount(self.src[self.logd < t], minlength=self.S)
        right = np.bincount(self.src[self.logd > t], minlength=self.S)
        boundary = (left < self.boundary_need) | (right < self.boundary_need)
        boundary[self.n_rows_per_source == 0] = True
        newly_zero = boundary & (state.beta[self.hinge_cols] != 0.0)
        state.beta[self.hinge_cols[newly_zero]] = 0.0
        if self.case == "I":
            eta = ~boundary
        else:
            eta = state.eta & ~boundary
        state.inclusion = InclusionState(eta=eta, boundary=boundary)

    def rebuild(self, state: ParameterState) -> None:
        if self.case == "II":
            state.eta_routing = state.eta.copy()
            g = state.eta_routing[self.src]
            self.X[:, 0] = np.where(g, 0.0, self.ps)
            self.X[:, 1] = np.where(g, 0.0, self.pd)
            self.X[:, 2] = np.where(g, self.ps, 0.0)
            self.X[:, 3] = np.where(g, self.pd, 0.0)
            self.X[:, 4] = g.astype(float)
        self.X.flat[self.hinge_flat] = np.maximum(self.logd - state.theta[self.src], 0.0)
        np.dot(self.X.T, self.X, out=self.G)
        np.dot(self.y, self.X, out=self.Xty)
        self.X.sum(axis=0, out=self.col_sums)

    def active_columns(self, state: ParameterState) -> np.ndarray:
        mask = np.ones(self.p_full, dtype=bool)
        mask[self.hinge_cols] = state.eta & ~state.boundary
        # structurally empty columns (empty source or group) stay out
        mask &= np.diagonal(self.G) > 0.0
        return np.flatnonzero(mask)

    def draw_beta(self, state: ParameterState, active: np.ndarray, rng) -> None:
        dinv = np.zeros(active.shape[0]) if self.flat_prior else 1.0 / state.tau2[active]
        cs = self.col_sums[active]
        A = self.G[np.ix_(active, active)].copy()
        if self.config.mu_fixed is None:
            # the flat-prior intercept is integrated out of this draw
            # (centered Gram), which decouples it from near-constant columns
            A -= np.outer(cs, cs) / self.n
            rhs = self.Xty[active] - self.y_mean * cs
        else:
            rhs = self.Xty[active] - state.mu * cs
        A[np.diag_indices_from(A)] += dinv
        try:
            upper, _ = scipy.linalg.cho_factor(A, lower=False, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(A))
            raise SamplerError(f"coefficient precision not positive definite (cond={cond:.3e})") from exc
        mean = scipy.linalg.cho_solve((upper, False), rhs, check_finite=False)
        z = rng.standard_normal(active.shape[0])
        draw = mean + math.sqrt(state.sigma2) * scipy.linalg.solve_triangular(
            upper, z, lower=False, check_finite=False
        )
        state.beta.fill(0.0)
        state.beta[active] = draw

    def gibbs_sweep(self, state: ParameterState, rng: np.random.Generator) -> None:
        active = self.active_columns(state)
        self.draw_beta(state, active, rng)
        fitted = self.X @ state.beta
        resid0 = self.y - fitted
        if self.config.mu_fixed is None:
            state.mu = float(resid0.mean() + math.sqrt(state.sigma2 / self.n) * rng.standard_normal())
        resid = resid0 - state.mu
        rss = float(resid @ resid)
        beta_a = state.beta[active]
        if self.config.sigma2_fixed is None:
            if self.flat_prior:
                shape = 0.5 * self.n
                rate = 0.5 * rss
            else:
                shape = 0.5 * (self.n + active.shape[0])
                rate = 0.5 * (rss + float(beta_a @ (beta_a / state.tau2[active])))
            state.sigma2 = rate / rng.gamma(shape)
        if not self.flat_prior:
            self._draw_tau2(state, active, rng)
            if self.config.lambda2_fixed is None:
                p = active.shape[0]
                rate = 0.5 * state.tau2[active].sum() + self.config.lambda_rate
                state.lambda2 = rng.gamma(p + self.config.lambda_shape) / rate
        if self.case == "II" and not self.config.freeze_inclusion:
            self._rj_toggle(state, rng)

    def _draw_tau2(self, state: ParameterState, active: np.ndarray, rng) -> None:
        beta_a = state.beta[active]
        lam2 = state.lambda2
        small = np.abs(beta_a) < 1e-100
        mean = np.sqrt(lam2 * state.sigma2) / np.where(small, 1.0, np.abs(beta_a))
        dinv = rng.wald(mean, lam2)
        tau2 = 1.0 / np.maximum(dinv, 1e-300)
        if np.any(small):
            # beta ~ 0 limit: tau2 | beta=0 is Gamma(1/2, rate lambda2/2)
            tau2[small] = rng.gamma(0.5, 2.0 / lam2, size=int(small.sum()))
        state.tau2[active] = tau2

    def _rj_toggle(self, state: ParameterState, rng: np.random.Generator) -> None:
        eligible = np.flatnonzero(~state.boundary & self.has_rows)
        if eligible.size == 0:
            return
        i = int(eligible[rng.integers(eligible.size)])
        col = self.hinge_cols[i]
        xtx = self.G[col, col]
        if xtx <= 0.0:
            return
        lam = math.sqrt(state.lambda2)
        sig = math.sqrt(state.sigma2)
        log_de_const = math.log(lam / (2.0 * sig))
        fitted = self.X @ state.beta
        v_cur = state.beta[col]
        # residual with column i's contribution removed
        r_noj = self.y - state.mu - fitted + self.X[:, col] * v_cur
        xtr = float(self.X[:, col] @ r_noj)
        m_j = xtr / xtx
        s2_j = state.sigma2 / xtx
        if state.eta[i]:
            v = v_cur
            delta_ll = -(v * xtr - 0.5 * v * v * xtx) / state.sigma2
            log_q = -0.5 * math.log(2.0 * math.pi * s2_j) - 0.5 * (v - m_j) ** 2 / s2_j
            log_de = log_de_const - lam * abs(v) / sig
            log_alpha = delta_ll + log_q - log_de
            if math.log(rng.random()) < log_alpha:
                state.beta[col] = 0.0
                eta = state.eta.copy()
                eta[i] = False
                state.inclusion = InclusionState(eta=eta, boundary=state.boundary)
        else:
            v = m_j + math.sqrt(s2_j) * rng.standard_normal()
            delta_ll = (v * xtr - 0.5 * v * v * xtx) / state.sigma2
            log_q = -0.5 * math.log(2.0 * math.pi * s2_j) - 0.5 * (v - m_j) ** 2 / s2_j
            log_de = log_de_const - lam * abs(v) / sig
            log_alpha = delta_ll + log_de - log_q
            if math.log(rng.random()) < log_alpha:
                state.beta[col] = v
                # fresh scale for the newborn coefficient from its conditional
                mean = math.sqrt(state.lambda2 * state.sigma2) / max(abs(v), 1e-100)
                state.tau2[col] = 1.0 / max(float(rng.wald(mean, state.lambda2)), 1e-300)
                eta = state.eta.copy()
                eta[i] = True
                state.inclusion = InclusionState(eta=eta, boundary=state.boundary)

    def outer_iteration(self, state: ParameterState, rng, tallies, proposals) -> None:
        if not self.config.freeze_theta:
            self.metropolis_theta(state, rng, tallies, proposals)
            self.boundary_screen(state)
        self.rebuild(state)
        for _ in range(self.inner_h):
            self.gibbs_sweep(state, rng)


def _initial_state(
    data: FlowDataset, case: str, config: SamplerConfig, init: InitialValues, chain_index: int, rng
) -> ParameterState:
    theta = init.theta.copy()
    beta = init.beta.copy()
    S = data.n_locations
    if chain_index > 0:
        ranges = data.theta_ranges()
        jitter = rng.normal(0.0, JITTER_THETA_SD, size=S)
        cand = theta + jitter
        for _ in range(100):
            with np.errstate(invalid="ignore"):
                bad = ~((cand > ranges[:, 0]) & (cand < ranges[:, 1])) & np.isfinite(ranges[:, 0])
            if not bad.any():
                break
            cand[bad] = theta[bad] + rng.normal(0.0, JITTER_THETA_SD, size=int(bad.sum()))
        with np.errstate(invalid="ignore"):
            still = ~((cand > ranges[:, 0]) & (cand < ranges[:, 1])) & np.isfinite(ranges[:, 0])
        cand[still] = theta[still]
        theta = np.where(np.isfinite(ranges[:, 0]), cand, theta)
        beta = beta * rng.uniform(*JITTER_BETA_RANGE, size=beta.shape)
    boundary = boundary_mask(data, theta, config.boundary_fraction)
    eta = (init.eta if case == "II" else np.ones(S, dtype=bool)) & ~boundary
    head = n_head_columns(case)
    hinge_cols = np.arange(head + S, head + 2 * S)
    beta[hinge_cols[~eta]] = 0.0
    sigma2 = config.sigma2_fixed if config.sigma2_fixed is not None else init.sigma2
    lambda2 = config.lambda2_fixed if config.lambda2_fixed is not None else 1.0
    mu = config.mu_fixed if config.mu_fixed is not None else init.mu
    return ParameterState(
        case=case,
        mu=float(mu),
        beta=beta,
        theta=theta,
        sigma2=float(sigma2),
        lambda2=float(lambda2),
        tau2=np.ones(beta.shape[0]),
        inclusion=InclusionState(eta=eta, boundary=boundary),
        eta_routing=eta.copy(),
        column_map=full_column_map(case, S),
    )


def run_single_chain(
    data: FlowDataset,
    case: str,
    config: SamplerConfig,
    init: InitialValues,
    chain_index: int,
    seed_seq: np.random.SeedSequence,
) -> ChainTrace:
    """Run one chain and return its post-burn-in, thinned trace."""
    rng = np.random.default_rng(seed_seq)
    runner = _ChainRunner(data, case, config)
    state = _initial_state(data, case, config, init, chain_index, rng)
    n_keep = (config.outer_iterations - config.burn_in + config.thin - 1) // config.thin
    S, p = runner.S, runner.p_full
    out = {
        "iterations": np.empty(n_keep, dtype=np.int64),
        "mu": np.empty(n_keep),
        "beta": np.empty((n_keep, p)),
        "theta": np.empty((n_keep, S)),
        "sigma2": np.empty(n_keep),
        "lambda2": np.empty(n_keep),
        "eta": np.empty((n_keep, S), dtype=bool),
        "eta_routing": np.empty((n_keep, S), dtype=bool),
        "boundary": np.empty((n_keep, S), dtype=bool),
    }
    tallies = np.zeros(S, dtype=np.int64)
    proposals = np.zeros(S, dtype=np.int64)
    k = 0
    for t in range(1, config.outer_iterations + 1):
        in_tail = t > config.burn_in
        if t == config.burn_in + 1:
            # acceptance is reported over post-burn-in proposals only
            tallies.fill(0)
            proposals.fill(0)
        runner.outer_iteration(state, rng, tallies, proposals)
        if in_tail and (t - config.burn_in - 1) % config.thin == 0:
            out["iterations"][k] = t
            out["mu"][k] = state.mu
            out["beta"][k] = state.beta
            out["theta"][k] = state.theta
            out["sigma2"][k] = state.sigma2
            out["lambda2"][k] = state.lambda2
            out["eta"][k] = state.eta
            out["eta_routing"][k] = state.eta_routing
            out["boundary"][k] = state.boundary
            k += 1
    assert k == n_keep
    return ChainTrace(
        case=case,
        chain_index=chain_index,
        location_ids=data.location_ids,
        column_map=runner.column_map,
        model_labels=model_labels_from_eta(out["eta"]),
        accept_counts=tallies,
        n_proposals=proposals,
        config=config,
        **out,
    )


def _run_chain_job(args):
    return run_single_chain(*args)


def run_chains(
    data: FlowDataset,
    case: str,
    config: SamplerConfig,
    init: InitialValues | None = None,
) -> list[ChainTrace]:
    """Run ``config.chains`` chains from jittered starting points.

    Chain 0 starts exactly at the initializer's values; later chains jitter
    the break-points by truncated Normal(0, 0.1^2) noise and scale each
    starting coefficient by Uniform(0.8, 1.2).  All randomness derives from
    ``config.seed`` through one spawned stream per chain, so results do not
    depend on scheduling; ``config.workers`` only sets process parallelism.
    """
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    config.resolved_inner_h(case)  # validate early
    if init is None:
        init = initial_values(data, case, config.grid_size)
    children = np.random.SeedSequence(config.seed).spawn(config.chains)
    jobs = [(data, case, config, init, c, children[c]) for c in range(config.chains)]
    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [run_single_chain(*job) for job in jobs]


def with_sweep_value(config: SamplerConfig, sigma2_theta: float) -> SamplerConfig:
    """Copy of the config at a different Metropolis proposal variance."""
    return replace(config, sigma2_theta=sigma2_theta)


def lasso_gibbs_block(
    X: np.ndarray,
    y: np.ndarray,
    sweeps: int,
    rng: np.random.Generator,
    mu: float = 0.0,
    sigma2: float = 1.0,
    lambda2: float = 1.0,
    update_mu: bool = True,
    update_sigma2: bool = True,
    update_lambda2: bool = True,
    flat_prior: bool = False,
    lambda_shape: float = 1.0,
    lambda_rate: float = 0.1,
) -> dict[str, np.ndarray]:
    """Reference shrinkage Gibbs sampler on a plain regression problem.

    Runs ``sweeps`` full sweeps of the scale-mixture hierarchy on the given
    design (without an intercept column; the unpenalized intercept ``mu`` is
    handled separately) and returns the sweep-by-sweep trace.  This is the
    readable single-matrix counterpart of the chain runner's fused
    coefficient block and draws in the same order from the same
    distributions, so the two can be cross-checked directly.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError(f"outcome length {y.shape} does not match {n} rows")
    G = X.T @ X
    if np.any(np.diagonal(G) <= 0.0):
        raise ValueError("design has an identically zero column")
    Xty = y @ X
    col_sums = X.sum(axis=0)
    if update_mu:
        # intercept integrated out of the coefficient draw (centered Gram)
        G = G - np.outer(col_sums, col_sums) / n
        rhs = Xty - float(y.mean()) * col_sums
    beta = np.zeros(p)
    tau2 = np.ones(p)
    out = {
        "mu": np.empty(sweeps),
        "beta": np.empty((sweeps, p)),
        "sigma2": np.empty(sweeps),
        "lambda2": np.empty(sweeps),
        "tau2": np.empty((sweeps, p)),
    }
    for t in range(sweeps):
        dinv = np.zeros(p) if flat_prior else 1.0 / tau2
        A = G.copy()
        A[np.diag_indices_from(A)] += dinv
        try:
            upper, _ = scipy.linalg.cho_factor(A, lower=False, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(A))
            raise SamplerError(f"coefficient precision not positive definite (cond={cond:.3e})") from exc
        mean = scipy.linalg.cho_solve(
            (upper, False), rhs if update_mu else Xty - mu * col_sums, check_finite=False
        )
        z = rng.standard_normal(p)
        beta = mean + math.sqrt(sigma2) * scipy.linalg.solve_triangular(
            upper, z, lower=False, check_finite=False
        )
        resid0 = y - X @ beta
        if update_mu:
            mu = float(resid0.mean() + math.sqrt(sigma2 / n) * rng.standard_normal())
        resid = resid0 - mu
        rss = float(resid @ resid)
        if update_sigma2:
            if flat_prior:
                shape, rate = 0.5 * n, 0.5 * rss
            else:
                shape = 0.5 * (n + p)
                rate = 0.5 * (rss + float(beta @ (beta / tau2)))
            sigma2 = rate / rng.gamma(shape)
        if not flat_prior:
            small = np.abs(beta) < 1e-100
            m = np.sqrt(lambda2 * sigma2) / np.where(small, 1.0, np.abs(beta))
            dinv = rng.wald(m, lambda2)
            tau2 = 1.0 / np.maximum(dinv, 1e-300)
            if np.any(small):
                # beta ~ 0 limit: tau2 | beta=0 is Gamma(1/2, rate lambda2/2)
                tau2[small] = rng.gamma(0.5, 2.0 / lambda2, size=int(small.sum()))
            if update_lambda2:
                lambda2 = rng.gamma(p + lambda_shape) / (0.5 * tau2.sum() + lambda_rate)
        out["mu"][t] = mu
        out["beta"][t] = beta
        out["sigma2"][t] = sigma2
        out["lambda2"][t] = lambda2
        out["tau2"][t] = tau2
    return out


def time_per_iteration(
    data: FlowDataset,
    case: str,
    config: SamplerConfig,
    iterations: int = 25,
    warmup: int = 5,
    repeats: int = 3,
) -> float:
    """Median wall-clock seconds per outer iteration, setup excluded.

    Advances one chain in place, timing batches of ``iterations`` full outer
    iterations after a warmup; state storage is skipped so the figure
    isolates the sampling work itself.
    """
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case!r}")
    init = initial_values(data, case, config.grid_size)
    runner = _ChainRunner(data, case, config)
    rng = np.random.default_rng(config.seed)
    state = _initial_state(data, case, config, init, 0, rng)
    tallies = np.zeros(runner.S, dtype=np.int64)
    proposals = np.zeros(runner.S, dtype=np.int64)
    for _ in range(warmup):
        runner.outer_iteration(state, rng, tallies, proposals)
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        for _ in range(iterations):
            runner.outer_iteration(state, rng, tallies, proposals)
        times.append((time.perf_counter() - t0) / iterations)
    return float(np.median(times))
