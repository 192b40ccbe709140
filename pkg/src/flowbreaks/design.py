"""Piecewise design matrices for break-point distance-decay regression.

Every retained ordered pair (i -> j) contributes one row.  Besides the two
population covariates, each source location owns a distance-slope column
and (unless suppressed) a hinge column that activates beyond the source's
break-point.  The intercept is handled outside the matrix by the sampler,
so no constant column appears here.

Two model cases are supported:

* case "I": every non-boundary source keeps its hinge column; population
  effects are shared across sources.  Columns: 2 + 2S - b.
* case "II": sources are split into a no-break group (reference) and a
  with-break group according to ``eta``; the two groups get separate
  population effects and the with-break group gets an intercept-offset
  column.  Columns: 5 + 2S - b.

``b`` counts boundary sources: those whose current break-point leaves fewer
than a minimum fraction of their observed pairs on either side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flowdata import FlowDataset

CASES = ("I", "II")
BOUNDARY_FRACTION = 0.05


class DesignError(ValueError):
    """Raised for invalid design-matrix requests."""


def hinge(log_d, theta):
    """Hinge covariate max(log_d - theta, 0), elementwise."""
    return np.maximum(np.asarray(log_d, dtype=float) - theta, 0.0)


@dataclass(frozen=True)
class InclusionState:
    """Which sources currently have an active break term.

    eta[i] flags source i as belonging to the with-break group; boundary[i]
    flags a break-point too close to the edge of source i's observed
    distance range, which forces its hinge column out of the model.
    """

    eta: np.ndarray
    boundary: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=bool)
        boundary = np.asarray(self.boundary, dtype=bool)
        if eta.shape != boundary.shape or eta.ndim != 1:
            raise DesignError("eta and boundary must be 1-d arrays of equal length")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "boundary", boundary)

    @property
    def b(self) -> int:
        return int(self.boundary.sum())

    @property
    def n_sources(self) -> int:
        return self.eta.shape[0]


def _ceil_count(fraction: float, n: int) -> int:
    # eps guards float drift in fraction*n when the product is an exact integer
    return int(math.ceil(fraction * n - 1e-9))


def boundary_check(
    data: FlowDataset, theta_i: float, source: int, fraction: float = BOUNDARY_FRACTION
) -> bool:
    """True when theta_i leaves fewer than ceil(fraction*n) of source's pairs
    strictly on either side.  Pairs exactly at theta_i count to neither side."""
    if not 0 <= source < data.n_locations:
        raise DesignError(f"source index {source} out of range")
    rows = data.source_rows(source)
    d = data.pair_log_distance[rows]
    n = d.shape[0]
    if n == 0:
        return True
    need = _ceil_count(fraction, n)
    return bool((d < theta_i).sum() < need or (d > theta_i).sum() < need)


def boundary_mask(data: FlowDataset, theta: np.ndarray, fraction: float = BOUNDARY_FRACTION) -> np.ndarray:
    """Vectorized boundary_check over all sources."""
    S = data.n_locations
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (S,):
        raise DesignError(f"theta must have shape ({S},)")
    d = data.pair_log_distance
    src = data.source_index
    t = theta[src]
    n_rows = np.bincount(src, minlength=S)
    left = np.bincount(src[d < t], minlength=S)
    right = np.bincount(src[d > t], minlength=S)
    need = np.ceil(fraction * n_rows - 1e-9).astype(int)
    mask = (left < need) | (right < need)
    mask[n_rows == 0] = True
    return mask


def full_column_map(case: str, S: int) -> tuple[str, ...]:
    """Column labels of the untrimmed layout (boundary hinges included)."""
    if case == "I":
        head = ["pop_src", "pop_dst"]
    elif case == "II":
        head = ["pop_src:g0", "pop_dst:g0", "pop_src:g1", "pop_dst:g1", "intercept:g1"]
    else:
        raise DesignError(f"case must be one of {CASES}, got {case!r}")
    return tuple(head + [f"slope:{i}" for i in range(S)] + [f"hinge:{i}" for i in range(S)])


def n_head_columns(case: str) -> int:
    return 2 if case == "I" else 5


def fill_design(X: np.ndarray, data: FlowDataset, theta: np.ndarray, incl: InclusionState, case: str) -> None:
    """Fill a preallocated (n, head + 2S) buffer with the full layout.

    Hinge values are written for every source, boundary or not; trimming is
    the caller's concern.  For case II the population/intercept routing uses
    ``incl.eta`` as the group assignment.
    """
    S = data.n_locations
    src = data.source_index
    dst = data.dest_index
    logd = data.pair_log_distance
    ps = data.log_population[src]
    pd_ = data.log_population[dst]
    head = n_head_columns(case)

    if case == "I":
        X[:, 0] = ps
        X[:, 1] = pd_
    else:
        g = incl.eta[src]
        X[:, 0] = np.where(g, 0.0, ps)
        X[:, 1] = np.where(g, 0.0, pd_)
        X[:, 2] = np.where(g, ps, 0.0)
        X[:, 3] = np.where(g, pd_, 0.0)
        X[:, 4] = g.astype(float)

    rows = np.arange(data.n_pairs)
    X[:, head : head + 2 * S] = 0.0
    X[rows, head + src] = logd
    X[rows, head + S + src] = hinge(logd, theta[src])


@dataclass(frozen=True)
class DesignMatrix:
    """Covariate matrix in canonical pair order plus its column labels."""

    matrix: np.ndarray
    column_map: tuple[str, ...]
    case: str
    incl: InclusionState

    @property
    def n_boundary(self) -> int:
        return self.incl.b

    def column(self, label: str) -> int:
        try:
            return self.column_map.index(label)
        except ValueError:
            raise DesignError(f"no column labelled {label!r}") from None

    def to_debug_text(self) -> str:
        """Matrix as delimited text with a column-label header row."""
        lines = [",".join(self.column_map)]
        for row in self.matrix:
            lines.append(",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def build_design(
    data: FlowDataset, theta: np.ndarray, incl: InclusionState, case: str
) -> DesignMatrix:
    """Construct the design matrix for the given break-points and inclusion.

    Boundary sources' hinge columns are dropped, giving 2 + 2S - b columns
    in case I and 5 + 2S - b in case II.  Rows follow the dataset's
    canonical (source, destination) pair order.
    """
    if case not in CASES:
        raise DesignError(f"case must be one of {CASES}, got {case!r}")
    S = data.n_locations
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (S,):
        raise DesignError(f"theta must have shape ({S},), got {theta.shape}")
    if incl.n_sources != S:
        raise DesignError("inclusion state size does not match dataset")
    head = n_head_columns(case)
    X = np.empty((data.n_pairs, head + 2 * S))
    fill_design(X, data, theta, incl, case)
    labels = full_column_map(case, S)
    keep = list(range(head + S)) + [head + S + i for i in range(S) if not incl.boundary[i]]
    return DesignMatrix(
        matrix=X[:, keep],
        column_map=tuple(labels[c] for c in keep),
        case=case,
        incl=incl,
    )
