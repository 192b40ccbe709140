"""Minimal ordinary least squares with explicit rank diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


class RankDeficientError(ValueError):
    """OLS design has linearly dependent columns."""


@dataclass(frozen=True)
class OLSResult:
    coef: np.ndarray
    rss: float
    rank: int
    stderr: np.ndarray | None = None


def suspect_columns(X: np.ndarray, names: list[str] | None = None) -> list[str]:
    """Names of columns implicated in a rank deficiency (pivoted QR tail)."""
    n, p = X.shape
    _, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    rank = int((diag > tol).sum())
    idx = sorted(piv[rank:].tolist())
    if names is None:
        names = [f"col{j}" for j in range(p)]
    return [names[j] for j in idx]


def ols(
    X: np.ndarray,
    y: np.ndarray,
    names: list[str] | None = None,
    with_stderr: bool = False,
) -> OLSResult:
    """Least squares fit requiring full column rank.

    Raises RankDeficientError naming the dependent columns otherwise.
    """
    n, p = X.shape
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        bad = suspect_columns(X, names)
        raise RankDeficientError(f"design is rank deficient (rank {rank} < {p}); suspect columns: {bad}")
    resid = y - X @ coef
    rss = float(resid @ resid)
    stderr = None
    if with_stderr:
        dof = n - p
        sigma2 = rss / dof if dof > 0 else np.nan
        XtX_inv = np.linalg.inv(X.T @ X)
        stderr = np.sqrt(np.clip(sigma2 * np.diag(XtX_inv), 0.0, np.inf))
    return OLSResult(coef=coef, rss=rss, rank=rank, stderr=stderr)
