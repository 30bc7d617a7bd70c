"""Numerically stable log-space reductions and uniform-grid plumbing.

Everything downstream (mixture densities, multisample data terms, the grid
fixed-point solver) funnels through the reductions here, so they are written
to survive -inf entries (zero likelihood) without overflow or NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Grid1D",
    "DegenerateDensityError",
    "log_sum_exp",
    "log_mean_exp",
    "log_avg_exp_tempered",
    "normalize_log_density",
]


class DegenerateDensityError(ValueError):
    """Raised when a log-density has no finite mass to normalize."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1-D grid including both endpoints."""

    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"grid requires lo < hi, got [{self.lo}, {self.hi}]")
        if self.count < 2:
            raise ValueError(f"grid requires count >= 2, got {self.count}")

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.count - 1)

    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.count)


def _check_vector(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("reduction over an empty vector")
    if np.isnan(v).any():
        raise ValueError("NaN entries are not a valid log-value input")
    return v


def log_sum_exp(v, axis: int | None = None) -> float | np.ndarray:
    """log(sum(exp(v))) by max-shifting; -inf entries contribute zero mass."""
    v = _check_vector(v)
    vmax = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(vmax), vmax, 0.0)
    with np.errstate(divide="ignore"):
        out = shift + np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True))
    out = np.where(np.isfinite(vmax), out, -np.inf)
    out = np.squeeze(out, axis=(axis if axis is not None else tuple(range(out.ndim))))
    return float(out) if out.ndim == 0 else out


def log_mean_exp(v, axis: int | None = None) -> float | np.ndarray:
    """log((1/n) sum(exp(v))); bounded by [max(v) - log n, max(v)]."""
    v = _check_vector(v)
    n = v.size if axis is None else v.shape[axis]
    return log_sum_exp(v, axis=axis) - np.log(n)


def log_avg_exp_tempered(v, phi: float) -> float:
    """Tempered log-average-exp: (1/phi) log-mean-exp(phi * v), mean at phi = 0.

    For phi in [0, 1] the negation upper-bounds -log_mean_exp(v), which is
    what makes the tempered data term a valid surrogate.
    """
    if not 0.0 <= phi <= 1.0:
        raise ValueError(f"phi must lie in [0, 1], got {phi}")
    v = _check_vector(v)
    if phi == 0.0:
        return float(np.mean(v))
    return float(log_mean_exp(phi * v)) / phi


def normalize_log_density(grid: Grid1D, logvals) -> "GridDensity":
    """Normalize log-density values on a grid so rectangle-rule mass is 1.

    Normalization happens in log space, so any common additive offset in
    ``logvals`` is irrelevant.
    """
    from .distributions import GridDensity

    logvals = np.asarray(logvals, dtype=np.float64)
    if logvals.shape != (grid.count,):
        raise ValueError(
            f"expected {grid.count} log-values for the grid, got shape {logvals.shape}"
        )
    if np.isnan(logvals).any():
        raise ValueError("NaN entries are not a valid log-density input")
    if np.all(np.isneginf(logvals)):
        raise DegenerateDensityError("all log-density values are -inf")
    log_norm = log_sum_exp(logvals) + np.log(grid.step)
    probs = np.exp(logvals - log_norm)
    return GridDensity(grid=grid, probs=probs)
