"""One-dimensional densities, grid/atomic posteriors, and KL divergences.

All types are immutable values. Sampling takes an explicit numpy Generator,
so concurrent use is safe as long as streams are not shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .numerics import Grid1D, log_sum_exp

__all__ = [
    "AbsoluteContinuityError",
    "Normal1D",
    "MixtureNormal1D",
    "GridDensity",
    "AtomicMixture",
    "MeanFieldGaussian",
    "kl_normal_normal",
    "kl_mean_field",
    "kl_iid_product",
    "kl_grid",
    "predictive_density",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class AbsoluteContinuityError(ValueError):
    """Raised when a KL divergence is requested against an unsupporting base."""


def _normal_logpdf(x, loc, scale):
    return -0.5 * _LOG_2PI - np.log(scale) - 0.5 * ((x - loc) / scale) ** 2


def _normal_cdf(x, loc, scale):
    return 0.5 * (1.0 + erf((x - loc) / (scale * np.sqrt(2.0))))


@dataclass(frozen=True)
class Normal1D:
    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def log_prob(self, x):
        return _normal_logpdf(np.asarray(x, dtype=np.float64), self.loc, self.scale)

    def pdf(self, x):
        return np.exp(self.log_prob(x))

    def cdf(self, x):
        return _normal_cdf(np.asarray(x, dtype=np.float64), self.loc, self.scale)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("sample count must be >= 1")
        return self.loc + self.scale * rng.standard_normal(k)

    def mean(self) -> float:
        return self.loc

    def var(self) -> float:
        return self.scale**2


@dataclass(frozen=True)
class MixtureNormal1D:
    weights: np.ndarray
    locs: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "locs", np.asarray(self.locs, dtype=np.float64))
        object.__setattr__(self, "scales", np.asarray(self.scales, dtype=np.float64))
        k = self.weights.shape[0]
        if k < 1 or self.locs.shape != (k,) or self.scales.shape != (k,):
            raise ValueError("weights, locs, scales must share one length >= 1")
        if np.any(self.weights <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1, got {self.weights.sum()}")
        if np.any(self.scales <= 0):
            raise ValueError("mixture scales must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def log_prob(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        comp = _normal_logpdf(x[..., None], self.locs, self.scales) + np.log(self.weights)
        out = log_sum_exp(comp, axis=-1)
        return out if np.ndim(out) else float(out)

    def pdf(self, x):
        return np.exp(self.log_prob(x))

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.sum(self.weights * _normal_cdf(x[..., None], self.locs, self.scales), axis=-1)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("sample count must be >= 1")
        idx = rng.choice(self.n_components, size=k, p=self.weights)
        return self.locs[idx] + self.scales[idx] * rng.standard_normal(k)

    def mean(self) -> float:
        return float(np.sum(self.weights * self.locs))

    def var(self) -> float:
        second = np.sum(self.weights * (self.scales**2 + self.locs**2))
        return float(second - self.mean() ** 2)


@dataclass(frozen=True)
class GridDensity:
    """Density represented by its values on a uniform grid (rectangle rule)."""

    grid: Grid1D
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=np.float64))
        if self.probs.shape != (self.grid.count,):
            raise ValueError("probs length must match grid count")
        if np.any(self.probs < 0):
            raise ValueError("grid density values must be non-negative")
        mass = float(np.sum(self.probs) * self.grid.step)
        if abs(mass - 1.0) > 1e-9:
            raise ValueError(f"grid density mass must be 1 +- 1e-9, got {mass}")

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        idx = np.clip(np.rint((x - self.grid.lo) / self.grid.step).astype(int), 0, self.grid.count - 1)
        with np.errstate(divide="ignore"):
            out = np.where(
                (x >= self.grid.lo) & (x <= self.grid.hi), np.log(self.probs[idx]), -np.inf
            )
        return out if out.ndim else float(out)

    def pdf(self, x):
        return np.exp(self.log_prob(x))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        # Discrete inverse-CDF over the grid atoms; no interpolation.
        if k < 1:
            raise ValueError("sample count must be >= 1")
        pmf = self.probs * self.grid.step
        pmf = pmf / pmf.sum()
        idx = rng.choice(self.grid.count, size=k, p=pmf)
        return self.grid.points()[idx]

    def mean(self) -> float:
        return float(np.sum(self.grid.points() * self.probs) * self.grid.step)

    def var(self) -> float:
        pts = self.grid.points()
        second = float(np.sum(pts**2 * self.probs) * self.grid.step)
        return second - self.mean() ** 2


@dataclass(frozen=True)
class AtomicMixture:
    """Weighted point masses (component_scale 0) or equal-scale normal comb."""

    weights: np.ndarray
    locs: np.ndarray
    component_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "locs", np.asarray(self.locs, dtype=np.float64))
        k = self.weights.shape[0]
        if k < 1 or self.locs.shape != (k,):
            raise ValueError("weights and locs must share one length >= 1")
        if np.any(self.weights <= 0):
            raise ValueError("atom weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"atom weights must sum to 1, got {self.weights.sum()}")
        if self.component_scale < 0:
            raise ValueError("component_scale must be >= 0")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def log_prob(self, x):
        if self.component_scale == 0.0:
            raise ValueError("point-mass comb has no density; use predictive_density")
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        comp = _normal_logpdf(x[..., None], self.locs, self.component_scale) + np.log(self.weights)
        out = log_sum_exp(comp, axis=-1)
        return out if np.ndim(out) else float(out)

    def pdf(self, x):
        return np.exp(self.log_prob(x))

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("sample count must be >= 1")
        idx = rng.choice(self.n_components, size=k, p=self.weights)
        out = self.locs[idx].astype(np.float64)
        if self.component_scale > 0.0:
            out = out + self.component_scale * rng.standard_normal(k)
        return out

    def mean(self) -> float:
        return float(np.sum(self.weights * self.locs))

    def var(self) -> float:
        second = np.sum(self.weights * (self.component_scale**2 + self.locs**2))
        return float(second - self.mean() ** 2)


@dataclass(frozen=True)
class MeanFieldGaussian:
    """Diagonal Gaussian over a flat parameter vector; scale_i = exp(raw_scale_i)."""

    locs: np.ndarray
    raw_scales: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "locs", np.asarray(self.locs, dtype=np.float64))
        object.__setattr__(self, "raw_scales", np.asarray(self.raw_scales, dtype=np.float64))
        if self.locs.ndim != 1 or self.raw_scales.shape != self.locs.shape:
            raise ValueError("locs and raw_scales must be matching 1-D vectors")
        if not np.all(np.isfinite(self.raw_scales)) or not np.all(np.isfinite(self.locs)):
            raise ValueError("mean-field parameters must be finite")

    @property
    def dim(self) -> int:
        return self.locs.shape[0]

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.raw_scales)

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        per_coord = _normal_logpdf(x, self.locs, self.scales)
        out = np.sum(per_coord, axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError("sample count must be >= 1")
        return self.locs + self.scales * rng.standard_normal((k, self.dim))

    def mean(self) -> np.ndarray:
        return self.locs.copy()


def kl_normal_normal(q: Normal1D, r: Normal1D) -> float:
    """Closed-form KL between 1-D normals, in nats."""
    return float(
        np.log(r.scale / q.scale)
        + (q.scale**2 + (q.loc - r.loc) ** 2) / (2.0 * r.scale**2)
        - 0.5
    )


def kl_mean_field(q: MeanFieldGaussian, r: MeanFieldGaussian) -> float:
    """Sum of coordinate-wise normal KLs (independence across coordinates)."""
    if q.dim != r.dim:
        raise ValueError("mean-field KL requires matching dimensions")
    qs, rs = q.scales, r.scales
    per = np.log(rs / qs) + (qs**2 + (q.locs - r.locs) ** 2) / (2.0 * rs**2) - 0.5
    return float(np.sum(per))


def kl_iid_product(q: MeanFieldGaussian, r: MeanFieldGaussian, m: int) -> float:
    """KL between m-fold independent products: exactly m * KL(q, r)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return m * kl_mean_field(q, r)


def kl_grid(q: GridDensity, r: GridDensity) -> float:
    """Rectangle-rule KL(q || r) on a shared grid, in nats."""
    if q.grid != r.grid:
        raise ValueError("grid KL requires identical grids")
    support = q.probs > 0.0
    if np.any(support & (r.probs == 0.0)):
        raise AbsoluteContinuityError("q has mass where r vanishes")
    qp = q.probs[support]
    rp = r.probs[support]
    return float(np.sum(qp * np.log(qp / rp)) * q.grid.step)


def predictive_density(q, model_scale: float, x):
    """Density of the model convolved with the parameter distribution q.

    The model is the location family Normal(x; theta, model_scale); the
    predictive is exact for Normal1D and AtomicMixture q and a rectangle-rule
    quadrature for GridDensity q.
    """
    if not model_scale > 0:
        raise ValueError("model_scale must be positive")
    x = np.asarray(x, dtype=np.float64)
    if isinstance(q, Normal1D):
        s = np.hypot(q.scale, model_scale)
        out = np.exp(_normal_logpdf(x, q.loc, s))
    elif isinstance(q, AtomicMixture):
        s = np.hypot(q.component_scale, model_scale)
        out = np.sum(q.weights * np.exp(_normal_logpdf(x[..., None], q.locs, s)), axis=-1)
    elif isinstance(q, GridDensity):
        pts = q.grid.points()
        kernel = np.exp(_normal_logpdf(x[..., None], pts, model_scale))
        out = np.sum(kernel * q.probs, axis=-1) * q.grid.step
    else:
        raise TypeError(f"unsupported posterior type {type(q).__name__}")
    return out if np.ndim(out) else float(out)
