"""Solvers for the 1-D location-family toy problem.

Four routes to a parameter distribution: the conjugate closed form, a damped
grid fixed point for the infinite-sample predictive objective, an atomic
empirical-predictive minimizer, and the analytic optima of the true risks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import AtomicMixture, GridDensity, MixtureNormal1D, Normal1D, kl_grid
from .models import OptimizerState, optimizer_step
from .numerics import Grid1D, normalize_log_density

__all__ = [
    "FixedPointConfig",
    "FixedPointResult",
    "AtomicErmResult",
    "ToyOptima",
    "conjugate_posterior",
    "fixed_point_pacpred",
    "pacpred_grid_objective",
    "atomic_erm",
    "toy_optima",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FixedPointConfig:
    grid: Grid1D = Grid1D(-30.0, 30.0, 500)
    alpha: float = 0.9
    beta: float = 1.0
    tol: float = 1e-8
    max_iters: int = 5000

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass
class FixedPointResult:
    density: GridDensity
    iterations: int
    residual: float
    converged: bool
    residual_trace: list = field(default_factory=list, repr=False)


@dataclass
class AtomicErmResult:
    mixture: AtomicMixture
    iterations: int
    converged: bool
    risk: float
    risk_trace: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class ToyOptima:
    inf_opt: AtomicMixture
    pred_opt: AtomicMixture


def conjugate_posterior(prior: Normal1D, data, model_scale: float) -> Normal1D:
    """Exact posterior for the normal location family under a normal prior."""
    if not model_scale > 0:
        raise ValueError("model_scale must be positive")
    data = np.asarray(data, dtype=np.float64)
    precision = 1.0 / prior.scale**2 + data.size / model_scale**2
    mean = (prior.loc / prior.scale**2 + data.sum() / model_scale**2) / precision
    return Normal1D(loc=float(mean), scale=float(np.sqrt(1.0 / precision)))


def fixed_point_pacpred(
    prior: Normal1D, data, model_scale: float, cfg: FixedPointConfig | None = None
) -> FixedPointResult:
    """Damped fixed-point iteration for the infinite-sample predictive risk.

    Alternates a Boltzmann-style density update (proportional to the prior
    times exp of the per-point likelihood ratios) with a damped refresh of
    the per-point marginal likelihoods, on a uniform grid. Initialization:
    the discretized prior and its prior-predictive marginals.
    """
    cfg = cfg or FixedPointConfig()
    data = np.asarray(data, dtype=np.float64)
    theta = cfg.grid.points()
    log_prior = prior.log_prob(theta)
    prior_grid = normalize_log_density(cfg.grid, log_prior)

    # (n, G) likelihood table; empty data degenerates to the prior fixed point.
    lik = np.exp(
        -0.5 * _LOG_2PI
        - np.log(model_scale)
        - 0.5 * ((data[:, None] - theta[None, :]) / model_scale) ** 2
    )
    q = prior_grid.probs.copy()
    p = lik @ (prior_grid.probs * cfg.grid.step)  # prior-predictive marginals

    residuals = []
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iters + 1):
        exponent = cfg.beta * (lik / p[:, None]).sum(axis=0)
        q_new = normalize_log_density(cfg.grid, log_prior + exponent).probs
        p = cfg.alpha * p + (1.0 - cfg.alpha) * (lik @ (q_new * cfg.grid.step))
        residual = float(np.max(np.abs(q_new - q)))
        residuals.append(residual)
        q = q_new
        if residual < cfg.tol:
            converged = True
            break

    return FixedPointResult(
        density=GridDensity(cfg.grid, q),
        iterations=iterations,
        residual=residuals[-1],
        converged=converged,
        residual_trace=residuals,
    )


def pacpred_grid_objective(
    q: GridDensity, prior: Normal1D, data, model_scale: float, beta: float
) -> float:
    """Infinite-sample predictive objective of a grid density, in nats."""
    data = np.asarray(data, dtype=np.float64)
    theta = q.grid.points()
    lik = np.exp(
        -0.5 * _LOG_2PI
        - np.log(model_scale)
        - 0.5 * ((data[:, None] - theta[None, :]) / model_scale) ** 2
    )
    marginals = lik @ (q.probs * q.grid.step)
    prior_grid = normalize_log_density(q.grid, prior.log_prob(theta))
    data_term = -float(np.mean(np.log(marginals)))
    return data_term + kl_grid(q, prior_grid) / (beta * data.size)


def atomic_erm(
    data,
    k: int,
    model_scale: float,
    opt: OptimizerState | None = None,
    tol: float = 1e-5,
    max_iters: int = 200_000,
    rng: np.random.Generator | None = None,
) -> AtomicErmResult:
    """Fit k equal-weight fixed-scale components to minimize the empirical
    predictive risk over component locations.

    Locations start at resampled data points with N(0, 0.5) jitter and follow
    adagrad until the largest per-step location update drops below ``tol``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    data = np.asarray(data, dtype=np.float64)
    if data.size == 0:
        raise ValueError("atomic fit needs data")
    rng = rng if rng is not None else np.random.default_rng(0)
    opt = opt if opt is not None else OptimizerState(kind="adagrad", lr0=0.05)

    locs = data[rng.integers(0, data.size, size=k)] + 0.5 * rng.standard_normal(k)
    log_w = -np.log(k)
    const = -0.5 * _LOG_2PI - np.log(model_scale)

    def risk_and_grad(locs):
        diff = (data[:, None] - locs[None, :]) / model_scale
        ll = const - 0.5 * diff**2 + log_w  # (n, k)
        colmax = ll.max(axis=1, keepdims=True)
        ez = np.exp(ll - colmax)
        lse = colmax[:, 0] + np.log(ez.sum(axis=1))
        risk = -float(np.mean(lse))
        resp = ez / ez.sum(axis=1, keepdims=True)  # (n, k)
        grad = -(resp * diff / model_scale).mean(axis=0)
        return risk, grad

    risks = []
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        risk, grad = risk_and_grad(locs)
        risks.append(risk)
        new_locs = optimizer_step(opt, locs, grad)
        update = float(np.max(np.abs(new_locs - locs)))
        locs = new_locs
        if update < tol:
            converged = True
            break

    final_risk, _ = risk_and_grad(locs)
    risks.append(final_risk)
    return AtomicErmResult(
        mixture=AtomicMixture(np.full(k, 1.0 / k), locs, component_scale=model_scale),
        iterations=iterations,
        converged=converged,
        risk=final_risk,
        risk_trace=risks,
    )


def toy_optima(nu: MixtureNormal1D, model_scale: float) -> ToyOptima:
    """Analytic minimizers of the true risks for the location family.

    The inferential optimum is a single atom at the mean of the true
    distribution; the predictive optimum deconvolves exactly to an atom comb
    when every true component scale equals the model scale.
    """
    inf_opt = AtomicMixture(np.ones(1), np.array([nu.mean()]), component_scale=0.0)
    if np.any(np.abs(nu.scales - model_scale) > 1e-12):
        raise ValueError(
            "predictive optimum unavailable: true component scales must equal the model scale"
        )
    pred_opt = AtomicMixture(nu.weights.copy(), nu.locs.copy(), component_scale=0.0)
    return ToyOptima(inf_opt=inf_opt, pred_opt=pred_opt)
