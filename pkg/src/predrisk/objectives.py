"""Inferential and predictive risk objectives, bound offsets, and true risks.

The four training losses share one set of graph-level term builders (suffix
``_node``) so that the numeric API and the training path compute literally the
same operations; the multisample loss with one sample is bit-identical to the
single-sample bound by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .distributions import (
    AtomicMixture,
    GridDensity,
    MixtureNormal1D,
    Normal1D,
    predictive_density,
)
from .numerics import Grid1D

__all__ = [
    "LogLikMatrix",
    "BoundParams",
    "GapStats",
    "RiskReport",
    "PsiEstimate",
    "MassCoverageError",
    "emp_inf_term_node",
    "mc_pred_term_node",
    "elbo_loss_node",
    "pacm_loss_node",
    "pac2t_loss_node",
    "pac2t_aux",
    "iwae_loss_node",
    "emp_inf_risk",
    "mc_pred_term",
    "elbo_loss",
    "pacm_loss",
    "pac2t_loss",
    "iwae_loss",
    "delta_gap",
    "psi_mc",
    "lambda_star",
    "psi_upper_bound",
    "true_risks_toy",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


class MassCoverageError(ValueError):
    """Raised when a quadrature grid misses too much of a density's mass."""


@dataclass(frozen=True)
class LogLikMatrix:
    """m x n matrix with entry [j, i] = log p(x_i | theta_j)."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 2 or self.values.size == 0:
            raise ValueError(f"expected a non-empty m x n matrix, got {self.values.shape}")
        if np.isnan(self.values).any():
            raise ValueError("log-likelihood matrix contains NaN")

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BoundParams:
    """Sizes and temperatures shared by the bound family.

    ``lam`` defaults to beta * n * m, which makes the multisample KL
    coefficient m/lam equal 1/(beta n). ``s`` is the sub-gaussian standard
    deviation bound and defaults to sqrt(2)/beta.
    """

    n: int
    m: int
    beta: float = 1.0
    lam: float | None = None
    xi: float = 1.0
    s: float | None = None
    lam_is_default: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must lie in (0, 1]")
        if self.lam is None:
            object.__setattr__(self, "lam", self.beta * self.n * self.m)
            object.__setattr__(self, "lam_is_default", True)
        elif not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.s is None:
            object.__setattr__(self, "s", np.sqrt(2.0) / self.beta)
        elif not self.s > 0:
            raise ValueError("s must be positive")


@dataclass(frozen=True)
class GapStats:
    """Empirical-minus-true multisample log-likelihood gap."""

    delta: float
    empirical_term: float
    true_term: float


@dataclass(frozen=True)
class RiskReport:
    """Scalar risk values in nats plus run metadata."""

    name: str
    total_nats: float
    data_term_nats: float
    kl_term_nats: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "total_nats": self.total_nats,
            "data_term_nats": self.data_term_nats,
            "kl_term_nats": self.kl_term_nats,
            **self.meta,
        }


@dataclass(frozen=True)
class PsiEstimate:
    """Monte-Carlo bound offset with its standard error."""

    value: float
    std_error: float
    trials: int


def _check_kl(kl: float) -> None:
    if float(kl) < 0:
        raise ValueError(f"kl must be >= 0, got {kl}")


def _check_lambda(params: BoundParams, allow_small_lambda: bool) -> None:
    if params.lam >= params.m:
        return
    if params.lam_is_default or allow_small_lambda:
        # The beta parameterization keeps its stochastic-bound reading even
        # below the lambda >= m regime, so only warn for that form.
        warnings.warn(
            f"lambda = {params.lam} < m = {params.m}; the monotone tightening "
            "guarantee does not apply",
            stacklevel=3,
        )
    else:
        raise ValueError(
            f"lambda = {params.lam} < m = {params.m}; pass allow_small_lambda=True to override"
        )


# ---------------------------------------------------------------------------
# Graph-level term builders (shared by the numeric API and the trainer).
# ---------------------------------------------------------------------------


def emp_inf_term_node(ll: ad.Node) -> ad.Node:
    """Average negative log-likelihood over samples and data points."""
    return -ad.mean_(ll)


def mc_pred_term_node(ll: ad.Node) -> ad.Node:
    """Negative log of the per-point m-sample average likelihood, averaged."""
    return -ad.mean_(ad.logmeanexp(ll, axis=0))


def elbo_loss_node(ll: ad.Node, kl: ad.Node, params: BoundParams) -> ad.Node:
    # No sign check here: a Monte-Carlo KL estimate may dip below zero.
    coeff = 1.0 / (params.beta * params.n)
    return emp_inf_term_node(ll) + kl * coeff


def pacm_loss_node(
    ll: ad.Node, kl: ad.Node, params: BoundParams, allow_small_lambda: bool = False
) -> ad.Node:
    _check_lambda(params, allow_small_lambda)
    coeff = params.m / params.lam
    return mc_pred_term_node(ll) + kl * coeff


def pac2t_aux(ll_values: np.ndarray, smoothing: float) -> tuple[np.ndarray, np.ndarray]:
    """Frozen centering offsets and curvature weights of the variance term.

    These are exactly the values the loss holds constant under
    differentiation; precomputing them lets a finite-difference oracle
    evaluate the same function the gradient differentiates.
    """
    lmx = np.max(ll_values, axis=0, keepdims=True) + smoothing
    centered = ll_values - lmx
    al = _np_logmeanexp(centered, axis=0)
    ea = np.exp(al)
    h = 2.0 * (al / (1.0 - ea) ** 2 + 1.0 / (ea * (1.0 - ea)))
    return lmx, h


def _np_logmeanexp(v: np.ndarray, axis: int) -> np.ndarray:
    vmax = np.max(v, axis=axis, keepdims=True)
    out = vmax + np.log(np.mean(np.exp(v - vmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def pac2t_loss_node(
    ll: ad.Node,
    kl: ad.Node,
    params: BoundParams,
    smoothing: float = 0.1,
    aux: tuple[np.ndarray, np.ndarray] | None = None,
) -> ad.Node:
    """Single-sample bound minus a sample-variance correction.

    The per-column max-centering offset and the curvature weights h are held
    constant under differentiation (``aux`` pins them explicitly; by default
    they are cut out of the graph with stop_gradient). With one sample the
    variance term is defined as zero.
    """
    if not smoothing > 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    base = elbo_loss_node(ll, kl, params)
    m = ll.value.shape[0]
    if m == 1:
        return base
    if aux is None:
        lmx = ad.stop_gradient(ad.max_(ll, axis=0) + smoothing)
        centered = ll - ad.reshape(lmx, (1, -1))
        al = ad.logmeanexp(centered, axis=0)
        ea = ad.exp(al)
        h = 2.0 * ad.stop_gradient(al / (1.0 - ea) ** 2 + 1.0 / (ea * (1.0 - ea)))
    else:
        lmx_vals, h_vals = aux
        centered = ll - ad.as_node(lmx_vals)
        al = ad.logmeanexp(centered, axis=0)
        h = ad.as_node(h_vals)
    var1 = h * ad.exp(2.0 * centered)
    # Mean over one sample axis of exp(c_j + c_k) equals exp(c_k + al); the
    # rewrite keeps every derivative identical while staying rank-2.
    var2 = h * ad.exp(centered + ad.reshape(al, (1, -1)))
    variance = ad.mean_(var1 - var2)
    return base - variance


def iwae_loss_node(ll: ad.Node, log_weight: ad.Node) -> ad.Node:
    """Multisample importance-weighted bound; log_weight[j, i] = log r - log q."""
    lw = log_weight.value
    if lw.ndim != 2 or lw.shape[0] != ll.value.shape[0]:
        raise ValueError(
            f"log_weight shape {lw.shape} incompatible with log-lik shape {ll.value.shape}"
        )
    if lw.shape[1] not in (1, ll.value.shape[1]):
        raise ValueError(
            f"log_weight shape {lw.shape} incompatible with log-lik shape {ll.value.shape}"
        )
    return -ad.mean_(ad.logmeanexp(ll + log_weight, axis=0))


# ---------------------------------------------------------------------------
# Numeric API on LogLikMatrix.
# ---------------------------------------------------------------------------


def emp_inf_risk(ll: LogLikMatrix) -> float:
    return float(emp_inf_term_node(ad.Node(ll.values)).value)


def mc_pred_term(ll: LogLikMatrix) -> float:
    return float(mc_pred_term_node(ad.Node(ll.values)).value)


def elbo_loss(ll: LogLikMatrix, kl: float, params: BoundParams) -> float:
    _check_kl(kl)
    return float(elbo_loss_node(ad.Node(ll.values), ad.Node(kl), params).value)


def pacm_loss(
    ll: LogLikMatrix, kl: float, params: BoundParams, allow_small_lambda: bool = False
) -> float:
    _check_kl(kl)
    return float(
        pacm_loss_node(ad.Node(ll.values), ad.Node(kl), params, allow_small_lambda).value
    )


def pac2t_loss(ll: LogLikMatrix, kl: float, params: BoundParams, smoothing: float = 0.1) -> float:
    _check_kl(kl)
    return float(pac2t_loss_node(ad.Node(ll.values), ad.Node(kl), params, smoothing).value)


def iwae_loss(ll: LogLikMatrix, log_weight: np.ndarray) -> float:
    return float(iwae_loss_node(ad.Node(ll.values), ad.Node(log_weight)).value)


def delta_gap(empirical_term: float, true_term: float) -> GapStats:
    if not (np.isfinite(empirical_term) and np.isfinite(true_term)):
        raise ValueError("gap terms must be finite")
    return GapStats(
        delta=empirical_term - true_term,
        empirical_term=empirical_term,
        true_term=true_term,
    )


# ---------------------------------------------------------------------------
# Bound offset: Monte-Carlo estimate and closed-form upper bound.
# ---------------------------------------------------------------------------


def _true_multisample_term(
    thetas: np.ndarray, nu: MixtureNormal1D, model_scale: float, x: np.ndarray, w: np.ndarray
) -> np.ndarray:
    """E_nu[log (1/m) sum_j p(X | theta_j)] per trial, by quadrature."""
    # thetas: (chunk, m); x: (g,); returns (chunk,)
    z = (x[None, None, :] - thetas[:, :, None]) / model_scale
    ll = -0.5 * _LOG_2PI - np.log(model_scale) - 0.5 * z**2  # (chunk, m, g)
    lme = _np_logmeanexp(ll, axis=1)  # (chunk, g)
    return lme @ w


def psi_mc(
    nu: MixtureNormal1D,
    prior: Normal1D,
    model_scale: float,
    params: BoundParams,
    trials: int,
    rng: np.random.Generator,
) -> PsiEstimate:
    """Monte-Carlo estimate of the q-independent bound offset.

    Draws fresh (data, parameter-tuple) pairs from the true distribution and
    the prior, accumulates exp(lambda * gap) in log space so no overflow is
    possible, and reports a delta-method standard error.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    lam, xi, n, m = params.lam, params.xi, params.n, params.m
    smax = float(np.max(nu.scales))
    grid = Grid1D(float(np.min(nu.locs) - 12 * smax), float(np.max(nu.locs) + 12 * smax), 2001)
    x = grid.points()
    w = nu.pdf(x) * grid.step

    log_terms = np.empty(trials)
    chunk = 512
    for start in range(0, trials, chunk):
        size = min(chunk, trials - start)
        thetas = prior.sample(rng, size * m).reshape(size, m)
        data = nu.sample(rng, size * n).reshape(size, n)
        z = (data[:, None, :] - thetas[:, :, None]) / model_scale
        ll = -0.5 * _LOG_2PI - np.log(model_scale) - 0.5 * z**2  # (size, m, n)
        emp = np.mean(_np_logmeanexp(ll, axis=1), axis=1)  # (size,)
        true = _true_multisample_term(thetas, nu, model_scale, x, w)
        log_terms[start : start + size] = lam * (emp - true)

    shift = np.max(log_terms)
    zvals = np.exp(log_terms - shift)
    mean_z = float(np.mean(zvals))
    log_mean = shift + np.log(mean_z)
    value = log_mean / lam - np.log(xi) / lam
    std_z = float(np.std(zvals, ddof=1)) if trials > 1 else 0.0
    std_error = std_z / (mean_z * np.sqrt(trials)) / lam
    return PsiEstimate(value=float(value), std_error=float(std_error), trials=trials)


def lambda_star(n: int, beta: float, m: int) -> float:
    """Temperature minimizing the closed-form offset bound: n beta sqrt(log max(2, m))."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    if not beta > 0:
        raise ValueError("beta must be positive")
    return float(n * beta * np.sqrt(np.log(max(2, m))))


def psi_upper_bound(lam, s: float, n: int, m: int, xi: float):
    """Closed-form offset bound under everywhere sub-gaussian per-point gaps.

    ``lam`` may be a scalar or an array of temperatures to scan.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("lambda must be positive")
    if not s > 0:
        raise ValueError("s must be positive")
    if not 0.0 < xi <= 1.0:
        raise ValueError("xi must lie in (0, 1]")
    out = lam * s**2 / (2.0 * n) + n * np.log(m) / lam + np.log(m) - np.log(xi) / lam
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# True risks for the 1-D location-family toy model.
# ---------------------------------------------------------------------------


def _expected_loglik_under_q(q, model_scale: float, x: np.ndarray) -> np.ndarray:
    """E_q[log p(x | theta)] for the unit-family normal model, per x."""
    const = -0.5 * _LOG_2PI - np.log(model_scale)
    if isinstance(q, GridDensity):
        pts = q.grid.points()
        logp = const - 0.5 * ((x[:, None] - pts[None, :]) / model_scale) ** 2
        return (logp @ q.probs) * q.grid.step
    if isinstance(q, AtomicMixture):
        sq = (x[:, None] - q.locs[None, :]) ** 2 + q.component_scale**2
        return const - np.sum(q.weights * sq, axis=1) / (2.0 * model_scale**2)
    if isinstance(q, Normal1D):
        return const - ((x - q.loc) ** 2 + q.scale**2) / (2.0 * model_scale**2)
    raise TypeError(f"unsupported posterior type {type(q).__name__}")


def true_risks_toy(
    q, nu: MixtureNormal1D, model_scale: float, x_grid: Grid1D
) -> tuple[float, float]:
    """Quadrature values of the true inferential and predictive risks.

    The predictive risk never exceeds the inferential risk (Jensen), which
    the tests assert on every call.
    """
    x = x_grid.points()
    coverage = float(nu.cdf(x_grid.hi) - nu.cdf(x_grid.lo))
    if coverage < 1.0 - 1e-10:
        raise MassCoverageError(
            f"x-grid covers only {coverage} of the true distribution's mass"
        )
    w = nu.pdf(x) * x_grid.step
    true_inf = -float(w @ _expected_loglik_under_q(q, model_scale, x))
    pred = np.maximum(predictive_density(q, model_scale, x), 1e-300)
    true_pred = -float(w @ np.log(pred))
    return true_inf, true_pred
