"""Executable verification harnesses for the bound chain and its lemmas.

Each check is a numerical falsification attempt: random instances, explicit
tolerances, and a machine-readable report. Statistical checks gate at three
standard errors so false failures stay well below the percent level.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import MixtureNormal1D, Normal1D, kl_mean_field, MeanFieldGaussian
from .models import VariationalPosterior, posterior_sample_np
from .numerics import log_avg_exp_tempered, log_mean_exp
from .objectives import (
    BoundParams,
    LogLikMatrix,
    elbo_loss,
    lambda_star,
    pacm_loss,
    psi_mc,
    psi_upper_bound,
)

__all__ = [
    "CheckReport",
    "check_monotone_chain",
    "check_inequality_lemmas",
    "check_lambda_star",
]

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class CheckReport:
    """Outcome of one falsification check; passed iff no violations."""

    name: str
    trials: int
    violations: int
    worst_slack: float
    tolerance: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "details": self.details,
        }


def _toy_loglik(thetas: np.ndarray, data: np.ndarray, model_scale: float) -> np.ndarray:
    """(..., n) table of log N(x_i; theta, model_scale) for stacked thetas."""
    z = (data - thetas[..., None]) / model_scale
    return -0.5 * _LOG_2PI - np.log(model_scale) - 0.5 * z**2


def _np_logmeanexp(v: np.ndarray, axis: int) -> np.ndarray:
    vmax = np.max(v, axis=axis, keepdims=True)
    out = vmax + np.log(np.mean(np.exp(v - vmax), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def check_monotone_chain(
    post: VariationalPosterior,
    data,
    model_scale: float = 1.0,
    m_list: tuple = (1, 2, 4, 8, 16, 32),
    replicates: int = 4000,
    rng: np.random.Generator | None = None,
) -> CheckReport:
    """Verify the multisample data term tightens monotonically in m.

    Uses nested sample tuples so consecutive estimates share randomness, a
    three-standard-error gate on each adjacent pair, the exact leave-one-out
    Jensen identity at m in {2, 3} per replicate, and bit-exact agreement of
    the multisample and single-sample losses at m = 1.
    """
    if list(m_list) != sorted(m_list) or m_list[0] != 1:
        raise ValueError("m_list must be ascending and start at 1")
    if post.dim != 1:
        raise ValueError("the chain check uses the scalar-location toy model")
    rng = rng if rng is not None else np.random.default_rng(0)
    data = np.asarray(data, dtype=np.float64)
    m_max = m_list[-1]

    thetas = posterior_sample_np(post, rng, replicates * m_max).reshape(replicates, m_max)
    ll = _toy_loglik(thetas, data, model_scale)  # (R, M, n)

    data_terms = {}
    for m in m_list:
        data_terms[m] = -np.mean(_np_logmeanexp(ll[:, :m, :], axis=1), axis=1)  # (R,)

    violations = 0
    worst = -np.inf
    pairs = {}
    for m_prev, m_next in zip(m_list[:-1], m_list[1:]):
        diff = data_terms[m_next] - data_terms[m_prev]
        mean = float(np.mean(diff))
        se = float(np.std(diff, ddof=1) / np.sqrt(replicates))
        slack = mean - 3.0 * se
        worst = max(worst, slack)
        if slack > 0:
            violations += 1
        pairs[f"{m_prev}->{m_next}"] = {"mean_diff": mean, "se": se}

    # Exact leave-one-out identity, exhaustively at m = 2 and m = 3.
    loo_tol = 1e-12
    for m in (2, 3):
        if m > m_max:
            continue
        full = -np.mean(_np_logmeanexp(ll[:, :m, :], axis=1), axis=1)
        subsets = []
        for j in range(m):
            keep = [i for i in range(m) if i != j]
            subsets.append(-np.mean(_np_logmeanexp(ll[:, keep, :], axis=1), axis=1))
        loo_gap = full - np.mean(subsets, axis=0)
        worst = max(worst, float(np.max(loo_gap)))
        violations += int(np.sum(loo_gap > loo_tol))

    # m = 1: the multisample and single-sample losses coincide bit-for-bit.
    ll1 = LogLikMatrix(ll[0, :1, :])
    params = BoundParams(n=data.size, m=1, beta=1.0)
    kl = 0.7
    if pacm_loss(ll1, kl, params) != elbo_loss(ll1, kl, params):
        violations += 1

    return CheckReport(
        name="monotone_chain",
        trials=replicates,
        violations=violations,
        worst_slack=float(worst),
        tolerance=0.0,
        details={"pairs": pairs, "m_list": list(m_list)},
    )


def _check_compression(rng: np.random.Generator, trials: int) -> CheckReport:
    tol = 1e-12
    violations = 0
    worst = -np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 7))
        p = rng.random(k) + 1e-3
        p /= p.sum()
        r = rng.random(k) + 1e-3
        r /= r.sum()
        f = rng.uniform(-3.0, 3.0, k)
        lhs = float(p @ f)
        rhs = float(np.sum(p * np.log(p / r)) + np.log(np.sum(r * np.exp(f))))
        slack = lhs - rhs
        worst = max(worst, slack)
        if slack > tol:
            violations += 1
    return CheckReport("compression", trials, violations, float(worst), tol)


def _check_log_markov(rng: np.random.Generator) -> CheckReport:
    n = 100_000
    mu, sigma = 0.3, 0.8
    z = np.exp(mu + sigma * rng.standard_normal(n))
    log_ez = mu + sigma**2 / 2.0  # exact log E[Z] for the lognormal
    violations = 0
    worst = -np.inf
    details = {}
    for xi in (0.1, 0.5):
        coverage = float(np.mean(np.log(z) <= log_ez - np.log(xi)))
        bound = (1.0 - xi) - 3.0 * np.sqrt(xi * (1.0 - xi) / n)
        slack = bound - coverage
        worst = max(worst, slack)
        if slack > 0:
            violations += 1
        details[f"xi={xi}"] = {"coverage": coverage, "required": bound}
    return CheckReport("log_markov", n, violations, float(worst), 0.0, details)


def _check_kl_iid(rng: np.random.Generator, trials: int) -> CheckReport:
    tol = 1e-12
    violations = 0
    worst = -np.inf
    for _ in range(trials):
        q = MeanFieldGaussian(rng.normal(0, 1, 2), rng.uniform(-1, 1, 2))
        r = MeanFieldGaussian(rng.normal(0, 1, 2), rng.uniform(-1, 1, 2))
        base = kl_mean_field(q, r)
        for m in (2, 3, 5):
            q_m = MeanFieldGaussian(np.tile(q.locs, m), np.tile(q.raw_scales, m))
            r_m = MeanFieldGaussian(np.tile(r.locs, m), np.tile(r.raw_scales, m))
            gap = abs(kl_mean_field(q_m, r_m) - m * base)
            worst = max(worst, gap)
            if gap > tol:
                violations += 1
    return CheckReport("kl_iid", trials, violations, float(worst), tol)


def _check_gibbs(rng: np.random.Generator, trials: int) -> CheckReport:
    tol = 1e-12
    violations = 0
    worst = -np.inf
    for _ in range(trials):
        k = int(rng.integers(2, 7))
        p = rng.random(k) + 1e-3
        p /= p.sum()
        r = rng.random(k) + 1e-3
        r /= r.sum()
        kl = float(np.sum(p * np.log(p / r)))
        worst = max(worst, -kl)
        if kl < -tol:
            violations += 1
    return CheckReport("gibbs", trials, violations, float(worst), tol)


def _check_psi_nonneg(rng: np.random.Generator, trials: int) -> CheckReport:
    nu = MixtureNormal1D(np.array([0.3, 0.7]), np.array([-2.0, 2.0]), np.array([1.0, 1.0]))
    prior = Normal1D(0.0, 3.0)
    params = BoundParams(n=5, m=2, beta=1.0, lam=2.0, xi=1.0)
    est = psi_mc(nu, prior, 1.0, params, trials=max(trials, 1000), rng=rng)
    slack = -(est.value + 3.0 * est.std_error)
    violations = int(slack > 0)
    return CheckReport(
        "psi_nonnegative",
        est.trials,
        violations,
        float(slack),
        0.0,
        {"estimate": est.value, "std_error": est.std_error},
    )


def _check_lae_parametric(rng: np.random.Generator, trials: int) -> CheckReport:
    tol = 1e-12
    violations = 0
    worst = -np.inf
    for _ in range(trials):
        v = rng.normal(0.0, 2.0, int(rng.integers(1, 9)))
        base = -log_mean_exp(v)
        for phi in (0.0, 0.25, 0.5, 0.75, 1.0):
            slack = base - (-log_avg_exp_tempered(v, phi))
            worst = max(worst, slack)
            if slack > tol:
                violations += 1
    return CheckReport("log_avg_exp_parametric", trials, violations, float(worst), tol)


def _check_lae_simple(rng: np.random.Generator, trials: int) -> CheckReport:
    tol = 1e-12
    violations = 0
    worst = -np.inf
    for _ in range(trials):
        v = rng.normal(0.0, 2.0, int(rng.integers(1, 9)))
        val = log_mean_exp(v)
        lower = max(float(np.mean(v)), float(np.max(v)) - np.log(v.size))
        upper = float(np.max(v))
        slack = max(lower - val, val - upper)
        worst = max(worst, slack)
        if slack > tol:
            violations += 1
    return CheckReport("log_avg_exp_simple", trials, violations, float(worst), tol)


def check_inequality_lemmas(rng: np.random.Generator, trials: int = 1000) -> list[CheckReport]:
    """One report per lemma-level inequality, each on fresh random instances."""
    if trials < 100:
        raise ValueError("trials must be >= 100")
    return [
        _check_compression(rng, trials),
        _check_log_markov(rng),
        _check_kl_iid(rng, trials),
        _check_gibbs(rng, trials),
        _check_psi_nonneg(rng, trials),
        _check_lae_parametric(rng, trials),
        _check_lae_simple(rng, trials),
    ]


def check_lambda_star(n: int, beta: float, m_list: tuple) -> CheckReport:
    """Scan the offset bound over temperatures and locate its minimum.

    For each m > 1 the scan minimum must land within one (log-spaced) grid
    cell of the closed-form minimizer, and the scan must be discretely convex.
    """
    scan_points = 10_000
    conv_tol = 1e-9
    violations = 0
    worst = -np.inf
    details = {}
    for m in m_list:
        star = lambda_star(n, beta, m)
        if m <= 1:
            details[f"m={m}"] = {"lambda_star": star, "minimization": "not asserted"}
            continue
        u = np.linspace(np.log(1e-2 * star), np.log(1e2 * star), scan_points)
        lam = np.exp(u)
        vals = psi_upper_bound(lam, s=np.sqrt(2.0) / beta, n=n, m=m, xi=1.0)
        idx = int(np.argmin(vals))
        cell = u[1] - u[0]
        offset = abs(u[idx] - np.log(star))
        slack = offset - cell
        worst = max(worst, slack)
        if slack > 1e-12:
            violations += 1
        second = np.diff(vals, 2)
        conv_worst = float(-np.min(second))
        worst = max(worst, conv_worst - conv_tol)
        if conv_worst > conv_tol:
            violations += 1
        details[f"m={m}"] = {
            "lambda_star": star,
            "scan_min": float(lam[idx]),
            "min_second_difference": float(np.min(second)),
        }
    return CheckReport(
        name="lambda_star",
        trials=len(m_list) * scan_points,
        violations=violations,
        worst_slack=float(worst),
        tolerance=conv_tol,
        details=details,
    )
