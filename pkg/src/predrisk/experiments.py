"""Dataset generators, training/evaluation harnesses, and report emission.

Each run owns its output directory and is deterministic given its seed: the
data stream, training stream, and evaluation stream are independent children
of the config seed, and CSV bodies are byte-identical across reruns.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .distributions import MixtureNormal1D, Normal1D
from .models import (
    MlpArch,
    OptimizerState,
    VariationalPosterior,
    init_params,
    mlp_forward,
    mlp_forward_np,
    optimizer_step,
    posterior_sample,
    posterior_sample_np,
)
from .numerics import Grid1D
from .objectives import (
    BoundParams,
    MassCoverageError,
    RiskReport,
    elbo_loss_node,
    iwae_loss_node,
    lambda_star,
    pac2t_loss_node,
    pacm_loss_node,
    true_risks_toy,
)
from .theory_checks import (
    check_inequality_lemmas,
    check_lambda_star,
    check_monotone_chain,
)
from .toy_solver import (
    FixedPointConfig,
    atomic_erm,
    conjugate_posterior,
    fixed_point_pacpred,
    pacpred_grid_objective,
    toy_optima,
)

__all__ = [
    "EXPERIMENTS",
    "LOSSES",
    "TOY_NU",
    "ExperimentConfig",
    "Dataset",
    "GenerativeTruth",
    "ExperimentResult",
    "desk_config",
    "mu_curve",
    "gen_dataset",
    "run_experiment",
    "evaluate_model",
    "emit_report",
    "run_sweep",
]

_LOG_2PI = float(np.log(2.0 * np.pi))
_LN2 = float(np.log(2.0))

EXPERIMENTS = ("toy", "sinusoid", "mixture", "mixture-multimodal", "mixture-wellspec", "verify")
LOSSES = ("elbo", "pacm", "pac2t", "iwae")

# The bimodal toy truth: a 30-70 mixture of unit-variance normals at -2 and 2.
TOY_NU = MixtureNormal1D(np.array([0.3, 0.7]), np.array([-2.0, 2.0]), np.array([1.0, 1.0]))
TOY_PRIOR = Normal1D(0.0, 3.0)
PAC2T_SMOOTHING = 0.1


@dataclass
class ExperimentConfig:
    experiment: str
    loss: str = "pacm"
    m: int = 16
    beta: float = 1.0
    lambda_mode: str = "beta-nm"  # beta-nm | lambda-star | explicit
    lambda_value: float | None = None
    seed: int = 0
    n_train: int = 1000
    steps: int = 20000
    lr0: float = 0.01
    decay_rate: float = 1.0
    decay_steps: int = 100000
    eval_samples: int = 500
    trials: int = 1000  # verify only
    out_dir: str = "runs/out"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("m", "n_train", "steps", "eval_samples", "decay_steps", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.lambda_mode not in ("beta-nm", "lambda-star", "explicit"):
            raise ValueError(f"unknown lambda_mode {self.lambda_mode!r}")
        if self.lambda_mode == "explicit" and self.lambda_value is None:
            raise ValueError("lambda_mode 'explicit' needs lambda_value")


_DESK_DEFAULTS = {
    "sinusoid": dict(n_train=1000, steps=20000, m=16, lr0=0.01, decay_rate=1.0),
    "mixture": dict(n_train=1000, steps=30000, m=16, lr0=0.01, decay_rate=0.5),
    "mixture-multimodal": dict(n_train=1000, steps=30000, m=16, lr0=0.01, decay_rate=0.5),
    "mixture-wellspec": dict(n_train=1000, steps=30000, m=16, lr0=0.01, decay_rate=0.5),
    "toy": dict(n_train=5),
    "verify": dict(),
}


def desk_config(experiment: str, **overrides) -> ExperimentConfig:
    """Config with the desk-scale defaults for an experiment."""
    kwargs = dict(_DESK_DEFAULTS[experiment])
    kwargs.update(overrides)
    return ExperimentConfig(experiment=experiment, **kwargs)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    generator_tag: str
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.float64))
        if self.x.size and self.x.shape != self.y.shape:
            raise ValueError("x and y lengths must match when x is non-empty")

    @property
    def n(self) -> int:
        return self.y.shape[0]


class GenerativeTruth:
    """Exact conditional law p*(y|x) of a generator, as a per-x normal mixture."""

    def __init__(self, tag: str, component_fn):
        self.tag = tag
        self._component_fn = component_fn

    def conditional(self, x: float) -> MixtureNormal1D:
        weights, locs, scales = self._component_fn(float(x))
        return MixtureNormal1D(np.asarray(weights), np.asarray(locs), np.asarray(scales))


def mu_curve(x):
    """Mean curve of the synthetic regression tasks: 7 sin(3x/4) + x/2."""
    x = np.asarray(x, dtype=np.float64)
    return 7.0 * np.sin(0.75 * x) + 0.5 * x


def _truth_for(experiment: str) -> GenerativeTruth:
    if experiment == "sinusoid":
        return GenerativeTruth(
            "sinusoid", lambda x: ([1.0], [float(mu_curve(x))], [10.0])
        )
    if experiment in ("mixture", "mixture-multimodal", "mixture-wellspec"):
        def comps(x):
            mu = float(mu_curve(x))
            return [0.5, 0.5], [mu, -mu], [1.0, 1.0]

        return GenerativeTruth("mixture", comps)
    if experiment == "toy":
        return GenerativeTruth(
            "toy", lambda x: (TOY_NU.weights, TOY_NU.locs, TOY_NU.scales)
        )
    raise ValueError(f"experiment {experiment!r} has no generative truth")


def gen_dataset(cfg: ExperimentConfig) -> tuple[Dataset, GenerativeTruth]:
    """Training data plus the exact generative law used for KL evaluation."""
    rng = np.random.default_rng(cfg.seed)
    truth = _truth_for(cfg.experiment)
    n = cfg.n_train
    if cfg.experiment == "toy":
        y = TOY_NU.sample(rng, n)
        return Dataset(np.empty(0), y, "toy", cfg.seed), truth
    x = np.linspace(-10.5, 10.5, n)
    mu = mu_curve(x)
    if cfg.experiment == "sinusoid":
        y = mu + 10.0 * rng.standard_normal(n)
    else:
        sign = rng.integers(0, 2, size=n) * 2 - 1
        y = sign * mu + rng.standard_normal(n)
    return Dataset(x, y, cfg.experiment, cfg.seed), truth


# ---------------------------------------------------------------------------
# Likelihood families (network plus output distribution).
# ---------------------------------------------------------------------------


class MlpNormalLikelihood:
    """MLP predicting the mean of a fixed-scale normal output."""

    def __init__(self, arch: MlpArch, scale: float = 1.0):
        self.arch = arch
        self.scale = scale

    def loglik_node(self, theta_row: ad.Node, x_node: ad.Node, y: np.ndarray) -> ad.Node:
        mu = ad.reshape(mlp_forward(theta_row, self.arch, x_node), (-1,))
        z = (ad.as_node(y) - mu) * (1.0 / self.scale)
        return -0.5 * _LOG_2PI - float(np.log(self.scale)) - 0.5 * z**2

    def loglik_np(self, outs: np.ndarray, y: np.ndarray) -> np.ndarray:
        mu = outs[..., 0]
        z = (y - mu) / self.scale
        return -0.5 * _LOG_2PI - np.log(self.scale) - 0.5 * z**2

    def density_on_grid(self, outs_at_x: np.ndarray, y_grid: np.ndarray) -> np.ndarray:
        mu = outs_at_x[:, 0]
        z = (y_grid[None, :] - mu[:, None]) / self.scale
        dens = np.exp(-0.5 * _LOG_2PI - np.log(self.scale) - 0.5 * z**2)
        return dens.mean(axis=0)


class MlpMixtureLikelihood:
    """MLP predicting the two means of an equal-weight normal mixture output."""

    def __init__(self, arch: MlpArch, scale: float = 1.0):
        if arch.layer_widths[-1] != 2:
            raise ValueError("two-component likelihood needs an output width of 2")
        self.arch = arch
        self.scale = scale

    def loglik_node(self, theta_row: ad.Node, x_node: ad.Node, y: np.ndarray) -> ad.Node:
        mu = mlp_forward(theta_row, self.arch, x_node)  # (n, 2)
        z = (ad.as_node(y[:, None]) - mu) * (1.0 / self.scale)
        comp = -0.5 * _LOG_2PI - float(np.log(self.scale)) - 0.5 * z**2 + float(np.log(0.5))
        return ad.logsumexp(comp, axis=1)

    def loglik_np(self, outs: np.ndarray, y: np.ndarray) -> np.ndarray:
        z = (y[..., None] - outs) / self.scale
        comp = -0.5 * _LOG_2PI - np.log(self.scale) - 0.5 * z**2 + np.log(0.5)
        vmax = comp.max(axis=-1, keepdims=True)
        return (vmax + np.log(np.sum(np.exp(comp - vmax), axis=-1, keepdims=True)))[..., 0]

    def density_on_grid(self, outs_at_x: np.ndarray, y_grid: np.ndarray) -> np.ndarray:
        z = (y_grid[None, :, None] - outs_at_x[:, None, :]) / self.scale
        dens = 0.5 * np.exp(-0.5 * _LOG_2PI - np.log(self.scale) - 0.5 * z**2)
        return dens.sum(axis=-1).mean(axis=0)


def model_for(cfg: ExperimentConfig):
    """Architecture, likelihood, and posterior scheme for an experiment."""
    if cfg.experiment == "sinusoid":
        arch = MlpArch((1, 20, 1), activation="tanh")
        return MlpNormalLikelihood(arch), "mean-field"
    if cfg.experiment == "mixture":
        arch = MlpArch((1, 20, 20, 1), activation="elu")
        return MlpNormalLikelihood(arch), "mean-field"
    if cfg.experiment == "mixture-multimodal":
        arch = MlpArch((1, 20, 20, 1), activation="elu")
        return MlpNormalLikelihood(arch), "mixture"
    if cfg.experiment == "mixture-wellspec":
        arch = MlpArch((1, 20, 20, 2), activation="elu")
        return MlpMixtureLikelihood(arch), "mean-field"
    raise ValueError(f"experiment {cfg.experiment!r} has no trained model")


def _resolve_lambda(cfg: ExperimentConfig) -> float | None:
    if cfg.lambda_mode == "beta-nm":
        return None  # BoundParams default
    if cfg.lambda_mode == "lambda-star":
        return lambda_star(cfg.n_train, cfg.beta, cfg.m)
    return float(cfg.lambda_value)


@dataclass
class ExperimentResult:
    kind: str
    config: ExperimentConfig
    summary: dict
    reports: list = field(default_factory=list)
    predictive_rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    posterior: VariationalPosterior | None = None
    likelihood: object = None


def _loss_node(cfg, ll, kl_node, params):
    if cfg.loss == "elbo":
        return elbo_loss_node(ll, kl_node, params)
    if cfg.loss == "pacm":
        return pacm_loss_node(ll, kl_node, params, allow_small_lambda=True)
    if cfg.loss == "pac2t":
        return pac2t_loss_node(ll, kl_node, params, smoothing=PAC2T_SMOOTHING)
    raise ValueError(f"unknown loss {cfg.loss!r}")


def _train(cfg: ExperimentConfig, step_callback=None) -> ExperimentResult:
    t0 = time.time()
    train, truth = gen_dataset(cfg)
    test, _ = gen_dataset(replace(cfg, seed=cfg.seed + 1))
    likelihood, scheme = model_for(cfg)

    init_rng = np.random.default_rng([cfg.seed, 0])
    train_rng = np.random.default_rng([cfg.seed, 1])
    eval_rng = np.random.default_rng([cfg.seed, 2])

    post, prior_mf = init_params(likelihood.arch, init_rng, scheme=scheme)
    params = BoundParams(n=train.n, m=cfg.m, beta=cfg.beta, lam=_resolve_lambda(cfg))
    opt = OptimizerState(
        kind="adam", lr0=cfg.lr0, decay_rate=cfg.decay_rate, decay_steps=cfg.decay_steps
    )

    x_col = train.x.reshape(-1, 1)
    vec = post.flatten()
    last_good = vec.copy()  # most recent params that produced a finite loss
    reports: list[RiskReport] = []
    nan_aborted = False
    diagnostic = ""

    kl_coeff = cfg.m / params.lam if cfg.loss == "pacm" else 1.0 / (cfg.beta * train.n)
    for step in range(cfg.steps):
        try:
            sample = posterior_sample(post, train_rng, cfg.m, prior=prior_mf)
            x_node = ad.Node(x_col)
            rows = [
                likelihood.loglik_node(ad.take_row(sample.theta, j), x_node, train.y)
                for j in range(cfg.m)
            ]
            ll = ad.stack_rows(rows)
            kl_node = ad.mean_(sample.log_q_minus_log_r)
            kl_val = float(kl_node.value)
            if cfg.loss == "iwae":
                log_w = ad.reshape(-sample.log_q_minus_log_r, (-1, 1))
                total = iwae_loss_node(ll, log_w)
                penalty_val = 0.0
            else:
                total = _loss_node(cfg, ll, kl_node, params)
                penalty_val = kl_val * kl_coeff
            total_val = float(total.value)
            if not np.isfinite(total_val):
                raise ad.GradientNaNError(f"non-finite loss {total_val} at step {step}")
            if step % 100 == 0:
                reports.append(
                    RiskReport(
                        name=cfg.loss,
                        total_nats=total_val,
                        data_term_nats=total_val - penalty_val,
                        kl_term_nats=penalty_val,
                        meta={"step": step, "lr": opt.learning_rate(), "kl_raw_nats": kl_val},
                    )
                )
            grads = ad.grad(total, sample.param_nodes)
            gvec = np.concatenate([g.ravel() for g in grads])
            last_good = vec
            new_vec = optimizer_step(opt, vec, gvec)
        except ad.GradientNaNError as err:
            nan_aborted = True
            diagnostic = str(err)
            post.unflatten(last_good)
            break
        vec = new_vec
        post.unflatten(vec)
        if step_callback is not None:
            step_callback(step, vec)

    lpp, kl_to_truth = evaluate_model(
        post, likelihood, truth, test, cfg.eval_samples, eval_rng
    )
    profile = _predictive_profile(post, likelihood, truth, cfg, eval_rng)

    summary = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "wall_time_s": time.time() - t0,
        "converged": {"training_completed": not nan_aborted, "nan_aborted": nan_aborted},
        "diagnostic": diagnostic,
        "lpp_nats": lpp,
        "lpp_bits": lpp / _LN2,
        "kl_to_truth_nats": kl_to_truth,
        "kl_to_truth_bits": kl_to_truth / _LN2,
        "final_data_term_nats": reports[-1].data_term_nats if reports else None,
        "predictive_std": profile["std"],
        "window_mass": profile["window_mass"],
    }
    return ExperimentResult(
        kind="train",
        config=cfg,
        summary=summary,
        reports=reports,
        predictive_rows=profile["rows"],
        posterior=post,
        likelihood=likelihood,
    )


def _y_grid_for(comps: MixtureNormal1D, points: int = 1201) -> np.ndarray:
    smax = float(np.max(comps.scales))
    lo = float(np.min(comps.locs) - 8.0 * smax)
    hi = float(np.max(comps.locs) + 8.0 * smax)
    return np.linspace(lo, hi, points)


def evaluate_model(
    posterior: VariationalPosterior,
    likelihood,
    truth: GenerativeTruth,
    test: Dataset,
    eval_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Negative log posterior predictive and mean per-x KL to the truth.

    The KL is a y-grid quadrature covering eight truth scales around every
    conditional component, averaged over the test inputs.
    """
    if eval_samples < 1:
        raise ValueError("eval_samples must be >= 1")
    thetas = posterior_sample_np(posterior, rng, eval_samples)
    x_col = test.x.reshape(-1, 1)
    outs = mlp_forward_np(thetas, likelihood.arch, x_col)  # (S, n, K)
    llmat = likelihood.loglik_np(outs, test.y)  # (S, n)
    vmax = llmat.max(axis=0)
    lpp = -float(np.mean(vmax + np.log(np.mean(np.exp(llmat - vmax), axis=0))))

    kls = np.empty(test.n)
    for i in range(test.n):
        comps = truth.conditional(test.x[i])
        grid = _y_grid_for(comps)
        coverage = float(comps.cdf(grid[-1]) - comps.cdf(grid[0]))
        if coverage < 1.0 - 1e-6:
            raise MassCoverageError(f"y-grid covers only {coverage} of the truth mass")
        step = grid[1] - grid[0]
        pstar = comps.pdf(grid)
        phat = np.maximum(likelihood.density_on_grid(outs[:, i, :], grid), 1e-300)
        kls[i] = float(np.sum(pstar * (np.log(np.maximum(pstar, 1e-300)) - np.log(phat))) * step)
    return lpp, float(np.mean(kls))


def _predictive_profile(post, likelihood, truth, cfg, rng) -> dict:
    """Predictive densities, standard deviations, and mode-window masses at
    nine evenly spaced probe inputs."""
    probes = np.linspace(-10.5, 10.5, 9)
    thetas = posterior_sample_np(post, rng, cfg.eval_samples)
    outs = mlp_forward_np(thetas, likelihood.arch, probes.reshape(-1, 1))  # (S, 9, K)
    rows = []
    stds = {}
    window_mass = {}
    two_sided = truth.tag == "mixture"
    for i, px in enumerate(probes):
        comps = truth.conditional(px)
        grid = _y_grid_for(comps)
        step = grid[1] - grid[0]
        dens = likelihood.density_on_grid(outs[:, i, :], grid)
        mass = float(dens.sum() * step)
        mean = float((grid * dens).sum() * step / mass)
        second = float((grid**2 * dens).sum() * step / mass)
        stds[f"{px:.4f}"] = float(np.sqrt(max(second - mean**2, 0.0)))
        if two_sided:
            mu = float(mu_curve(px))
            masses = {}
            for label, center in (("pos", abs(mu)), ("neg", -abs(mu))):
                sel = (grid >= center - 2.0) & (grid <= center + 2.0)
                masses[label] = float(dens[sel].sum() * step)
            window_mass[f"{px:.4f}"] = masses
        for g, d in zip(grid, dens):
            rows.append((float(px), float(g), float(d)))
    return {"rows": rows, "std": stds, "window_mass": window_mass}


# ---------------------------------------------------------------------------
# Toy pipeline: six solvers, one Table-style summary.
# ---------------------------------------------------------------------------


def _kl_nu_vs_density(pred_pdf: np.ndarray, x: np.ndarray, step: float) -> float:
    nu = TOY_NU.pdf(x)
    pred = np.maximum(pred_pdf, 1e-300)
    return float(np.sum(nu * (np.log(np.maximum(nu, 1e-300)) - np.log(pred))) * step)


def _run_toy(cfg: ExperimentConfig) -> ExperimentResult:
    from .distributions import AtomicMixture, predictive_density

    t0 = time.time()
    rng = np.random.default_rng(cfg.seed)
    data = TOY_NU.sample(rng, cfg.n_train)
    model_scale = 1.0
    x_grid = Grid1D(-16.0, 16.0, 4001)
    x = x_grid.points()

    # Inferential solvers: maximum likelihood, conjugate Bayes, true optimum.
    ml_mean = float(np.mean(data))
    bayes = conjugate_posterior(TOY_PRIOR, data, model_scale)
    optima = toy_optima(TOY_NU, model_scale)

    # Predictive solvers: atomic empirical fit and the grid fixed point.
    erm = atomic_erm(data, k=300, model_scale=model_scale, rng=np.random.default_rng([cfg.seed, 1]))
    fp = fixed_point_pacpred(TOY_PRIOR, data, model_scale, FixedPointConfig(beta=cfg.beta))

    ml_atom = AtomicMixture(np.ones(1), np.array([ml_mean]), component_scale=0.0)
    predictives = {
        "emp_inf": predictive_density(ml_atom, model_scale, x),
        "pac_inf": predictive_density(bayes, model_scale, x),
        "true_inf": predictive_density(optima.inf_opt, model_scale, x),
        "emp_pred": erm.mixture.pdf(x),
        "pac_pred": predictive_density(fp.density, model_scale, x),
        "true_pred": predictive_density(optima.pred_opt, model_scale, x),
    }
    risks = {}
    for name, dens in predictives.items():
        kl = _kl_nu_vs_density(dens, x, x_grid.step)
        risks[name] = {"kl_nats": kl, "kl_bits": kl / _LN2}

    conj_grid = _discretize_on(fp.density.grid, bayes)
    objective_fp = pacpred_grid_objective(fp.density, TOY_PRIOR, data, model_scale, cfg.beta)
    objective_conj = pacpred_grid_objective(conj_grid, TOY_PRIOR, data, model_scale, cfg.beta)

    # predictive.csv carries the x-line profile of every solver (downsampled).
    rows = [("truth", float(xi), float(d)) for xi, d in zip(x[::8], TOY_NU.pdf(x[::8]))]
    for name, dens in predictives.items():
        for xi, d in zip(x[::8], np.asarray(dens)[::8]):
            rows.append((name, float(xi), float(d)))

    summary = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "wall_time_s": time.time() - t0,
        "data": data.tolist(),
        "risks": risks,
        "risk_order": ["emp_inf", "pac_inf", "true_inf", "emp_pred", "pac_pred", "true_pred"],
        "converged": {
            "fixed_point_converged": fp.converged,
            "fixed_point_iterations": fp.iterations,
            "fixed_point_residual": fp.residual,
            "atomic_erm_converged": erm.converged,
            "atomic_erm_iterations": erm.iterations,
        },
        "fixed_point_objective": objective_fp,
        "conjugate_grid_objective": objective_conj,
    }
    return ExperimentResult(kind="toy", config=cfg, summary=summary, predictive_rows=rows)


def _discretize_on(grid: Grid1D, dist: Normal1D):
    from .numerics import normalize_log_density

    return normalize_log_density(grid, dist.log_prob(grid.points()))


def _run_verify(cfg: ExperimentConfig) -> ExperimentResult:
    t0 = time.time()
    rng = np.random.default_rng(cfg.seed)
    toy_post = VariationalPosterior(
        kind="mean-field",
        locs=np.zeros((1, 1)),
        raw_scales=np.full((1, 1), np.log(3.0)),
        component_probs=np.ones(1),
    )
    data = TOY_NU.sample(rng, 5)
    reports = [check_monotone_chain(toy_post, data, 1.0, rng=rng)]
    reports.extend(check_inequality_lemmas(rng, trials=cfg.trials))
    reports.append(check_lambda_star(n=10, beta=1.0, m_list=(2, 4, 16, 64)))
    summary = {
        "config": asdict(cfg),
        "seed": cfg.seed,
        "wall_time_s": time.time() - t0,
        "all_passed": all(r.passed for r in reports),
    }
    return ExperimentResult(
        kind="verify", config=cfg, summary=summary, checks=[r.to_dict() for r in reports]
    )


def run_experiment(cfg: ExperimentConfig, step_callback=None) -> ExperimentResult:
    """Run one experiment end to end and write its artifacts to cfg.out_dir."""
    if cfg.experiment == "toy":
        result = _run_toy(cfg)
    elif cfg.experiment == "verify":
        result = _run_verify(cfg)
    else:
        result = _train(cfg, step_callback=step_callback)
    emit_report(result, cfg.out_dir)
    return result


# ---------------------------------------------------------------------------
# Artifact emission.
# ---------------------------------------------------------------------------


def emit_report(result: ExperimentResult, out_dir: str) -> dict:
    """Write metrics.csv, summary.json, predictive.csv, and checks.json.

    CSV bodies are deterministic given the seed; summary.json additionally
    carries the (non-deterministic) wall time.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    if result.reports:
        path = os.path.join(out_dir, "metrics.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "data_term_nats", "kl_term_nats", "lr"])
            for rep in result.reports:
                writer.writerow(
                    [
                        rep.meta["step"],
                        repr(rep.total_nats),
                        repr(rep.data_term_nats),
                        repr(rep.kl_term_nats),
                        repr(rep.meta["lr"]),
                    ]
                )
        paths["metrics"] = path

    if result.predictive_rows:
        path = os.path.join(out_dir, "predictive.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            if result.kind == "toy":
                writer.writerow(["solver", "x", "density"])
                for name, xi, d in result.predictive_rows:
                    writer.writerow([name, repr(xi), repr(d)])
            else:
                writer.writerow(["probe_x", "y", "density"])
                for px, g, d in result.predictive_rows:
                    writer.writerow([repr(px), repr(g), repr(d)])
        paths["predictive"] = path

    if result.checks:
        path = os.path.join(out_dir, "checks.json")
        with open(path, "w") as fh:
            json.dump(result.checks, fh, indent=2, sort_keys=True)
        paths["checks"] = path

    if result.posterior is not None:
        path = os.path.join(out_dir, "posterior.json")
        with open(path, "w") as fh:
            json.dump(
                {
                    "kind": result.posterior.kind,
                    "locs": result.posterior.locs.tolist(),
                    "raw_scales": result.posterior.raw_scales.tolist(),
                    "component_probs": result.posterior.component_probs.tolist(),
                },
                fh,
                indent=2,
                sort_keys=True,
            )
        paths["posterior"] = path

    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
    paths["summary"] = path
    return paths


def run_sweep(config_path: str) -> list[ExperimentResult]:
    """Fan a flat config out over list-valued fields and merge summaries."""
    with open(config_path) as fh:
        raw = json.load(fh)
    base_out = raw.get("out_dir", "runs/sweep")
    combos = [dict()]
    for key, value in raw.items():
        if isinstance(value, list):
            combos = [dict(c, **{key: v}) for c in combos for v in value]
        else:
            combos = [dict(c, **{key: value}) for c in combos]
    results = []
    merged = []
    for combo in combos:
        experiment = combo.pop("experiment")
        combo["out_dir"] = os.path.join(
            base_out, f"{experiment}_{combo.get('loss', 'pacm')}_s{combo.get('seed', 0)}"
        )
        cfg = desk_config(experiment, **combo)
        result = run_experiment(cfg)
        results.append(result)
        merged.append({"out_dir": cfg.out_dir, "summary": result.summary})
    os.makedirs(base_out, exist_ok=True)
    with open(os.path.join(base_out, "sweep_summary.json"), "w") as fh:
        json.dump(merged, fh, indent=2, sort_keys=True)
    return results
