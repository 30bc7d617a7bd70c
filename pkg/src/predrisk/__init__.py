"""Multisample predictive-risk objectives for variational inference.

The package covers the full risk family (single-sample bound, multisample
predictive bound, variance-corrected bound, importance-weighted bound), the
gap/offset machinery behind them, a small reverse-mode tape sufficient to
train mean-field MLP posteriors, the 1-D toy-model solvers, executable
inequality checks, and the desk-scale experiment harness.
"""

from .distributions import (
    AtomicMixture,
    GridDensity,
    MeanFieldGaussian,
    MixtureNormal1D,
    Normal1D,
    kl_grid,
    kl_iid_product,
    kl_mean_field,
    kl_normal_normal,
    predictive_density,
)
from .numerics import (
    Grid1D,
    log_avg_exp_tempered,
    log_mean_exp,
    log_sum_exp,
    normalize_log_density,
)
from .objectives import (
    BoundParams,
    GapStats,
    LogLikMatrix,
    PsiEstimate,
    RiskReport,
    delta_gap,
    elbo_loss,
    emp_inf_risk,
    iwae_loss,
    lambda_star,
    mc_pred_term,
    pac2t_loss,
    pacm_loss,
    psi_mc,
    psi_upper_bound,
    true_risks_toy,
)
from .toy_solver import (
    FixedPointConfig,
    atomic_erm,
    conjugate_posterior,
    fixed_point_pacpred,
    toy_optima,
)
from .models import (
    MlpArch,
    OptimizerState,
    VariationalPosterior,
    init_params,
    mlp_forward,
    optimizer_step,
    posterior_sample,
)
from .theory_checks import (
    CheckReport,
    check_inequality_lemmas,
    check_lambda_star,
    check_monotone_chain,
)
from .experiments import (
    Dataset,
    ExperimentConfig,
    desk_config,
    evaluate_model,
    gen_dataset,
    run_experiment,
)

__all__ = [
    "AtomicMixture",
    "BoundParams",
    "CheckReport",
    "Dataset",
    "ExperimentConfig",
    "FixedPointConfig",
    "GapStats",
    "Grid1D",
    "GridDensity",
    "LogLikMatrix",
    "MeanFieldGaussian",
    "MixtureNormal1D",
    "MlpArch",
    "Normal1D",
    "OptimizerState",
    "PsiEstimate",
    "RiskReport",
    "VariationalPosterior",
    "atomic_erm",
    "check_inequality_lemmas",
    "check_lambda_star",
    "check_monotone_chain",
    "conjugate_posterior",
    "delta_gap",
    "desk_config",
    "elbo_loss",
    "emp_inf_risk",
    "evaluate_model",
    "fixed_point_pacpred",
    "gen_dataset",
    "init_params",
    "iwae_loss",
    "kl_grid",
    "kl_iid_product",
    "kl_mean_field",
    "kl_normal_normal",
    "lambda_star",
    "log_avg_exp_tempered",
    "log_mean_exp",
    "log_sum_exp",
    "mc_pred_term",
    "mlp_forward",
    "normalize_log_density",
    "optimizer_step",
    "pac2t_loss",
    "pacm_loss",
    "posterior_sample",
    "predictive_density",
    "psi_mc",
    "psi_upper_bound",
    "run_experiment",
    "toy_optima",
    "true_risks_toy",
]

__version__ = "0.1.0"
