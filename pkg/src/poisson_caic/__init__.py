"""Poisson regression with random effects and conditional AIC."""

from .criteria import (
    CriteriaReport,
    FixedThetaFitter,
    GlmFitter,
    GlmmFitter,
    PenaltyResult,
    RefitError,
    caic,
    classical_aic,
    compute_penalty_K,
    maic,
    score_models,
)
from .estimation import (
    Convergence,
    FitResult,
    aghq_marginal_loglik,
    fit_fixed_glm,
    fit_glmm,
    joint_mode,
    joint_objective,
    laplace_marginal_loglik,
    refit_effects,
)
from .model import (
    Cluster,
    ClusteredCounts,
    ModelKind,
    ModelSpec,
    Parameters,
    SolverControls,
    conditional_log_lik,
    fitted_means,
    linear_predictor,
    read_csv,
    write_csv,
)
from .simlab import (
    ExperimentReport,
    SimulationDesign,
    bc_analytic,
    bc_monte_carlo,
    poisson_shift_oracle,
    run_selection_experiment,
    run_table1,
    simulate_dataset,
)

__version__ = "0.1.0"
