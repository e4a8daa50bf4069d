"""Fixed-horizon active hypothesis testing with an inconclusive option.

Core pieces: validated finite models (model), log-domain beliefs and
confidence levels (belief), per-hypothesis zero-sum games over KL payoffs
(divergence), selection and inference strategies (strategies), Monte Carlo
and exact-enumeration engines (engine), and closed-form bound evaluation
(bounds). The `ahtest` CLI wraps everything for batch use.
"""

from .belief import (
    Belief,
    Trajectory,
    bllr,
    confidence_increment,
    posterior_from_trajectory,
    prior_belief,
    update_belief,
)
from .bounds import (
    BoundReport,
    bound_report,
    exponent_table,
    p2_achievable_rates,
    misclassification_lower_bound,
    misclassification_upper_bound,
    write_exponent_csv,
)
from .divergence import (
    KLMatrix,
    SaddlePoint,
    SaddleSolverError,
    kl_divergence,
    kl_matrix,
    saddle_points,
    solve_matrix_game,
    solve_saddle,
)
from .engine import (
    EnumerationBudgetError,
    RunConfig,
    RunReport,
    enumerate_exact,
    enumerate_pair_expectations,
    episode_seed,
    estimate_jng,
    monte_carlo,
    run_episode,
)
from .model import (
    EpsilonSchedule,
    Model,
    ModelError,
    ModelFormatError,
    ModelValidationError,
    lambda_bound,
    load_model,
    log_likelihood_ratio,
)
from .strategies import (
    ChernoffSelection,
    ECRLookaheadSelection,
    EJSGreedySelection,
    FBarInference,
    FixedThresholdInference,
    MAPInference,
    OpenLoopSelection,
    P2Inference,
    UniformSelection,
    ejs_divergence,
    infer_map_forced,
    infer_p2_threshold,
    infer_threshold_f_bar,
    select_chernoff,
    select_ecr_lookahead,
    select_ejs_greedy,
    select_openloop,
)

__version__ = "0.1.0"
