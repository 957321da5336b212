"""Stochastic feedforward networks with binary hidden units.

Training maximizes the M-particle mixture criterion
C_hat_M = log(1/M sum_m P(y | h_m)) with h_m sampled layerwise from logistic
Bernoulli units. The package provides the sampling forward pass, five
gradient estimators over the sampled units, deterministic and hybrid
comparison variants, an exact enumeration oracle for small networks, the
training loop with triangle learning-rate schedule and grid search, data
pipelines, and analysis tools (particle curves, centering scans, sample
grids).
"""

from .estimators import (
    BaselineState,
    ESTIMATOR_IDS,
    apply_estimator,
    estimate_g1,
    estimate_g2,
    estimate_g3,
    estimate_g4,
    estimate_g5,
    output_gradient,
    responsibilities,
)
from .forward import (
    ParticleTrace,
    criterion_hat,
    forward_sample,
    output_log_prob,
    predict_class,
    predict_proba,
)
from .network import (
    Architecture,
    CheckpointFormatError,
    GradientSet,
    Params,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .oracle import (
    BudgetExceededError,
    EnumerationBudget,
    ToyGame,
    exact_criterion,
    exact_gradient,
    expected_estimator,
    finite_difference_gradient,
    score_function_expectation,
)
from .rng import RngStream, bernoulli
from .training import (
    LR_GRID,
    TaskSplit,
    TrainConfig,
    TrainResult,
    evaluate,
    grid_search,
    lr_at,
    sgd_step,
    train,
)

__version__ = "0.1.0"
