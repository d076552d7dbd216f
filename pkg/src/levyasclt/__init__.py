"""Simulation and Monte Carlo verification of almost-sure central limit
theorems for Levy-driven martingales."""

from .asclt import EmpiricalMeasure, cf_distance, ks_distance, log_empirical_measure, marginal_ks
from .errors import *  # noqa: F401,F403
from .estimators import (
    EstimatorKind,
    EstimatorSeries,
    LogRate,
    PolyRate,
    clt_constants,
    clt_statistic,
    lil_bound,
    lil_statistic,
    lil_sup,
    lindeberg_diagnostic,
    matrix_clt_statistic,
    matrix_lfq,
    sigma2_hat,
    sigma2_tilde,
)
from .harness import ExperimentConfig, derive_seed, load_config, run_experiment
from .levy import (
    ConstantWeight,
    DiscreteJumps,
    ExpWeight,
    LevyModel,
    NormalJumps,
    PowerWeight,
    SamplePath,
    UniformJumps,
    WeightedPath,
    predictable_variation,
    quadratic_variation,
    simulate_path,
    simulate_vector_path,
    weighted_integral,
)
from .linalg import is_positive_definite, logdet_sq, lyapunov_solve, psd_order_leq
from .normalization import (
    CustomFamily,
    ExpScale,
    PowerDiag,
    SqrtScalar,
    WeightedExp,
    check_conditions,
    logdet_identity_residual,
)

__version__ = "0.1.0"
