"""Parallel batch Gaussian-process bandit (GP-UCB) hyperparameter tuning."""

from .acquisition import (
    AcquisitionParams,
    BatchProposal,
    argmax_mc,
    beta_schedule,
    propose_batch_clustering,
    propose_batch_hallucination,
    propose_batch_random,
    ucb_score,
)
from .domain import (
    Categorical,
    Continuous,
    IntRange,
    SearchSpace,
    decode,
    default_mc_budget,
    encode,
    loguniform,
    parse_space,
    sample_configurations,
    serialize_space,
    uniform,
)
from .optimizer import (
    TrialHistory,
    TuneAborted,
    TunerConfig,
    TuneResult,
    best_so_far_series,
    incorporate_results,
    tune,
)
from .scheduler import (
    BatchObjectiveScheduler,
    SerialScheduler,
    ThreadPoolScheduler,
    WorkerProtocolScheduler,
    pool_evaluate,
    serial_evaluate,
    worker_protocol_evaluate,
)
from .surrogate import GPState, KernelParams, fit_gp, hallucinate, posterior, select_kernel_params

__version__ = "0.1.0"
