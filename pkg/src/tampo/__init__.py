"""Adaptive sampling-temperature meta-policy on top of GRPO, at desk scale."""

from .envs import (
    EvalReport,
    GenerationCounter,
    RolloutGroup,
    TaskSpec,
    generate_group,
    init_params,
    make_suite,
    pass_at_k,
    reward,
)
from .grpo import GrpoConfig, group_advantages, grpo_objective_grad, policy_update
from .policy import PolicyParams, Trajectory, logits, logprob_and_grad, sample_token, temp_softmax
from .tempmeta import (
    MetaPolicyState,
    TampoConfig,
    TemperatureGrid,
    avg_loglik_at_temp,
    batch_aggregate,
    ema_update,
    likelihood_optimal_temp,
    meta_distribution,
    sample_temperature,
    sparsemax,
    temp_specific_advantages,
)
from .trainer import Schedule, TrainRun, optimal_temperature_diagnostic, train

__version__ = "0.1.0"
