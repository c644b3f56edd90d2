"""Importance-weighted meta-imitation learning on corridor-navigation tasks."""

from .policy import (
    PolicyParams,
    Sample,
    batch_grad,
    forward,
    grad_matrix,
    init_params,
    nll_loss,
    per_sample_grad,
    predict,
    sgd_step,
)
from .reweight import (
    WeightState,
    alignment_cost,
    grad_wrt_logits,
    grad_wrt_weights,
    softmax_jacobian,
    softmax_weights,
    update_logits,
    weighted_grad,
)
from .encoder import Theme, encode, make_theme
from .envs import (
    AgentState,
    EnvConfig,
    RolloutLog,
    TaskSpec,
    corrupt_labels,
    expert_action,
    make_task,
    rollout,
)
from .dagger import (
    AdaptResult,
    TrainConfig,
    TrialMetrics,
    adapt,
    baseline_dagger,
    baseline_finetune,
    evaluate,
    train_base,
)

__all__ = [
    "PolicyParams", "Sample", "forward", "nll_loss", "per_sample_grad",
    "batch_grad", "grad_matrix", "sgd_step", "predict", "init_params",
    "WeightState", "softmax_weights", "softmax_jacobian", "weighted_grad",
    "alignment_cost", "grad_wrt_weights", "grad_wrt_logits", "update_logits",
    "Theme", "make_theme", "encode",
    "EnvConfig", "TaskSpec", "AgentState", "RolloutLog", "make_task",
    "expert_action", "rollout", "corrupt_labels",
    "TrainConfig", "AdaptResult", "TrialMetrics", "train_base", "adapt",
    "baseline_dagger", "baseline_finetune", "evaluate",
]
