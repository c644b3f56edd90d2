"""Two-phase training orchestration.

Phase 1 trains a base policy by dataset aggregation over the train tasks.
Phase 2 adapts it to an unseen task: each outer iteration rolls the current
policy on the test task, fits the importance weights over the aggregated
training samples by gradient alignment against the test batch, and takes one
descent step along the weighted training gradient. Two baselines (plain
aggregation including the test task, and test-task-only fine-tuning) share
the same machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import EnvConfig, TaskSpec, corrupt_labels, make_task, rollout
from .policy import (
    PolicyParams,
    Sample,
    batch_grad_arrays,
    grad_matrix_arrays,
    init_params,
    predict_batch,
    sgd_step,
    states_actions,
)
from .reweight import WeightState, update_logits, weighted_grad

_SALT_TRAIN = 0xA11CE
_SALT_ADAPT = 0xB0B
_SALT_FINETUNE = 0xF17E


@dataclass
class TrainConfig:
    """Step sizes, loop lengths and the experiment seed.

    Defaults are the desk-scale preset; the paper-scale preset multiplies the
    loop lengths by ten (tau=3000, tau_hat=4000).
    """

    alpha: float = 0.01
    beta: float = 0.01
    gamma: float = 0.05
    K: int = 10
    tau: int = 300
    tau_hat: int = 400
    n_train_tasks: int = 6
    trajectories_per_task: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.alpha <= 0 or self.beta <= 0 or self.gamma <= 0:
            raise ValueError("alpha, beta and gamma must be positive")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if self.tau < 0 or self.tau_hat < 0:
            raise ValueError("tau and tau_hat must be nonnegative")
        if self.n_train_tasks < 1 or self.trajectories_per_task < 1:
            raise ValueError("need at least one train task and one trajectory per task")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class TrialMetrics:
    """Accuracy and intervention count for one episode."""

    trial: int
    steps: int
    accuracy: float
    overrides: int


@dataclass
class EvalResult:
    trials: list[TrialMetrics]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([t.accuracy for t in self.trials]))

    @property
    def total_overrides(self) -> int:
        return sum(t.overrides for t in self.trials)


@dataclass
class AdaptResult:
    """Adapted parameters plus the weight evolution and per-trial metrics."""

    final_params: PolicyParams
    weight_trace: list[tuple[int, WeightState]]
    metrics: list[TrialMetrics]

    @property
    def final_weights(self) -> WeightState:
        if not self.weight_trace:
            raise ValueError("adaptation ran zero iterations; no weights recorded")
        return self.weight_trace[-1][1]


def train_task_seeds(config: TrainConfig) -> list[int]:
    return [config.seed * 1000 + i for i in range(config.n_train_tasks)]


def test_task_seed(config: TrainConfig) -> int:
    return config.seed * 1000 + 999


def make_train_tasks(config: TrainConfig, env: EnvConfig) -> list[TaskSpec]:
    return [make_task(s, env) for s in train_task_seeds(config)]


def make_test_task(config: TrainConfig, env: EnvConfig) -> TaskSpec:
    return make_task(test_task_seed(config), env)


def _fit_epochs(theta: PolicyParams, dataset: list[Sample], steps: int,
                lr: float) -> PolicyParams:
    """steps full-batch descent steps on the dataset."""
    states, actions = states_actions(dataset)
    for _ in range(steps):
        theta = sgd_step(theta, batch_grad_arrays(theta, states, actions), lr)
    return theta


def _trial_metrics(params: PolicyParams, log, trial: int) -> TrialMetrics:
    states, labels = states_actions(log.samples)
    accuracy = float(np.mean(predict_batch(params, states) == labels))
    return TrialMetrics(trial=trial, steps=len(log.samples), accuracy=accuracy,
                        overrides=len(log.overrides))


def usable_track_span(task: TaskSpec) -> float:
    """Arc length over which an episode can start and still fit on the track."""
    env = task.cfg
    arc = task.episode_len * env.speed * env.dt
    return max(task.total_len - arc - env.lookahead - 1.0, 0.0)


def train_base(train_tasks: list[TaskSpec], config: TrainConfig,
               corrupt_frac: float = 0.0) -> tuple[PolicyParams, list[Sample]]:
    """Aggregate DAGGER training over the train tasks.

    Per task: roll the current policy with expert labeling
    (trajectories_per_task episodes staggered along the track so the
    aggregate covers its full geometry), union into the aggregate, then tau
    full-batch descent steps at rate alpha. Returns the converged parameters
    and the aggregate. corrupt_frac > 0 corrupts that fraction of each task's
    freshly collected labels before aggregation.
    """
    if not train_tasks:
        raise ValueError("train_base needs at least one task")
    env = train_tasks[0].cfg
    root = np.random.SeedSequence((_SALT_TRAIN, config.seed))
    children = root.spawn(1 + len(train_tasks))
    theta = init_params(env.n_actions, env.dim, np.random.default_rng(children[0]))

    dataset: list[Sample] = []
    for i, task in enumerate(train_tasks):
        streams = children[1 + i].spawn(config.trajectories_per_task + 1)
        span = usable_track_span(task)
        denom = max(config.trajectories_per_task - 1, 1)
        collected: list[Sample] = []
        for j in range(config.trajectories_per_task):
            log = rollout(theta, task, expert_labeling=True,
                          rng=np.random.default_rng(streams[j]),
                          start_progress=span * j / denom)
            collected.extend(log.samples)
        if corrupt_frac > 0.0:
            collected = corrupt_labels(collected, corrupt_frac,
                                       np.random.default_rng(streams[-1]),
                                       n_actions=env.n_actions)
        dataset.extend(collected)
        theta = _fit_epochs(theta, dataset, config.tau, config.alpha)
    return theta, dataset


def adapt(theta_star: PolicyParams, train_dataset: list[Sample],
          test_task: TaskSpec, config: TrainConfig,
          rollout_budget: int | None = None,
          rollout_stride: int = 1) -> AdaptResult:
    """Importance-weighted adaptation of theta_star to the test task.

    Per outer iteration: a test-task rollout extends the test batch; K
    logit-descent steps fit the weights so the weighted training gradient
    aligns with the test-batch gradient; then one step of size beta along the
    weighted training gradient updates the policy. Logits persist across
    iterations and start at zero (uniform weights); K == 0 skips the weight
    fit entirely, reducing to unweighted descent on the aggregate.

    rollout_budget caps how many test episodes may be collected (the trial
    budget of the few-shot experiments); once spent, iterations continue on
    the frozen batch. None means one rollout every iteration. rollout_stride
    spaces the budgeted episodes rollout_stride iterations apart so later
    trials are driven by a partially adapted policy. Weight movement per
    iteration scales like gamma*K/N, so a useful fit needs tau_hat on the
    order of N/(gamma*K) regardless of the budget.
    """
    if not train_dataset:
        raise ValueError("adapt needs a nonempty training dataset")
    env = test_task.cfg
    if theta_star.state_dim != env.dim or theta_star.n_actions != env.n_actions:
        raise ValueError(
            f"policy shape ({theta_star.n_actions}, {theta_star.state_dim}) does not "
            f"match environment ({env.n_actions}, {env.dim})"
        )
    if rollout_budget is not None and rollout_budget < 1:
        raise ValueError(f"rollout_budget must be >= 1, got {rollout_budget}")
    if rollout_stride < 1:
        raise ValueError(f"rollout_stride must be >= 1, got {rollout_stride}")
    train_states, train_actions = states_actions(train_dataset)

    root = np.random.SeedSequence((_SALT_ADAPT, config.seed))
    streams = root.spawn(max(config.tau_hat, 1))
    phi = theta_star.copy()
    wstate = WeightState.uniform(len(train_dataset))
    test_data: list[Sample] = []
    test_states = test_labels = None
    trace: list[tuple[int, WeightState]] = []
    metrics: list[TrialMetrics] = []

    for t in range(config.tau_hat):
        due = (rollout_budget is None or
               (t % rollout_stride == 0 and len(metrics) < rollout_budget))
        if due:
            log = rollout(phi, test_task, expert_labeling=True,
                          rng=np.random.default_rng(streams[t]))
            test_data.extend(log.samples)
            metrics.append(_trial_metrics(phi, log, trial=len(metrics)))
            test_states, test_labels = states_actions(test_data)

        grads = grad_matrix_arrays(phi, train_states, train_actions)
        if config.K > 0:
            target = batch_grad_arrays(phi, test_states, test_labels)
            wstate = update_logits(wstate, grads, target, config.gamma, config.K)
        phi = sgd_step(phi, weighted_grad(wstate.weights, grads), config.beta)
        trace.append((t, wstate.copy()))

    return AdaptResult(final_params=phi, weight_trace=trace, metrics=metrics)


def baseline_dagger(train_tasks: list[TaskSpec], test_task: TaskSpec,
                    config: TrainConfig, n_test_trials: int,
                    return_metrics: bool = False):
    """Plain aggregation baseline: the test task joins the task loop.

    Mirrors train_base's per-task structure: the current policy collects all
    n_test_trials episodes on the test task, they are unioned into the
    aggregate, and one tau-step block fits the whole thing with uniform
    weighting. With zero trials this is exactly the train_base parameters.
    return_metrics additionally reports per-trial accuracy and overrides of
    the collection episodes.
    """
    theta, dataset = train_base(train_tasks, config)
    root = np.random.SeedSequence((_SALT_ADAPT, config.seed))
    streams = root.spawn(max(n_test_trials, 1))
    metrics: list[TrialMetrics] = []
    for trial in range(n_test_trials):
        log = rollout(theta, test_task, expert_labeling=True,
                      rng=np.random.default_rng(streams[trial]))
        dataset.extend(log.samples)
        metrics.append(_trial_metrics(theta, log, trial=trial))
    if n_test_trials > 0:
        theta = _fit_epochs(theta, dataset, config.tau, config.alpha)
    if return_metrics:
        return theta, metrics
    return theta


def baseline_finetune(test_task: TaskSpec, config: TrainConfig,
                      n_trials: int, return_metrics: bool = False):
    """Test-task-only baseline: DAGGER from random initialization."""
    env = test_task.cfg
    root = np.random.SeedSequence((_SALT_FINETUNE, config.seed))
    streams = root.spawn(1 + max(n_trials, 0))
    theta = init_params(env.n_actions, env.dim, np.random.default_rng(streams[0]))
    dataset: list[Sample] = []
    metrics: list[TrialMetrics] = []
    for trial in range(n_trials):
        log = rollout(theta, test_task, expert_labeling=True,
                      rng=np.random.default_rng(streams[1 + trial]))
        dataset.extend(log.samples)
        metrics.append(_trial_metrics(theta, log, trial=trial))
        theta = _fit_epochs(theta, dataset, config.tau, config.alpha)
    if return_metrics:
        return theta, metrics
    return theta


def evaluate(params: PolicyParams, task: TaskSpec, n_trials: int,
             rng: np.random.Generator, start: float | None = None) -> EvalResult:
    """Score the policy over fresh expert-labeled rollouts.

    Labels are used for scoring only. Accuracy is the fraction of visited
    states where predict() matches the expert label; overrides are counted
    per trial. By default each trial starts centered and aligned at a random
    arc position so scores reflect the whole track, not just the opening
    straight; pass start to anchor every trial at one position instead.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    max_start = usable_track_span(task)
    trials = []
    for i in range(n_trials):
        at = float(rng.uniform(0.0, max_start)) if start is None else float(start)
        log = rollout(params, task, expert_labeling=True, rng=rng,
                      start_progress=at)
        trials.append(_trial_metrics(params, log, trial=i))
    return EvalResult(trials=trials)
