"""Command-line harness: config parsing, experiment runs, CSV/binary export.

Subcommands: train, adapt, eval, corrupt-exp, dump-weights. Every run is a
deterministic function of (config file, flags, seed); reruns produce
byte-identical artifacts. Exit codes: 0 success, 2 config error, 3 I/O
error, 4 shape mismatch.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import struct
import sys
from dataclasses import dataclass, replace

import numpy as np

from .dagger import (
    AdaptResult,
    TrainConfig,
    TrialMetrics,
    adapt,
    baseline_dagger,
    baseline_finetune,
    evaluate,
    make_test_task,
    make_train_tasks,
    test_task_seed,
    train_base,
)
from .envs import EnvConfig, make_task
from .policy import PolicyParams, Sample
from .reweight import WeightState

_SALT_EVAL = 0xE7A1
PARAMS_VERSION = 1


class ConfigError(Exception):
    """Bad key, bad value or violated constraint in the run configuration."""


class ShapeError(Exception):
    """Loaded artifact dimensions disagree with the configuration."""


@dataclass
class RunConfig:
    """Full experiment configuration: training loop plus environment knobs."""

    alpha: float = 0.01
    beta: float = 0.01
    gamma: float = 0.05
    K: int = 10
    tau: int = 300
    tau_hat: int = 400
    n_train_tasks: int = 6
    trajectories_per_task: int = 4
    seed: int = 0
    d: int = 8
    A: int = 5
    episode_len: int = 100
    override_threshold: float = 0.8
    corrupt_frac: float = 0.5
    out_dir: str = "out"
    preset: str = "desk"

    def train_config(self) -> TrainConfig:
        return TrainConfig(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                           K=self.K, tau=self.tau, tau_hat=self.tau_hat,
                           n_train_tasks=self.n_train_tasks,
                           trajectories_per_task=self.trajectories_per_task,
                           seed=self.seed)

    def env_config(self) -> EnvConfig:
        return EnvConfig(dim=self.d, n_actions=self.A,
                         episode_len=self.episode_len,
                         override_threshold=self.override_threshold)


_PRESETS = {
    "desk": {"tau": 300, "tau_hat": 400, "episode_len": 100},
    "paper": {"tau": 3000, "tau_hat": 4000, "episode_len": 1000},
}

_INT_FIELDS = {"K", "tau", "tau_hat", "n_train_tasks", "trajectories_per_task",
               "seed", "d", "A", "episode_len"}
_FLOAT_FIELDS = {"alpha", "beta", "gamma", "override_threshold", "corrupt_frac"}
_STR_FIELDS = {"out_dir", "preset"}
_ALL_FIELDS = _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS


def _parse_value(key: str, raw: str):
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value for key '{key}': {raw!r}") from None


def _read_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    overrides = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in _ALL_FIELDS:
                raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
            overrides[key] = _parse_value(key, raw.strip())
    return overrides


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.preset not in _PRESETS:
        raise ConfigError(f"preset must be one of {sorted(_PRESETS)}, got '{cfg.preset}'")
    try:
        cfg.train_config().validate()
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if cfg.d < 3:
        raise ConfigError(f"d must be >= 3, got {cfg.d}")
    if cfg.A != 5:
        raise ConfigError(f"the corridor task family defines exactly 5 actions; got A={cfg.A}")
    if cfg.episode_len < 1:
        raise ConfigError(f"episode_len must be >= 1, got {cfg.episode_len}")
    if cfg.override_threshold <= 0:
        raise ConfigError(f"override_threshold must be positive, got {cfg.override_threshold}")
    if not 0.0 <= cfg.corrupt_frac <= 1.0:
        raise ConfigError(f"corrupt_frac must be in [0, 1], got {cfg.corrupt_frac}")
    return cfg


def parse_config(config_path: str | None, flag_overrides: dict) -> RunConfig:
    """Assemble the run configuration: preset defaults, then file, then flags."""
    file_overrides = _read_config_file(config_path) if config_path else {}
    preset = flag_overrides.get("preset", file_overrides.get("preset", "desk"))
    if preset not in _PRESETS:
        raise ConfigError(f"preset must be one of {sorted(_PRESETS)}, got '{preset}'")
    merged = dict(_PRESETS[preset])
    merged.update(file_overrides)
    merged.update(flag_overrides)
    merged["preset"] = preset
    return _validate(RunConfig(**merged))


# ---------------------------------------------------------------------------
# artifact I/O

def _fmt(x: float) -> str:
    return repr(float(x))


def save_params(path: str, params: PolicyParams) -> None:
    """Header (A, d, version) as little-endian int32, then float64 flat params."""
    payload = struct.pack("<3i", params.n_actions, params.state_dim, PARAMS_VERSION)
    payload += params.flatten().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(payload)


def load_params(path: str) -> PolicyParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError:
        raise
    if len(blob) < 12:
        raise ShapeError(f"params file too short: {path}")
    n_actions, dim, version = struct.unpack("<3i", blob[:12])
    if version != PARAMS_VERSION:
        raise ShapeError(f"unsupported params version {version} in {path}")
    expected = n_actions * dim + n_actions
    flat = np.frombuffer(blob[12:], dtype="<f8")
    if flat.shape[0] != expected:
        raise ShapeError(
            f"params file {path} declares shape ({n_actions}, {dim}) but holds "
            f"{flat.shape[0]} values (expected {expected})"
        )
    return PolicyParams.unflatten(flat.astype(np.float64), n_actions, dim)


def write_dataset_csv(path: str, samples: list[Sample], episode_len: int) -> None:
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    dim = samples[0].state.shape[0]
    header = "task_id,step," + ",".join(f"s_{i}" for i in range(dim)) + ",action,corrupted"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for idx, s in enumerate(samples):
            step = idx % episode_len
            row = [str(s.task_id), str(step)]
            row += [_fmt(v) for v in s.state]
            row += [str(s.action), "1" if s.corrupted else "0"]
            fh.write(",".join(row) + "\n")


def read_dataset_csv(path: str) -> list[Sample]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        state_cols = [c for c in header if c.startswith("s_")]
        dim = len(state_cols)
        samples = []
        for line in fh:
            parts = line.strip().split(",")
            state = np.array([float(v) for v in parts[2:2 + dim]])
            samples.append(Sample(state=state, action=int(parts[2 + dim]),
                                  task_id=int(parts[0]),
                                  corrupted=parts[3 + dim] == "1"))
    return samples


def write_metrics_csv(path: str, method: str, trials: list[TrialMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("method,trial,timestep,overrides_cum,accuracy\n")
        timestep = 0
        overrides_cum = 0
        for t in trials:
            timestep += t.steps
            overrides_cum += t.overrides
            fh.write(f"{method},{t.trial},{timestep},{overrides_cum},{_fmt(t.accuracy)}\n")


def write_weights_csv(path: str, snapshots: list[tuple[int, WeightState]],
                      corrupted: list[bool]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("iter,sample_index,logit,weight,corrupted\n")
        for it, state in snapshots:
            for n in range(state.n):
                fh.write(f"{it},{n},{_fmt(state.logits[n])},{_fmt(state.weights[n])},"
                         f"{1 if corrupted[n] else 0}\n")


def _ensure_out_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("")
        os.remove(probe)
    except OSError as e:
        raise OSError(f"out_dir not writable: {path}: {e}") from e
    return path


def _eval_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((_SALT_EVAL, seed)))


# ---------------------------------------------------------------------------
# experiment runners (shared by the CLI commands and the acceptance suite)

def run_train(cfg: RunConfig) -> tuple[PolicyParams, list[Sample]]:
    """Phase-1 training; writes dataset.csv and params_theta_star.bin."""
    out = _ensure_out_dir(cfg.out_dir)
    tasks = make_train_tasks(cfg.train_config(), cfg.env_config())
    theta, dataset = train_base(tasks, cfg.train_config())
    write_dataset_csv(os.path.join(out, "dataset.csv"), dataset, cfg.episode_len)
    save_params(os.path.join(out, "params_theta_star.bin"), theta)
    return theta, dataset


def run_adapt(cfg: RunConfig, theta: PolicyParams,
              dataset: list[Sample]) -> AdaptResult:
    """Phase-2 adaptation against the held-out test task; writes artifacts."""
    out = _ensure_out_dir(cfg.out_dir)
    test_task = make_test_task(cfg.train_config(), cfg.env_config())
    result = adapt(theta, dataset, test_task, cfg.train_config())
    save_params(os.path.join(out, "params_phi.bin"), result.final_params)
    write_metrics_csv(os.path.join(out, "metrics_ours.csv"), "ours", result.metrics)
    corrupted = [s.corrupted for s in dataset]
    if result.weight_trace:
        write_weights_csv(os.path.join(out, "weights.csv"),
                          [result.weight_trace[-1]], corrupted)
    return result


def run_corruption_study(cfg: RunConfig) -> dict:
    """Train with corrupted labels, adapt, and compare final weight means."""
    out = _ensure_out_dir(cfg.out_dir)
    tcfg = cfg.train_config()
    env = cfg.env_config()
    tasks = make_train_tasks(tcfg, env)
    theta, dataset = train_base(tasks, tcfg, corrupt_frac=cfg.corrupt_frac)
    write_dataset_csv(os.path.join(out, "dataset.csv"), dataset, cfg.episode_len)
    save_params(os.path.join(out, "params_theta_star.bin"), theta)

    test_task = make_test_task(tcfg, env)
    result = adapt(theta, dataset, test_task, tcfg)
    save_params(os.path.join(out, "params_phi.bin"), result.final_params)
    write_metrics_csv(os.path.join(out, "metrics_ours.csv"), "ours", result.metrics)
    corrupted = np.array([s.corrupted for s in dataset])
    write_weights_csv(os.path.join(out, "weights.csv"),
                      [result.weight_trace[-1]], corrupted.tolist())

    final = result.final_weights.weights
    return {
        "n_samples": len(dataset),
        "n_corrupted": int(corrupted.sum()),
        "mean_weight_corrupted": float(final[corrupted].mean()),
        "mean_weight_clean": float(final[~corrupted].mean()),
    }


def run_baseline_trio(cfg: RunConfig, trial_counts: tuple[int, ...] = (1, 2, 5),
                      n_eval_trials: int = 50) -> dict:
    """Ours vs plain aggregation vs fine-tuning at matched trial budgets.

    Every method gets the same test task, the same trial budget (the largest
    entry of trial_counts) and the same evaluation protocol (fresh rollouts,
    identical noise streams). Writes one metrics CSV per method containing
    its learning-trial curve (cumulative expert interventions over the
    trials). Returns per-method evaluation accuracies and learning-trial
    intervention totals.
    """
    out = _ensure_out_dir(cfg.out_dir)
    tcfg = cfg.train_config()
    env = cfg.env_config()
    tasks = make_train_tasks(tcfg, env)
    test_task = make_test_task(tcfg, env)
    theta, dataset = train_base(tasks, tcfg)
    max_trials = max(trial_counts)

    results: dict = {
        "accuracy": {"ours": {}, "dagger": {}, "finetune": {}},
        "learning_overrides": {},
    }
    for n in trial_counts:
        res = adapt(theta, dataset, test_task, tcfg, rollout_budget=n)
        ev = evaluate(res.final_params, test_task, n_eval_trials, _eval_rng(cfg.seed))
        results["accuracy"]["ours"][n] = ev.mean_accuracy
        if n == max_trials:
            results["learning_overrides"]["ours"] = sum(m.overrides for m in res.metrics)
            write_metrics_csv(os.path.join(out, "metrics_ours.csv"), "ours", res.metrics)

    dag, dag_metrics = baseline_dagger(tasks, test_task, tcfg,
                                       n_test_trials=max_trials, return_metrics=True)
    ev = evaluate(dag, test_task, n_eval_trials, _eval_rng(cfg.seed))
    results["accuracy"]["dagger"][max_trials] = ev.mean_accuracy
    results["learning_overrides"]["dagger"] = sum(m.overrides for m in dag_metrics)
    write_metrics_csv(os.path.join(out, "metrics_dagger.csv"), "dagger", dag_metrics)

    fin, fin_metrics = baseline_finetune(test_task, tcfg, n_trials=max_trials,
                                         return_metrics=True)
    ev = evaluate(fin, test_task, n_eval_trials, _eval_rng(cfg.seed))
    results["accuracy"]["finetune"][max_trials] = ev.mean_accuracy
    results["learning_overrides"]["finetune"] = sum(m.overrides for m in fin_metrics)
    write_metrics_csv(os.path.join(out, "metrics_finetune.csv"), "finetune", fin_metrics)
    return results


def run_recovery(cfg: RunConfig, n_eval_trials: int = 10) -> dict:
    """One adaptation iteration back on a training task vs the base policy."""
    out = _ensure_out_dir(cfg.out_dir)
    tcfg = cfg.train_config()
    env = cfg.env_config()
    tasks = make_train_tasks(tcfg, env)
    theta, dataset = train_base(tasks, tcfg)
    task0 = tasks[0]
    res = adapt(theta, dataset, task0, replace(tcfg, tau_hat=1))
    ev_base = evaluate(theta, task0, n_eval_trials, _eval_rng(cfg.seed))
    ev_adapted = evaluate(res.final_params, task0, n_eval_trials, _eval_rng(cfg.seed))
    write_metrics_csv(os.path.join(out, "metrics_base.csv"), "base", ev_base.trials)
    write_metrics_csv(os.path.join(out, "metrics_readapted.csv"), "readapted",
                      ev_adapted.trials)
    return {
        "base_accuracy": ev_base.mean_accuracy,
        "readapted_accuracy": ev_adapted.mean_accuracy,
    }


# ---------------------------------------------------------------------------
# argparse front end

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weighted-imitation",
        description="Importance-weighted meta-imitation learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--out-dir", dest="out_dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--preset", choices=["desk", "paper"], default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--K", type=int, default=None)
        p.add_argument("--tau", type=int, default=None)
        p.add_argument("--tau-hat", dest="tau_hat", type=int, default=None)
        p.add_argument("--n-train-tasks", dest="n_train_tasks", type=int, default=None)
        p.add_argument("--trajectories-per-task", dest="trajectories_per_task",
                       type=int, default=None)
        p.add_argument("--d", type=int, default=None)
        p.add_argument("--A", type=int, default=None)
        p.add_argument("--episode-len", dest="episode_len", type=int, default=None)
        p.add_argument("--override-threshold", dest="override_threshold",
                       type=float, default=None)
        p.add_argument("--corrupt-frac", dest="corrupt_frac", type=float, default=None)

    for name, help_text in [
        ("train", "train the base policy over the train tasks"),
        ("adapt", "adapt a trained policy to the held-out test task"),
        ("eval", "evaluate a saved policy on a task"),
        ("corrupt-exp", "corruption-robustness study"),
        ("dump-weights", "export the full importance-weight trace"),
    ]:
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        if name == "eval":
            p.add_argument("--params", default=None,
                           help="params .bin file (default: out_dir/params_theta_star.bin)")
            p.add_argument("--trials", type=int, default=5)
            p.add_argument("--task-seed", dest="task_seed", type=int, default=None,
                           help="task to evaluate on (default: the held-out test task)")
            p.add_argument("--start", type=float, default=None,
                           help="anchor every trial at this arc position "
                                "(default: random starts)")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    flag_overrides = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            flag_overrides[f.name] = value
    return parse_config(args.config, flag_overrides)


def _cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    run_train(cfg)
    return 0


def _cmd_adapt(cfg: RunConfig, args: argparse.Namespace) -> int:
    theta = load_params(os.path.join(cfg.out_dir, "params_theta_star.bin"))
    if theta.state_dim != cfg.d or theta.n_actions != cfg.A:
        raise ShapeError(
            f"loaded params are ({theta.n_actions}, {theta.state_dim}), "
            f"config expects ({cfg.A}, {cfg.d})"
        )
    dataset = read_dataset_csv(os.path.join(cfg.out_dir, "dataset.csv"))
    if dataset and dataset[0].state.shape[0] != cfg.d:
        raise ShapeError(
            f"dataset states have dim {dataset[0].state.shape[0]}, config expects {cfg.d}"
        )
    run_adapt(cfg, theta, dataset)
    return 0


def _cmd_eval(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg.out_dir)
    params_path = args.params or os.path.join(cfg.out_dir, "params_theta_star.bin")
    params = load_params(params_path)
    if params.state_dim != cfg.d or params.n_actions != cfg.A:
        raise ShapeError(
            f"loaded params are ({params.n_actions}, {params.state_dim}), "
            f"config expects ({cfg.A}, {cfg.d})"
        )
    seed = args.task_seed if args.task_seed is not None else test_task_seed(cfg.train_config())
    task = make_task(seed, cfg.env_config())
    ev = evaluate(params, task, args.trials, _eval_rng(cfg.seed), start=args.start)
    write_metrics_csv(os.path.join(out, "metrics_eval.csv"), "eval", ev.trials)
    return 0


def _cmd_corrupt_exp(cfg: RunConfig, args: argparse.Namespace) -> int:
    summary = run_corruption_study(cfg)
    print(
        f"corrupted {summary['n_corrupted']}/{summary['n_samples']} samples: "
        f"mean weight corrupted={summary['mean_weight_corrupted']:.3e} "
        f"clean={summary['mean_weight_clean']:.3e}"
    )
    return 0


def _cmd_dump_weights(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg.out_dir)
    tcfg = cfg.train_config()
    env = cfg.env_config()
    tasks = make_train_tasks(tcfg, env)
    theta, dataset = train_base(tasks, tcfg)
    result = adapt(theta, dataset, make_test_task(tcfg, env), tcfg)
    corrupted = [s.corrupted for s in dataset]
    write_weights_csv(os.path.join(out, "weights.csv"), result.weight_trace, corrupted)
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "adapt": _cmd_adapt,
    "eval": _cmd_eval,
    "corrupt-exp": _cmd_corrupt_exp,
    "dump-weights": _cmd_dump_weights,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = _config_from_args(args)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ShapeError as e:
        print(f"shape error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
