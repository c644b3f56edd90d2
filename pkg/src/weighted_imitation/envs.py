"""Procedural 2D corridor-navigation tasks with a scripted expert.

A task is a seeded piecewise-linear centerline with a themed feature encoder.
The agent is a unicycle with fixed speed and five discrete turn rates; the
expert is a pure-pursuit controller bucketed onto the same action set. When
the agent drifts past the override threshold the expert takes over until the
deviation halves (hysteresis), and the intervention is logged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import Theme, encode, make_theme
from .policy import PolicyParams, Sample, predict

_TRACK_SALT = 0x512C

ACTION_NAMES = ("hard-left", "left", "straight", "right", "hard-right")


@dataclass
class EnvConfig:
    """Geometry, dynamics and theme knobs shared by a task family."""

    dim: int = 8
    n_actions: int = 5
    episode_len: int = 100
    override_threshold: float = 1.2  # lateral deviation, corridor half-width units

    # unicycle dynamics
    speed: float = 2.0
    dt: float = 0.1
    turn_soft: float = 0.35
    turn_hard: float = 1.2

    # track generation: mostly gentle joints with occasional sharp hairpins,
    # biased per task so tasks favor different curvature regimes. Hairpins
    # only appear beyond gentle_start, so episodes anchored at the track
    # start see gentle road; coverage_arcs sizes the track in multiples of
    # the episode arc so staggered collection and random-start evaluation
    # have room.
    half_width: float = 1.0
    straight_start: float = 6.0
    seg_len_min: float = 2.0
    seg_len_max: float = 3.5
    turn_spread: float = 0.5
    curve_bias_max: float = 0.7
    turn_max: float = 1.2
    hairpin_prob: float = 0.18
    hairpin_min: float = 0.9
    gentle_start: float = 26.0
    coverage_arcs: float = 4.0
    track_margin: float = 6.0

    # observation
    lookahead: float = 1.0
    ray_span: float = 1.3
    ray_range: float = 6.0
    feature_scale: float = 4.0

    # themes
    mix_strength: float = 0.5
    mix_jitter: float = 0.05
    noise_scale: float = 0.8

    def turn_rates(self) -> np.ndarray:
        """Turn rate per action index, positive = counterclockwise (left)."""
        return np.array([self.turn_hard, self.turn_soft, 0.0,
                         -self.turn_soft, -self.turn_hard])


@dataclass
class TaskSpec:
    """One themed navigation task; fully determined by its seed."""

    task_seed: int
    theme: Theme
    track: np.ndarray  # (M, 2) waypoints
    episode_len: int
    override_threshold: float
    cfg: EnvConfig

    seg_dirs: np.ndarray = field(init=False, repr=False)
    seg_lens: np.ndarray = field(init=False, repr=False)
    cum_len: np.ndarray = field(init=False, repr=False)
    wall_a: np.ndarray = field(init=False, repr=False)
    wall_b: np.ndarray = field(init=False, repr=False)
    wall_seg: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.track.shape[0] < 2:
            raise ValueError("track needs at least 2 waypoints")
        vecs = np.diff(self.track, axis=0)
        self.seg_lens = np.linalg.norm(vecs, axis=1)
        if (self.seg_lens == 0).any():
            raise ValueError("consecutive waypoints must be distinct")
        self.seg_dirs = vecs / self.seg_lens[:, None]
        self.cum_len = np.concatenate([[0.0], np.cumsum(self.seg_lens)])
        self._build_walls()

    def _build_walls(self) -> None:
        """Left/right wall polylines: track points offset along joint normals."""
        normals = np.stack([-self.seg_dirs[:, 1], self.seg_dirs[:, 0]], axis=1)
        joint = np.empty_like(self.track)
        joint[0] = normals[0]
        joint[-1] = normals[-1]
        if len(normals) > 1:
            mids = normals[:-1] + normals[1:]
            mids /= np.maximum(np.linalg.norm(mids, axis=1, keepdims=True), 1e-9)
            joint[1:-1] = mids
        w = self.cfg.half_width
        left = self.track + w * joint
        right = self.track - w * joint
        # wall segments of both sides, indexed by the centerline segment they flank
        self.wall_a = np.concatenate([left[:-1], right[:-1]])
        self.wall_b = np.concatenate([left[1:], right[1:]])
        self.wall_seg = np.concatenate([np.arange(len(self.seg_lens)),
                                        np.arange(len(self.seg_lens))])

    @property
    def total_len(self) -> float:
        return float(self.cum_len[-1])


@dataclass
class AgentState:
    """Pose plus the arc-length anchor used for local track projection."""

    position: np.ndarray
    heading: float
    progress: float = 0.0


@dataclass
class RolloutLog:
    """Per-step record of one episode."""

    samples: list[Sample]
    agent_actions: list[int]
    overrides: list[int]
    task_id: int


def _wrap_angle(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def make_task(task_seed: int, cfg: EnvConfig) -> TaskSpec:
    """Seeded task: themed encoder plus a corridor long enough for an episode.

    The first segment is straight (fixed length) so every episode starts from
    a stable pose; later joints turn by a task-biased random angle.
    """
    if cfg.episode_len < 1:
        raise ValueError(f"episode_len must be >= 1, got {cfg.episode_len}")
    if cfg.dim < 3:
        raise ValueError(f"observation dim must be >= 3, got {cfg.dim}")
    if cfg.override_threshold <= 0:
        raise ValueError(f"override_threshold must be positive, got {cfg.override_threshold}")

    rng = np.random.default_rng(np.random.SeedSequence((_TRACK_SALT, task_seed)))
    arc = cfg.episode_len * cfg.speed * cfg.dt
    needed = cfg.coverage_arcs * arc + cfg.lookahead + cfg.track_margin

    points = [np.zeros(2), np.array([cfg.straight_start, 0.0])]
    heading = 0.0
    total = cfg.straight_start
    curve_bias = rng.uniform(-cfg.curve_bias_max, cfg.curve_bias_max)
    while total < needed:
        draw = rng.uniform(-1.0, 1.0)
        turn = curve_bias + cfg.turn_spread * draw ** 3
        if total >= cfg.gentle_start and rng.uniform() < cfg.hairpin_prob:
            sign = 1.0 if draw >= 0 else -1.0
            turn = sign * rng.uniform(cfg.hairpin_min, cfg.turn_max)
        heading += float(np.clip(turn, -cfg.turn_max, cfg.turn_max))
        length = rng.uniform(cfg.seg_len_min, cfg.seg_len_max)
        points.append(points[-1] + length * np.array([math.cos(heading), math.sin(heading)]))
        total += length

    theme = make_theme(task_seed, cfg.dim, mix_strength=cfg.mix_strength,
                       jitter=cfg.mix_jitter, noise_scale=cfg.noise_scale)
    return TaskSpec(task_seed=task_seed, theme=theme, track=np.stack(points),
                    episode_len=cfg.episode_len,
                    override_threshold=cfg.override_threshold, cfg=cfg)


def _project(task: TaskSpec, pos: np.ndarray, anchor_progress: float,
             back: float = 3.0, fwd: float = 5.0) -> tuple[float, float, int]:
    """Signed lateral offset, arc-length progress and segment index.

    Only segments within an arc window around the anchor are considered, so a
    track that wanders back near itself cannot capture the projection.
    """
    lo = anchor_progress - back
    hi = anchor_progress + fwd
    best = (math.inf, 0.0, 0.0, 0)
    for i in range(task.seg_dirs.shape[0]):
        if task.cum_len[i + 1] < lo or task.cum_len[i] > hi:
            continue
        rel = pos - task.track[i]
        t = float(np.clip(rel @ task.seg_dirs[i], 0.0, task.seg_lens[i]))
        closest = task.track[i] + t * task.seg_dirs[i]
        diff = pos - closest
        dist_sq = float(diff @ diff)
        if dist_sq < best[0]:
            cross = task.seg_dirs[i, 0] * diff[1] - task.seg_dirs[i, 1] * diff[0]
            lateral = math.copysign(math.sqrt(dist_sq), cross) if dist_sq > 0 else 0.0
            best = (dist_sq, lateral, task.cum_len[i] + t, i)
    return best[1], best[2], best[3]


def _point_at(task: TaskSpec, progress: float) -> np.ndarray:
    s = float(np.clip(progress, 0.0, task.total_len))
    i = int(np.searchsorted(task.cum_len, s, side="right")) - 1
    i = min(max(i, 0), task.seg_dirs.shape[0] - 1)
    return task.track[i] + (s - task.cum_len[i]) * task.seg_dirs[i]


def _pursuit_angle(task: TaskSpec, agent: AgentState, progress: float) -> float:
    target = _point_at(task, progress + task.cfg.lookahead)
    to_target = target - agent.position
    return _wrap_angle(math.atan2(to_target[1], to_target[0]) - agent.heading)


def expert_action(task: TaskSpec, agent: AgentState) -> int:
    """Pure-pursuit steering bucketed onto the five discrete turn rates."""
    cfg = task.cfg
    _, progress, _ = _project(task, agent.position, agent.progress)
    alpha = _pursuit_angle(task, agent, progress)
    curvature = 2.0 * math.sin(alpha) / cfg.lookahead
    desired = cfg.speed * curvature
    return int(np.argmin(np.abs(cfg.turn_rates() - desired)))


def _ray_distances(task: TaskSpec, agent: AgentState, seg_idx: int) -> np.ndarray:
    """Cast body-frame rays against the corridor wall polylines.

    Rays see the actual walls, bends included, so upcoming curvature is
    visible in the distance pattern. Distances are capped at ray_range and
    reported as fractions of it.
    """
    cfg = task.cfg
    n_rays = cfg.dim - 2
    angles = agent.heading + np.linspace(-cfg.ray_span, cfg.ray_span, n_rays)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    window = int(np.ceil(cfg.ray_range / max(cfg.seg_len_min, 1e-6))) + 2
    mask = (task.wall_seg >= seg_idx - 2) & (task.wall_seg <= seg_idx + window)
    a = task.wall_a[mask]
    seg_vec = task.wall_b[mask] - a
    rel = a - agent.position

    # ray p + t*r vs segment a + u*s: solve via 2x2 cross products
    denom = dirs[:, None, 0] * seg_vec[None, :, 1] - dirs[:, None, 1] * seg_vec[None, :, 0]
    num_t = rel[None, :, 0] * seg_vec[None, :, 1] - rel[None, :, 1] * seg_vec[None, :, 0]
    num_u = rel[None, :, 0] * dirs[:, None, 1] - rel[None, :, 1] * dirs[:, None, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        u = num_u / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    return np.minimum(t.min(axis=1), cfg.ray_range) / cfg.ray_range


def _observe_raw(task: TaskSpec, agent: AgentState, lateral: float,
                 seg_idx: int, progress: float) -> np.ndarray:
    """Raw observation: [lateral offset, heading error, wall ray distances].

    The heading error is relative to the local centerline direction; the
    expert's anticipatory steering signal is only recoverable from the ray
    pattern.
    """
    cfg = task.cfg
    raw = np.empty(cfg.dim)
    raw[0] = lateral / cfg.half_width
    seg_dir = task.seg_dirs[seg_idx]
    raw[1] = _wrap_angle(agent.heading - math.atan2(seg_dir[1], seg_dir[0]))
    raw[2:] = _ray_distances(task, agent, seg_idx)
    return raw * cfg.feature_scale


def _step_dynamics(cfg: EnvConfig, agent: AgentState, action: int) -> None:
    omega = float(cfg.turn_rates()[action])
    agent.heading = _wrap_angle(agent.heading + omega * cfg.dt)
    agent.position = agent.position + cfg.speed * cfg.dt * np.array(
        [math.cos(agent.heading), math.sin(agent.heading)])


def _initial_agent(task: TaskSpec, start_progress: float = 0.0) -> AgentState:
    s = float(np.clip(start_progress, 0.0, task.total_len))
    i = int(np.searchsorted(task.cum_len, s, side="right")) - 1
    i = min(max(i, 0), task.seg_dirs.shape[0] - 1)
    d = task.seg_dirs[i]
    return AgentState(position=_point_at(task, s),
                      heading=math.atan2(d[1], d[0]), progress=s)


def rollout(params: PolicyParams | None, task: TaskSpec,
            expert_labeling: bool, rng: np.random.Generator,
            start_progress: float = 0.0) -> RolloutLog:
    """One episode of episode_len steps.

    The policy drives through predict(); every visited state is labeled by
    the expert when expert_labeling is set (otherwise the executed action is
    recorded as the label). Passing params=None puts the expert in control
    for the whole episode. start_progress places the agent centered and
    aligned at that arc length instead of the track start.

    Override semantics: when |lateral| exceeds the threshold an intervention
    is logged and the expert drives until |lateral| drops below half the
    threshold. Intervention steps are labeled and kept like any other step.
    """
    cfg = task.cfg
    if params is not None and params.state_dim != cfg.dim:
        raise ValueError(
            f"policy expects state dim {params.state_dim}, encoder produces {cfg.dim}"
        )
    agent = _initial_agent(task, start_progress)
    samples: list[Sample] = []
    agent_actions: list[int] = []
    overrides: list[int] = []
    overriding = False

    for step in range(task.episode_len):
        lateral, progress, seg_idx = _project(task, agent.position, agent.progress)
        agent.progress = progress
        threshold = task.override_threshold * cfg.half_width
        if abs(lateral) > threshold:
            if not overriding:
                overrides.append(step)
                overriding = True
        elif overriding and abs(lateral) < 0.5 * threshold:
            overriding = False

        raw = _observe_raw(task, agent, lateral, seg_idx, progress)
        state = encode(task.theme, raw, rng)
        label = expert_action(task, agent)

        if params is None or overriding:
            executed = label
        else:
            executed = predict(params, state)

        samples.append(Sample(state=state, action=label if expert_labeling else executed,
                              task_id=task.task_seed))
        agent_actions.append(executed)
        _step_dynamics(cfg, agent, executed)

    return RolloutLog(samples=samples, agent_actions=agent_actions,
                      overrides=overrides, task_id=task.task_seed)


def expert_rollout(task: TaskSpec, rng: np.random.Generator) -> RolloutLog:
    """Expert-driven episode (closed loop, no policy)."""
    return rollout(None, task, expert_labeling=True, rng=rng)


def corrupt_labels(samples: list[Sample], fraction: float,
                   rng: np.random.Generator, n_actions: int = 5) -> list[Sample]:
    """Flip floor(fraction * N) labels to uniformly-drawn wrong ones.

    The chosen samples get corrupted=True; states are shared, order kept.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n_corrupt = int(fraction * len(samples))
    chosen = set(rng.choice(len(samples), size=n_corrupt, replace=False).tolist()) \
        if n_corrupt else set()
    out: list[Sample] = []
    for i, s in enumerate(samples):
        if i in chosen:
            wrong = int(rng.integers(n_actions - 1))
            if wrong >= s.action:
                wrong += 1
            out.append(Sample(state=s.state, action=wrong, task_id=s.task_id,
                              corrupted=True))
        else:
            out.append(Sample(state=s.state, action=s.action, task_id=s.task_id,
                              corrupted=s.corrupted))
    return out
