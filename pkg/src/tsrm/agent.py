"""Linear softmax actor-critic over one-hot observation features.

Each observation activates exactly one feature per block, so preferences are
sums of a handful of table rows.  Training is synchronous: every update round
``workers`` logical workers each roll out one episode against the same
parameter snapshot, then their gradients are applied in worker order.  All
randomness is keyed by ``(seed, episode index)`` so a resumed run matches an
uninterrupted one bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .actions import N_ACTIONS, Action
from .metrics import EpisodeSummary, compute_report, summarize
from .perception import DetectorConfig, visible
from .posegraph import PoseGraph, build_graph
from .reward import NavEnv, RewardConfig, Stage
from .scene import ObjectInstance, Pose, Scene

CHECKPOINT_VERSION = 1

NONE = -1
_STAGES = (Stage.SEARCHING, Stage.PATHFINDING)
_DIRS = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}


class TrainingDivergedError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


# ------------------------------------------------------------- observation

@dataclass(frozen=True)
class AgentObservation:
    pose: Pose
    stage: Stage
    target_visible: bool
    confidence: float
    bearing_bucket: int  # 0..7 counter-clockwise from straight ahead, or NONE
    local_novelty: tuple[bool, bool, bool, bool]  # ahead, left, behind, right: unvisited neighbour cell
    previous_action: Action | None
    # additions standing in for depth and for recurrent target memory
    front_blocked: bool = False
    range_bucket: int = NONE  # 0 within success radius, 1 within twice that, 2 farther
    memory_bearing: int = NONE
    memory_range: int = NONE
    scanned: int = 1  # distinct headings already faced in the current cell, capped at 4

    def __post_init__(self):
        if self.bearing_bucket != NONE and not self.target_visible:
            raise ValueError("bearing bucket requires a visible target")


def _bearing_bucket(pose: Pose, cx: float, cy: float, tx: float, ty: float) -> int:
    rel = (math.degrees(math.atan2(ty - cy, tx - cx)) - pose.yaw) % 360.0
    return int(((rel + 22.5) % 360.0) // 45.0)


def _range_bucket(d: float, radius: float) -> int:
    if d <= radius + 1e-12:
        return 0
    return 1 if d <= 2 * radius else 2


class ObservationTracker:
    """Episode memory: visited cells, last action, last seen target position."""

    def __init__(self, env: NavEnv):
        self.env = env
        self.visited = {env.state.pose.cell}
        self.faced: dict[tuple[int, int], set[int]] = {env.state.pose.cell: {env.state.pose.yaw}}
        self.previous: Action | None = None
        self.memory: tuple[float, float] | None = None

    def update(self, action: Action) -> None:
        self.previous = action
        pose = self.env.state.pose
        self.visited.add(pose.cell)
        self.faced.setdefault(pose.cell, set()).add(pose.yaw)

    def observe(self) -> AgentObservation:
        env = self.env
        st = env.state
        pose = st.pose
        scene = env.scene
        cx, cy = scene.cell_center(pose.i, pose.j)
        seen = visible(pose, env.target, scene, env.detector_cfg.occlusion_check)
        radius = scene.config.success_radius
        bearing = rng_bucket = NONE
        if seen:
            tx, ty = env.target.position.x, env.target.position.y
            self.memory = (tx, ty)
            bearing = _bearing_bucket(pose, cx, cy, tx, ty)
            rng_bucket = _range_bucket(math.hypot(tx - cx, ty - cy), radius)
        mem_b = mem_r = NONE
        if self.memory is not None:
            mx, my = self.memory
            mem_b = _bearing_bucket(pose, cx, cy, mx, my)
            mem_r = _range_bucket(math.hypot(mx - cx, my - cy), radius)
        novelty = []
        k = pose.yaw // 90
        for turn in range(4):  # ahead, left, behind, right
            di, dj = _DIRS[((k + turn) % 4) * 90]
            n = (pose.i + di, pose.j + dj)
            novelty.append(n in scene.reachable_cells and n not in self.visited)
        di, dj = _DIRS[(k % 4) * 90]
        blocked = (pose.i + di, pose.j + dj) not in scene.reachable_cells
        scanned = min(len(self.faced.get(pose.cell, ())), 4) or 1
        return AgentObservation(pose, st.stage, seen, st.confidence, bearing, tuple(novelty), self.previous,
                                blocked, rng_bucket, mem_b, mem_r, scanned)


# ------------------------------------------------------------- features

class FeatureMap:
    """Fixed block layout; ``indices(obs)`` returns one index per block."""

    def __init__(self, pitches: Sequence[int] = (-30, 0, 30)):
        self.pitches = tuple(pitches)
        self._pitch_index = {p: k for k, p in enumerate(self.pitches)}
        pitch_levels = len(self.pitches)
        sizes = {
            "bias": 1,
            "target": 2 * 9 * 4,           # stage x bearing x range
            "novelty": 2 * 16 * 2 * 4,     # stage x novelty pattern x front blocked x headings faced
            "previous": 2 * (N_ACTIONS + 1),
            "pitch": pitch_levels * 2,     # pitch x visible
            "memory": 2 * 9 * 4,           # stage x remembered bearing x remembered range
        }
        self.offsets = {}
        n = 0
        for k, v in sizes.items():
            self.offsets[k] = n
            n += v
        self.size = n

    def indices(self, obs: AgentObservation) -> np.ndarray:
        o = self.offsets
        st = _STAGES.index(obs.stage)
        b = obs.bearing_bucket + 1
        r = obs.range_bucket + 1
        nov = sum(int(v) << k for k, v in enumerate(obs.local_novelty))
        prev = 0 if obs.previous_action is None else int(obs.previous_action) + 1
        pitch = self._pitch_index[obs.pose.pitch]
        mb, mr = obs.memory_bearing + 1, obs.memory_range + 1
        return np.array([
            o["bias"],
            o["target"] + (st * 9 + b) * 4 + r,
            o["novelty"] + ((st * 16 + nov) * 2 + int(obs.front_blocked)) * 4 + obs.scanned - 1,
            o["previous"] + st * (N_ACTIONS + 1) + prev,
            o["pitch"] + pitch * 2 + int(obs.target_visible),
            o["memory"] + (st * 9 + mb) * 4 + mr,
        ], dtype=np.int64)


# ------------------------------------------------------------- parameters

@dataclass
class HyperParams:
    learning_rate: float = 1e-4
    value_learning_rate: float | None = None  # defaults to learning_rate
    gamma: float = 0.99
    entropy_coef: float = 0.01
    episodes: int = 1000
    workers: int = 1
    eval_every: int = 0  # 0 disables curves
    eval_episodes: int = 50
    greedy_eval: bool = False

    def __post_init__(self):
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be finite and >= 0, got {self.learning_rate}")
        if self.value_learning_rate is not None and not self.value_learning_rate >= 0:
            raise ValueError("value_learning_rate must be >= 0")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.entropy_coef < 0:
            raise ValueError("entropy_coef must be >= 0")
        if self.episodes < 0 or self.workers < 1 or self.eval_every < 0 or self.eval_episodes < 1:
            raise ValueError("episodes >= 0, workers >= 1, eval_every >= 0 and eval_episodes >= 1 required")

    @property
    def value_lr(self) -> float:
        return self.learning_rate if self.value_learning_rate is None else self.value_learning_rate


@dataclass
class PolicyParams:
    theta: np.ndarray  # (n_features, n_actions)
    w: np.ndarray  # (n_features,)
    hyper: HyperParams = field(default_factory=HyperParams)

    @classmethod
    def zeros(cls, fmap: FeatureMap, hyper: HyperParams | None = None) -> "PolicyParams":
        return cls(np.zeros((fmap.size, N_ACTIONS)), np.zeros(fmap.size), hyper or HyperParams())

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.theta.copy(), self.w.copy(), self.hyper)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.theta).all() and np.isfinite(self.w).all())


def preferences(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return theta[phi].sum(axis=0)


def softmax(z: np.ndarray) -> np.ndarray:
    m = np.max(z)
    if not math.isfinite(m):
        # +inf preferences: uniform over the dominant actions
        top = z == m
        return top / top.sum()
    e = np.exp(z - m)
    return e / e.sum()


def action_probs(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return softmax(preferences(theta, phi))


def log_prob(theta: np.ndarray, phi: np.ndarray, a: int) -> float:
    z = preferences(theta, phi)
    m = z.max()
    return float(z[a] - m - math.log(np.exp(z - m).sum()))


def log_prob_grad(theta: np.ndarray, phi: np.ndarray, a: int) -> np.ndarray:
    """Dense gradient of log pi(a | phi) with respect to ``theta``."""
    p = action_probs(theta, phi)
    row = -p
    row[a] += 1.0
    g = np.zeros_like(theta)
    np.add.at(g, phi, row)
    return g


def entropy(theta: np.ndarray, phi: np.ndarray) -> float:
    p = action_probs(theta, phi)
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def entropy_grad(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    p = action_probs(theta, phi)
    logp = np.log(np.maximum(p, 1e-300))
    h = -(p * logp).sum()
    row = -p * (logp + h)
    g = np.zeros_like(theta)
    np.add.at(g, phi, row)
    return g


def value(w: np.ndarray, phi: np.ndarray) -> float:
    return float(w[phi].sum())


def value_step(w: np.ndarray, batch: Sequence[tuple[np.ndarray, float]], lr: float) -> np.ndarray:
    """One gradient step on 0.5 * mean squared error of V(phi) against targets."""
    g = np.zeros_like(w)
    for phi, target in batch:
        np.add.at(g, phi, target - value(w, phi))
    return w + lr * g / max(len(batch), 1)


def td_error_sq(w: np.ndarray, batch: Sequence[tuple[np.ndarray, float]]) -> float:
    return float(sum((t - value(w, phi)) ** 2 for phi, t in batch) / max(len(batch), 1))


def act(params: PolicyParams, phi: np.ndarray, rng: np.random.Generator | int, greedy: bool = False) -> Action:
    p = action_probs(params.theta, phi)
    if greedy:
        return Action(int(np.argmax(p)))
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return Action(int(rng.choice(N_ACTIONS, p=p)))


# ------------------------------------------------------------- policy wrapper

class AgentPolicy:
    """Adapter so a trained parameter set plugs into ``run_episode``."""

    def __init__(self, params: PolicyParams, fmap: FeatureMap | None = None, greedy: bool = False):
        self.params = params
        self.fmap = fmap or FeatureMap()
        if params.theta.shape[0] != self.fmap.size:
            raise ValueError(f"parameters have {params.theta.shape[0]} feature rows, feature map has {self.fmap.size}")
        self.greedy = greedy
        self.tracker: ObservationTracker | None = None
        self.features: list[np.ndarray] = []
        self.actions: list[int] = []

    def reset(self, env: NavEnv, rng: np.random.Generator) -> None:
        if tuple(env.graph.pitches) != self.fmap.pitches:
            raise ValueError(f"policy features expect pitches {self.fmap.pitches}, scene has {env.graph.pitches}")
        self.tracker = ObservationTracker(env)
        self.features, self.actions = [], []

    def act(self, env: NavEnv, rng: np.random.Generator) -> Action:
        if self.actions:
            self.tracker.update(Action(self.actions[-1]))
        phi = self.fmap.indices(self.tracker.observe())
        a = act(self.params, phi, rng, self.greedy)
        self.features.append(phi)
        self.actions.append(int(a))
        return a


# ------------------------------------------------------------- training

@dataclass(frozen=True)
class Task:
    scene: Scene
    target: ObjectInstance
    graph: PoseGraph


def make_tasks(scenes: Sequence[Scene], graphs: dict[str, PoseGraph] | None = None) -> list[Task]:
    out = []
    for sc in scenes:
        g = graphs.get(sc.id) if graphs else None
        g = g if g is not None else build_graph(sc)
        for obj in sc.objects:
            out.append(Task(sc, obj, g))
    if not out:
        raise ValueError("at least one scene with one object is required")
    return out


@dataclass
class CurvePoint:
    episode: int
    SR: float
    SPL: float
    SSR: float
    SSSPL: float
    NSNPL: float | None


@dataclass
class TrainResult:
    params: PolicyParams
    curve: list[CurvePoint]
    episodes_done: int
    returns: list[float]


def _rollout(task: Task, params: PolicyParams, reward_cfg: RewardConfig, detector: DetectorConfig,
             rng: np.random.Generator, fmap: FeatureMap):
    env = NavEnv(task.scene, task.target, reward_cfg, detector, task.graph)
    pol = AgentPolicy(params, fmap)
    env.reset(None, rng)
    pol.reset(env, rng)
    rewards = []
    while not env.state.done:
        rec = env.step(pol.act(env, rng))
        rewards.append(rec.reward.total)
    return pol.features, pol.actions, rewards, env


def episode_gradients(params: PolicyParams, feats, actions, rewards) -> tuple[np.ndarray, np.ndarray, float]:
    """Monte-Carlo advantage actor-critic gradients for one episode."""
    h = params.hyper
    T = len(rewards)
    G = np.zeros(T)
    acc = 0.0
    for t in range(T - 1, -1, -1):
        acc = rewards[t] + h.gamma * acc
        G[t] = acc
    g_theta = np.zeros_like(params.theta)
    g_w = np.zeros_like(params.w)
    for t in range(T):
        phi = feats[t]
        adv = G[t] - value(params.w, phi)
        p = action_probs(params.theta, phi)
        row = -p * adv
        row[actions[t]] += adv
        if h.entropy_coef:
            logp = np.log(np.maximum(p, 1e-300))
            row += h.entropy_coef * (-p * (logp + entropy_of(p)))
        np.add.at(g_theta, phi, row)
        np.add.at(g_w, phi, adv)
    return g_theta, g_w, float(G[0]) if T else 0.0


def entropy_of(p: np.ndarray) -> float:
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def evaluate_policy(make_policy: Callable[[], object], tasks: Sequence[Task], episodes: int, seed: int,
                    reward_cfg: RewardConfig | None = None, detector: DetectorConfig | None = None,
                    on_trajectory: Callable | None = None, first_episode: int = 0) -> list[EpisodeSummary]:
    """Round-robin over tasks; episode ``k`` draws everything from ``(seed, k)``."""
    from .reward import run_episode

    reward_cfg = reward_cfg or RewardConfig()
    detector = detector or DetectorConfig()
    out = []
    for k in range(first_episode, first_episode + episodes):
        task = tasks[k % len(tasks)]
        env = NavEnv(task.scene, task.target, reward_cfg, detector, task.graph)
        traj = run_episode(env, make_policy(), np.random.default_rng([seed, k]), episode_id=k)
        if on_trajectory is not None:
            on_trajectory(traj)
        out.append(summarize(traj, task.scene, task.target, detector, reward_cfg.c_target, task.graph))
    return out


def evaluate(params: PolicyParams, tasks: Sequence[Task], episodes: int, seed: int,
             reward_cfg: RewardConfig | None = None, detector: DetectorConfig | None = None,
             greedy: bool = False, fmap: FeatureMap | None = None,
             on_trajectory: Callable | None = None) -> list[EpisodeSummary]:
    fmap = fmap or FeatureMap(tasks[0].graph.pitches)
    return evaluate_policy(lambda: AgentPolicy(params, fmap, greedy), tasks, episodes, seed, reward_cfg, detector,
                           on_trajectory)


def train(scenes: Sequence[Scene] | Sequence[Task], reward_cfg: RewardConfig, hyper: HyperParams, seed: int,
          eval_scenes: Sequence[Scene] | Sequence[Task] | None = None, detector: DetectorConfig | None = None,
          resume: TrainResult | None = None, log: Callable[[str], None] | None = None) -> TrainResult:
    tasks = list(scenes) if scenes and isinstance(scenes[0], Task) else make_tasks(scenes)
    eval_tasks = None
    if eval_scenes:
        eval_tasks = list(eval_scenes) if isinstance(eval_scenes[0], Task) else make_tasks(eval_scenes)
    detector = detector or DetectorConfig()
    fmap = FeatureMap(tasks[0].graph.pitches)
    if resume is not None:
        params = resume.params.copy()
        params.hyper = hyper
        curve, done, returns = list(resume.curve), resume.episodes_done, list(resume.returns)
    else:
        params = PolicyParams.zeros(fmap, hyper)
        curve, done, returns = [], 0, []
    if params.theta.shape != (fmap.size, N_ACTIONS):
        raise CheckpointError(f"parameter shape {params.theta.shape} does not match features {fmap.size}")

    while done < hyper.episodes:
        batch = min(hyper.workers, hyper.episodes - done)
        snap = params.copy()
        updates = []
        steps = 0
        for wkr in range(batch):
            e = done + wkr
            rng = np.random.default_rng([seed, e])
            task = tasks[int(rng.integers(len(tasks)))]
            feats, actions, rewards, _ = _rollout(task, snap, reward_cfg, detector, rng, fmap)
            updates.append(episode_gradients(snap, feats, actions, rewards))
            steps += len(rewards)
        # mean over every step in the round; serialized apply in worker order
        with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
            for g_theta, g_w, ret in updates:
                params.theta += (hyper.learning_rate / steps) * g_theta
                params.w += (hyper.value_lr / steps) * g_w
                returns.append(ret)
        done += batch
        if not params.is_finite():
            raise TrainingDivergedError(
                f"non-finite parameters after episode {done}: max |theta| before update "
                f"{np.abs(snap.theta).max():.3g}, last return {returns[-1]:.3g}; lower the learning rate")
        if eval_tasks and hyper.eval_every and (done % hyper.eval_every == 0 or done == hyper.episodes):
            if not curve or curve[-1].episode != done:
                rep = compute_report(evaluate(params, eval_tasks, hyper.eval_episodes, seed + 1_000_003,
                                              reward_cfg, detector, hyper.greedy_eval, fmap))
                curve.append(CurvePoint(done, rep.SR, rep.SPL, rep.SSR, rep.SSSPL, rep.NSNPL))
                if log:
                    log(f"episode {done}: SR {rep.SR:.3f} SPL {rep.SPL:.3f} SSR {rep.SSR:.3f}")
    return TrainResult(params, curve, done, returns)


# ------------------------------------------------------------- persistence

def config_digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def save_checkpoint(result: TrainResult, path: str | Path, config: dict | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "configHash": config_digest(config or {}),
        "hyper": asdict(result.params.hyper),
        "episodesDone": result.episodes_done,
        "theta": result.params.theta.tolist(),
        "w": result.params.w.tolist(),
        "returns": result.returns,
        "curve": [asdict(c) for c in result.curve],
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path, config: dict | None = None) -> TrainResult:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if d.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {d.get('version')!r}")
    if config is not None and d.get("configHash") != config_digest(config):
        raise CheckpointError("checkpoint was written under a different configuration")
    params = PolicyParams(np.array(d["theta"], dtype=np.float64), np.array(d["w"], dtype=np.float64),
                          HyperParams(**d["hyper"]))
    curve = [CurvePoint(**c) for c in d["curve"]]
    return TrainResult(params, curve, int(d["episodesDone"]), [float(x) for x in d["returns"]])
