"""PPO training: rollout collection, GAE, clipped objective and the main loop."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from fragforge.chem import FragmentMultiset, anchorable_hydrogens
from fragforge.energy import CachedBackend, EnergyBackend
from fragforge.env import PENALTY_REWARD, Action, EnvError, EnvState, FragmentEnv, StepOutcome
from fragforge.evaluation import ValidityReport, classify_state, evaluation_snapshot
from fragforge.neural import tensor as T
from fragforge.neural.io import save_params
from fragforge.neural.nn import cloud_graph
from fragforge.neural.optim import Adam, clip_grad_norm
from fragforge.policy import Observation, PolicyConfig, PolicyNet, observe

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class PPOConfig:
    clip_epsilon: float = 0.2
    grad_clip: float = 0.5
    gae_lambda: float = 0.97
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    epochs: int = 5
    learning_rate: float = 3e-4
    gamma: float = 1.0
    minibatch_size: int = 100
    workers: int = 8
    total_steps: int = 50_000
    eval_interval: int = 1000
    eval_start: int = 100
    eval_samples: int = 10
    rollout_steps: int = 2048
    normalize_advantages: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    reward_floor: float | None = -10.0
    seed: int = 0


@dataclass
class Transition:
    obs: Observation
    action: Action
    log_prob: float
    reward: float
    value: float
    done: bool
    worker: int
    advantage: float = 0.0
    value_target: float = 0.0


@dataclass
class Episode:
    """A finished training episode: summed reward and its terminal structure."""

    end_step: int
    reward: float
    raw_reward: float
    length: int
    final_state: EnvState
    report: ValidityReport
    energy: float | None


@dataclass
class RolloutBatch:
    transitions: list[Transition]
    episodes: list[Episode] = field(default_factory=list)

    def __len__(self):
        return len(self.transitions)


def state_value(state: EnvState, policy: PolicyNet) -> float:
    """Critic estimate V(s) from the sum-pooled molecule embedding and the multiset code."""
    if len(state.molecule) == 0:
        raise TrainingError("state value needs a non-empty molecule")
    obs = Observation(cloud_graph(state.molecule, policy.config.embedder.cutoff),
                      anchorable_hydrogens(state.molecule), np.array(state.remaining, dtype=np.float64))
    return float(policy.values([obs])[0])


def gae_advantages(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and value targets for one trajectory segment.

    ``values[t]`` is V(s_t).  After a done step the bootstrap value is zero; a
    segment that stops mid-episode bootstraps from ``last_value``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    if not len(rewards) == len(values) == len(dones):
        raise ValueError("rewards, values and dones must have equal length")
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    next_value = last_value
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


class RolloutCollector:
    """Lock-step vector of environments sharing one policy snapshot.

    Worker ``k`` owns environment ``k`` and the generator seeded with
    ``seed + k``, so a run is reproducible for deterministic backends.
    """

    def __init__(self, library: FragmentMultiset, backend: EnergyBackend, workers: int, seed: int,
                 start="random", reward_floor: float | None = -10.0,
                 distance_range=(1.10, 2.10)):
        self.envs = [FragmentEnv(library, backend, start, seed + k, distance_range) for k in range(workers)]
        self.rngs = [np.random.default_rng(seed + k) for k in range(workers)]
        self.reward_floor = reward_floor
        self.step_count = 0
        self.errors = 0
        self._ep = [dict(reward=0.0, raw=0.0, length=0) for _ in self.envs]
        for env in self.envs:
            env.reset()

    def _shape(self, reward: float) -> float:
        return reward if self.reward_floor is None else max(reward, self.reward_floor)

    def collect(self, policy: PolicyNet, n_steps: int) -> tuple[RolloutBatch, list[list[Transition]], np.ndarray]:
        """Run ``n_steps`` transitions in total, split evenly (round-robin) across workers."""
        cutoff = policy.config.embedder.cutoff
        per_worker: list[list[Transition]] = [[] for _ in self.envs]
        episodes: list[Episode] = []
        remaining = n_steps
        while remaining > 0:
            active = list(range(min(len(self.envs), remaining)))
            obs = [observe(self.envs[k].state, cutoff) for k in active]
            sampled = policy.act(obs, [self.rngs[k] for k in active])
            for k, o, s in zip(active, obs, sampled):
                env = self.envs[k]
                try:
                    out = env.step(s.action)
                except EnvError as exc:
                    # record the failure as a terminal penalty transition and start over
                    log.warning("worker %d: %s; episode aborted", k, exc)
                    self.errors += 1
                    state = EnvState(env.state.molecule, env.state.multiset, env.state.step + 1, True, "error")
                    out = StepOutcome(state, PENALTY_REWARD, True, {"error": str(exc)})
                self.step_count += 1
                reward = self._shape(out.reward)
                per_worker[k].append(Transition(o, s.action, s.log_prob, reward, s.value, out.done, k))
                ep = self._ep[k]
                ep["reward"] += reward
                ep["raw"] += out.reward
                ep["length"] += 1
                if out.done:
                    report = classify_state(out.state)
                    episodes.append(Episode(self.step_count, ep["reward"], ep["raw"], ep["length"],
                                            out.state, report, out.info.get("energy")))
                    self._ep[k] = dict(reward=0.0, raw=0.0, length=0)
                    env.reset()
            remaining -= len(active)
        # bootstrap values for segments that stop mid-episode
        last_obs = [observe(env.state, cutoff) for env in self.envs]
        last_values = policy.values(last_obs)
        flat = [t for traj in per_worker for t in traj]
        return RolloutBatch(flat, episodes), per_worker, last_values


def collect_rollouts(policy: PolicyNet, collector: RolloutCollector, n_steps: int) -> RolloutBatch:
    batch, _, _ = collector.collect(policy, n_steps)
    return batch


def compute_advantages(per_worker: list[list[Transition]], last_values, gamma: float, lam: float):
    for traj, last in zip(per_worker, last_values):
        if not traj:
            continue
        adv, target = gae_advantages([t.reward for t in traj], [t.value for t in traj],
                                     [t.done for t in traj], gamma, lam,
                                     0.0 if traj[-1].done else float(last))
        for t, a, v in zip(traj, adv, target):
            t.advantage = float(a)
            t.value_target = float(v)


@dataclass
class LossParts:
    loss: T.Tensor
    policy: float
    value: float
    entropy: float
    clip_fraction: float
    approx_kl: float


def ppo_objective(policy: PolicyNet, transitions: list[Transition], config: PPOConfig,
                  advantages: np.ndarray | None = None) -> LossParts:
    """Negative actor-critic objective on a minibatch.

    loss = -mean(min(r A, clip(r, 1-eps, 1+eps) A)) + c1 mean((V - V_target)^2) - c2 mean(H)
    """
    obs = [t.obs for t in transitions]
    acts = [t.action for t in transitions]
    ev = policy.evaluate(obs, acts)
    old = np.array([t.log_prob for t in transitions])
    adv = np.array([t.advantage for t in transitions]) if advantages is None else advantages
    targets = np.array([t.value_target for t in transitions])
    return clipped_loss(ev.log_prob, old, adv, ev.value, targets, ev.entropy, config)


def clipped_loss(log_prob: T.Tensor, old_log_prob, advantages, value: T.Tensor, value_target,
                 entropy: T.Tensor, config: PPOConfig) -> LossParts:
    eps = config.clip_epsilon
    ratio = T.exp(T.sub(log_prob, np.asarray(old_log_prob)))
    adv = np.asarray(advantages, dtype=np.float64)
    surrogate = T.minimum(T.mul(ratio, adv), T.mul(T.clip(ratio, 1.0 - eps, 1.0 + eps), adv))
    j_clip = T.mean(surrogate)
    j_value = T.mean(T.square(T.sub(value, np.asarray(value_target))))
    h = T.mean(entropy)
    loss = T.add(T.sub(T.mul(config.value_coef, j_value), j_clip), T.mul(-config.entropy_coef, h))
    if not np.isfinite(loss.data):
        raise TrainingError(f"non-finite loss (policy {j_clip.data}, value {j_value.data}, entropy {h.data})")
    r = ratio.data
    return LossParts(loss, float(j_clip.data), float(j_value.data), float(h.data),
                     float(np.mean(np.abs(r - 1.0) > eps)), float(np.mean(old_log_prob - log_prob.data)))


def ppo_update(policy: PolicyNet, optimizer: Adam, batch: RolloutBatch, config: PPOConfig,
               rng: np.random.Generator) -> dict:
    trans = batch.transitions
    adv = np.array([t.advantage for t in trans])
    if config.normalize_advantages and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    stats = dict(policy=[], value=[], entropy=[], clip_fraction=[], approx_kl=[], grad_norm=[])
    params = optimizer.params
    for _ in range(config.epochs):
        order = rng.permutation(len(trans))
        for start in range(0, len(order), config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            parts = ppo_objective(policy, [trans[i] for i in idx], config, adv[idx])
            optimizer.zero_grad()
            T.backward(parts.loss)
            norm = clip_grad_norm(params, config.grad_clip)
            if not math.isfinite(norm):
                raise TrainingError("non-finite gradient norm")
            optimizer.step()
            for key in ("policy", "value", "entropy", "clip_fraction", "approx_kl"):
                stats[key].append(getattr(parts, key))
            stats["grad_norm"].append(norm)
    return {k: float(np.mean(v)) if v else 0.0 for k, v in stats.items()}


@dataclass
class TrainResult:
    policy: PolicyNet
    metrics: list[dict]
    episodes: list[Episode]
    snapshots: list = field(default_factory=list)


def eval_points(config: PPOConfig) -> Iterator[int]:
    step = config.eval_start
    while step <= config.total_steps:
        yield step
        step += config.eval_interval


def train(config: PPOConfig, library: FragmentMultiset, backend: EnergyBackend,
          policy_config: PolicyConfig | None = None, out_dir=None, start="random",
          policy: PolicyNet | None = None, on_metrics: Callable[[dict], None] | None = None,
          run_meta: dict | None = None) -> TrainResult:
    """Alternate rollout collection and PPO updates until ``total_steps``.

    At every evaluation point (``eval_start``, then every ``eval_interval``
    steps) a snapshot of ``eval_samples`` sampled episodes is taken, a metrics
    record is emitted and, with ``out_dir``, a checkpoint is written.
    """
    policy = policy or PolicyNet(library, policy_config, seed=config.seed)
    if config.total_steps <= 0:
        return TrainResult(policy, [], [])
    backend = backend if isinstance(backend, CachedBackend) else CachedBackend(backend)
    workers = int(os.environ.get("FRAGFORGE_WORKERS", config.workers))
    collector = RolloutCollector(library, backend, workers, config.seed, start, config.reward_floor,
                                 policy.config.distance_range)
    optimizer = Adam(policy.parameters(), config.learning_rate, config.adam_betas)
    rng = np.random.default_rng(config.seed + 10_007)
    eval_rng_seed = config.seed + 20_011
    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        metrics_fh = open(out / "metrics.jsonl", "w")
    pending = list(eval_points(config))
    history: list[ValidityReport] = []
    episodes: list[Episode] = []
    metrics: list[dict] = []
    snapshots = []
    last_update: dict = {}
    segment: list[Transition] = []
    t0 = time.time()
    try:
        while collector.step_count < config.total_steps:
            n = min(config.rollout_steps, config.total_steps - collector.step_count)
            # stop each segment at the next evaluation point so snapshots land on it exactly
            if pending:
                n = min(n, max(pending[0] - collector.step_count, 1))
            batch, per_worker, last_values = collector.collect(policy, n)
            compute_advantages(per_worker, last_values, config.gamma, config.gae_lambda)
            episodes.extend(batch.episodes)
            segment.extend(batch.transitions)
            if len(segment) >= config.rollout_steps or collector.step_count >= config.total_steps:
                last_update = ppo_update(policy, optimizer, RolloutBatch(segment), config, rng)
                segment = []
            while pending and collector.step_count >= pending[0]:
                step = pending.pop(0)
                snap = evaluation_snapshot(policy, library, backend, config.eval_samples, step,
                                           seed=eval_rng_seed + step, history=history, start=start,
                                           out_dir=None if out is None else out / "snapshots")
                snapshots.append(snap)
                recent = [e for e in episodes if e.end_step > step - config.eval_interval]
                rec = {
                    "step": step,
                    "mean_episode_reward": _mean([e.reward for e in recent]),
                    "mean_episode_raw_reward": _mean([e.raw_reward for e in recent]),
                    "mean_episode_energy_kcal_mol": _mean([e for e in snap.energies if e is not None]),
                    "cumulative_rotation_validity": snap.rotation_ratio,
                    "cumulative_bond_validity": snap.bond_ratio,
                    "loss_policy": last_update.get("policy"),
                    "loss_value": last_update.get("value"),
                    "entropy": last_update.get("entropy"),
                    "grad_norm": last_update.get("grad_norm"),
                    "wall_time": time.time() - t0,
                }
                metrics.append(rec)
                if on_metrics:
                    on_metrics(rec)
                if metrics_fh:
                    metrics_fh.write(json.dumps(rec) + "\n")
                    metrics_fh.flush()
                if out is not None:
                    save_params(out / "checkpoints" / f"step_{step:07d}.npz", policy.named_parameters(),
                                {"step": step, **(run_meta or {})})
    finally:
        if metrics_fh:
            metrics_fh.close()
    return TrainResult(policy, metrics, episodes, snapshots)


def _mean(xs) -> float | None:
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


def config_dict(config: PPOConfig) -> dict:
    d = asdict(config)
    d["adam_betas"] = list(config.adam_betas)
    return d
