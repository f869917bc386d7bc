"""
PPO with generalized advantage estimation over in-process parallel workers.

Each update collects a fixed-length segment from every worker (batched policy
forward, environments and memories stepped on a thread pool), then runs the
clipped-surrogate update on the whole segment, replaying the recurrent core
from the segment-start state.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import storage
from .augment import AugmentConfig, augment_observation
from .errors import TrainingDivergedError, WorkerError
from .eval_metrics import EpisodeResult, PolicyAgent, evaluate, spl
from .memory import MemoryConfig, advance_episode, attention_view, maybe_insert, reset_episodic
from .policy import PolicyNet, PolicyState, act
from .sim_world import EpisodeSpec, NavigationEpisode, Scene, StepConfig
from .tensor_nn import Tensor, adam_step, clip, exp, minimum, mul, no_grad


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs: int = 2
    lr: float = 9e-5
    gamma: float = 0.99
    lam: float = 0.95
    segment: int = 64
    workers: int = 8
    updates: int = 5000
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    ckpt_every: int = 500
    eval_every: int = 250
    eval_episodes: int = 60
    seed: int = 0

    def validate(self) -> None:
        if self.clip <= 0:
            raise ValueError(f"ppo.clip must be > 0, got {self.clip}")
        if self.epochs < 1:
            raise ValueError(f"ppo.epochs must be >= 1, got {self.epochs}")


@dataclass
class RolloutBuffer:
    """Arrays of shape (L, B, ...) for one segment of B workers."""

    obs: np.ndarray
    goal_obs: np.ndarray
    actions: np.ndarray
    prev_actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    starts: np.ndarray
    start_state: PolicyState
    bootstrap: np.ndarray
    memory_views: Optional[list] = None
    finished: list = field(default_factory=list)

    @property
    def transitions(self) -> int:
        return int(self.actions.size)


# ============================================================================
# WORKERS
# ============================================================================

class RolloutWorker:
    """Owns one environment, its memories and its RNG stream."""

    def __init__(self, worker_id: int, scenes: Mapping[str, Scene], episodes: Sequence[EpisodeSpec],
                 step_cfg: StepConfig, augment_cfg: AugmentConfig, rng: np.random.Generator,
                 reach_net=None, memory_cfg: MemoryConfig = MemoryConfig(), use_long_term: bool = False):
        self.worker_id = worker_id
        self.scenes = scenes
        self.episodes = list(episodes)
        self.step_cfg = step_cfg
        self.augment_cfg = augment_cfg
        self.rng = rng
        self.reach_net = reach_net
        self.memory_cfg = memory_cfg
        self.episodic = memory_cfg.episodic(reach_net.cfg.embedding) if reach_net is not None else None
        self.long_term = (memory_cfg.long_term(reach_net.cfg.embedding)
                          if reach_net is not None and use_long_term else None)
        self.insertion_log = []
        self.env = None
        self._begin_episode()

    @property
    def spec(self) -> Optional[EpisodeSpec]:
        return self.env.spec if self.env is not None else None

    def _begin_episode(self) -> None:
        spec = self.episodes[int(self.rng.integers(len(self.episodes)))]
        self.env = NavigationEpisode(self.scenes[spec.scene_id], spec, self.step_cfg)
        self.observation = self.env.observe()
        if self.episodic is not None:
            reset_episodic(self.episodic)
            if self.long_term is not None:
                advance_episode(self.long_term, spec.scene_id)
            self._remember(self.observation)

    def _remember(self, observation: np.ndarray) -> None:
        embedding = self.reach_net.embed(observation)
        step_index = self.env.state.step_count
        _, inserted = maybe_insert(self.episodic, self.reach_net, embedding, step_index, embedded=True)
        if self.long_term is not None:
            maybe_insert(self.long_term, self.reach_net, embedding, step_index, embedded=True)
        if self.episodic.log is not None:
            record = dict(self.episodic.log[-1], worker=self.worker_id, episode=self.env.spec.episode_id)
            self.insertion_log.append(record)

    def prepare(self) -> tuple:
        """(raw obs, raw goal, augmented obs, augmented goal, memory view) for the next action."""
        try:
            aug_obs = augment_observation(self.observation, self.augment_cfg, self.rng)
            aug_goal = augment_observation(self.env.goal_observation, self.augment_cfg, self.rng)
            view = attention_view(self.episodic, self.long_term) if self.episodic is not None else None
            return self.observation, self.env.goal_observation, aug_obs, aug_goal, view
        except Exception as exc:
            raise WorkerError(self.worker_id, self.spec.episode_id if self.spec else None, exc) from exc

    def apply(self, action: int) -> tuple:
        """Step the environment; returns (reward, done, finished EpisodeResult or None)."""
        try:
            result = self.env.step(int(action))
            finished = None
            if result.done:
                spec = self.env.spec
                finished = EpisodeResult(spec=spec, success=result.success,
                                         path_length=self.env.state.path_length,
                                         shortest_path=spec.geodesic_start_goal,
                                         steps=self.env.state.step_count)
                self._begin_episode()
            else:
                self.observation = result.observation
                if self.episodic is not None:
                    self._remember(self.observation)
            return result.reward, result.done, finished
        except WorkerError:
            raise
        except Exception as exc:
            raise WorkerError(self.worker_id, self.spec.episode_id if self.spec else None, exc) from exc


def make_workers(count: int, scenes: Mapping[str, Scene], episodes: Sequence[EpisodeSpec],
                 step_cfg: StepConfig, augment_cfg: AugmentConfig, seed: int, reach_net=None,
                 memory_cfg: MemoryConfig = MemoryConfig(), use_long_term: bool = False) -> list:
    streams = np.random.SeedSequence(seed).spawn(count)
    return [RolloutWorker(n, scenes, episodes, step_cfg, augment_cfg, np.random.default_rng(s),
                          reach_net, memory_cfg, use_long_term) for n, s in enumerate(streams)]


def collect_rollouts(workers: Sequence[RolloutWorker], net: PolicyNet, state: PolicyState, length: int,
                     pool: ThreadPoolExecutor, rng: np.random.Generator) -> tuple:
    """
    Step every worker `length` times with a batched policy forward.

    Returns:
        (RolloutBuffer, state after the segment)
    """
    batch = len(workers)
    start_state = state.copy()
    obs, goals, actions, prev_actions, log_probs, values, rewards, dones = ([] for _ in range(8))
    starts = np.zeros((length, batch), dtype=bool)
    views, finished = [], []
    for t in range(length):
        prepared = list(pool.map(lambda w: w.prepare(), workers))
        raw_obs, raw_goal, aug_obs, aug_goal, step_views = (list(x) for x in zip(*prepared))
        memory = step_views if net.cfg.use_memory else None
        out = act(net, np.stack(aug_obs), np.stack(aug_goal), state, memory, rng, mode="sample")
        stepped = list(pool.map(lambda pair: pair[0].apply(pair[1]), zip(workers, out.action)))
        step_rewards, step_dones, step_finished = zip(*stepped)

        obs.append(np.stack(raw_obs))
        goals.append(np.stack(raw_goal))
        actions.append(out.action)
        prev_actions.append(state.prev_action.copy())
        log_probs.append(out.log_prob)
        values.append(out.value)
        rewards.append(np.array(step_rewards))
        dones.append(np.array(step_dones))
        views.append(memory)
        finished.extend(r for r in step_finished if r is not None)

        state = out.state
        done_rows = np.nonzero(dones[-1])[0]
        if done_rows.size:
            state.reset(done_rows)
            if t + 1 < length:
                starts[t + 1, done_rows] = True

    prepared = list(pool.map(lambda w: w.prepare(), workers))
    _, _, aug_obs, aug_goal, step_views = (list(x) for x in zip(*prepared))
    with no_grad():
        _, bootstrap, _, _ = net.forward(np.stack(aug_obs), np.stack(aug_goal), state,
                                         step_views if net.cfg.use_memory else None)
    buffer = RolloutBuffer(
        obs=np.stack(obs), goal_obs=np.stack(goals), actions=np.stack(actions),
        prev_actions=np.stack(prev_actions), log_probs=np.stack(log_probs), values=np.stack(values),
        rewards=np.stack(rewards), dones=np.stack(dones), starts=starts, start_state=start_state,
        bootstrap=bootstrap.data.astype(np.float64), memory_views=views if net.cfg.use_memory else None,
        finished=finished)
    return buffer, state


# ============================================================================
# LOSSES AND UPDATE
# ============================================================================

def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, bootstrap,
                gamma: float = 0.99, lam: float = 0.95, normalize: bool = True) -> tuple:
    """
    Generalized advantage estimation along axis 0.

    Returns:
        (advantages, returns); returns are computed before normalization
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    advantages = np.zeros_like(rewards)
    next_value = np.asarray(bootstrap, dtype=np.float64)
    running = np.zeros_like(next_value)
    for t in reversed(range(rewards.shape[0])):
        delta = rewards[t] + gamma * next_value * not_done[t] - values[t]
        running = delta + gamma * lam * not_done[t] * running
        advantages[t] = running
        next_value = values[t]
    returns = advantages + values
    if normalize:
        advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)
    return advantages, returns


def clipped_surrogate(ratio: Tensor, advantages: np.ndarray, eps: float) -> Tensor:
    """Per-sample loss -min(rho*A, clip(rho, 1-eps, 1+eps)*A)."""
    return -minimum(mul(ratio, advantages), mul(clip(ratio, 1 - eps, 1 + eps), advantages))


def ppo_loss(policy_loss: Tensor, value_loss: Tensor, entropy: Tensor, cfg: PPOConfig) -> Tensor:
    """L_clip + c_v * L_value - c_e * mean entropy."""
    return policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy.mean()


def ppo_update(net: PolicyNet, buffer: RolloutBuffer, cfg: PPOConfig, augment_cfg: AugmentConfig,
               rng: np.random.Generator) -> dict:
    """
    PPO epochs over the whole segment, one Adam step each. On a non-finite
    loss the parameters are restored and TrainingDivergedError is raised.
    """
    advantages, returns = compute_gae(buffer.rewards, buffer.values, buffer.dones, buffer.bootstrap,
                                      cfg.gamma, cfg.lam, cfg.normalize_advantages)
    last_good = net.store.snapshot()
    stats = {}
    for epoch in range(cfg.epochs):
        obs, goals = buffer.obs, buffer.goal_obs
        if augment_cfg.enabled:
            obs = np.stack([[augment_observation(o, augment_cfg, rng) for o in row] for row in obs])
            goals = np.stack([[augment_observation(g, augment_cfg, rng) for g in row] for row in goals])
        net.store.zero_grad()
        log_probs, values, entropy = net.evaluate_segment(
            obs, goals, buffer.actions, buffer.prev_actions, buffer.starts, buffer.start_state,
            buffer.memory_views)
        ratio = exp(log_probs - buffer.log_probs)
        policy_loss = clipped_surrogate(ratio, advantages, cfg.clip).mean()
        value_error = values - returns
        value_loss = (value_error * value_error).mean()
        entropy_mean = entropy.mean()
        loss = ppo_loss(policy_loss, value_loss, entropy, cfg)
        if not math.isfinite(loss.item()):
            net.store.restore(last_good)
            raise TrainingDivergedError(f"PPO loss became {loss.item()} in epoch {epoch + 1}")
        loss.backward()
        grad_norm = net.store.clip_grad_norm(cfg.grad_clip)
        adam_step(net.store, cfg.lr)
        if not all(np.all(np.isfinite(p.data)) for _, p in net.store.items()):
            net.store.restore(last_good)
            raise TrainingDivergedError(f"parameters became non-finite in PPO epoch {epoch + 1}")
        last_good = net.store.snapshot()
        stats = {
            "loss": loss.item(),
            "policy_loss": policy_loss.item(),
            "value_loss": value_loss.item(),
            "entropy": entropy_mean.item(),
            "grad_norm": grad_norm,
            "clip_fraction": float(np.mean(np.abs(ratio.data - 1) > cfg.clip)),
            "approx_kl": float(np.mean(buffer.log_probs - log_probs.data)),
        }
    return stats


# ============================================================================
# TRAINING LOOP
# ============================================================================

@dataclass
class TrainingSetup:
    scenes: Mapping[str, Scene]
    train_episodes: Sequence[EpisodeSpec]
    test_episodes: Sequence[EpisodeSpec]
    step_cfg: StepConfig = StepConfig()
    augment_cfg: AugmentConfig = AugmentConfig()
    memory_cfg: MemoryConfig = MemoryConfig()
    reach_net: object = None


def metrics_columns(difficulties: Sequence[str]) -> list:
    columns = ["update", "env_steps", "loss", "policy_loss", "value_loss", "entropy",
               "train_spl_proxy", "train_success", "test_success", "test_spl"]
    for name in difficulties:
        columns += [f"test_success_{name}", f"test_spl_{name}"]
    return columns


def train(net: PolicyNet, setup: TrainingSetup, cfg: PPOConfig, out_dir: Path) -> dict:
    """
    Alternate rollout collection and PPO updates, evaluating on the test
    episodes every `eval_every` updates and checkpointing every `ckpt_every`.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if net.cfg.use_memory and setup.reach_net is None:
        raise ValueError("memory-enabled training needs a trained reachability network")
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    workers = make_workers(cfg.workers, setup.scenes, setup.train_episodes, setup.step_cfg, setup.augment_cfg,
                           int(seeds[0].generate_state(1)[0]),
                           setup.reach_net if net.cfg.use_memory else None, setup.memory_cfg,
                           net.cfg.use_long_term)
    act_rng = np.random.default_rng(seeds[1])
    update_rng = np.random.default_rng(seeds[2])
    eval_rng = np.random.default_rng(cfg.seed)
    eval_episodes = list(setup.test_episodes)
    if len(eval_episodes) > cfg.eval_episodes:
        picks = np.sort(eval_rng.choice(len(eval_episodes), size=cfg.eval_episodes, replace=False))
        eval_episodes = [eval_episodes[i] for i in picks]
    difficulties = sorted({e.difficulty for e in eval_episodes})
    columns = metrics_columns(difficulties)
    rows, recent = [], []
    state = net.initial_state(len(workers))

    def agent_factory():
        return PolicyAgent(net, setup.reach_net if net.cfg.use_memory else None, setup.memory_cfg)

    with ThreadPoolExecutor(max_workers=len(workers)) as pool:
        for update in range(1, cfg.updates + 1):
            buffer, state = collect_rollouts(workers, net, state, cfg.segment, pool, act_rng)
            recent.extend(buffer.finished)
            try:
                stats = ppo_update(net, buffer, cfg, setup.augment_cfg, update_rng)
            except TrainingDivergedError:
                path = net.save(out_dir / "checkpoints" / "last-good.nvmc", {"update": update - 1})
                logger.error("Training diverged at update %d; last good parameters saved to %s", update, path)
                raise

            if update % cfg.eval_every == 0 or update == cfg.updates:
                report = evaluate(agent_factory, setup.scenes, eval_episodes, setup.step_cfg, seed=cfg.seed,
                                  workers=len(workers))
                row = {"update": update, "env_steps": update * cfg.segment * len(workers), **stats,
                       "train_spl_proxy": spl(recent) if recent else float("nan"),
                       "train_success": (sum(r.success for r in recent) / len(recent)) if recent else float("nan"),
                       "test_success": report.table["overall"]["success"],
                       "test_spl": report.table["overall"]["spl"]}
                for name in difficulties:
                    row[f"test_success_{name}"] = report.table[name]["success"]
                    row[f"test_spl_{name}"] = report.table[name]["spl"]
                rows.append(row)
                recent = []
                storage.write_csv(out_dir / "metrics.csv", columns, ([r.get(c, "") for c in columns] for r in rows))
                logger.info("Update %d: loss=%.4f entropy=%.3f test_success=%.3f test_spl=%.3f",
                            update, stats["loss"], stats["entropy"], row["test_success"], row["test_spl"])
            if update % cfg.ckpt_every == 0:
                net.save(out_dir / "checkpoints" / f"policy-{update:06d}.nvmc", {"update": update})

    final = net.save(out_dir / "policy.nvmc", {"update": cfg.updates})
    logs = [r for w in workers for r in w.insertion_log]
    if logs:
        storage.write_jsonl(out_dir / "insertions.jsonl", logs)
    return {"checkpoint": str(final), "metrics": rows}
