"""
Evaluation: success rate and SPL per difficulty band, trajectory dumps and
ablation tables.
"""

import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

import numpy as np

from . import storage
from .augment import AugmentConfig, augment_observation
from .errors import DatasetError
from .memory import MemoryConfig, advance_episode, attention_view, maybe_insert
from .policy import PolicyNet, act
from .sim_world import (
    DIFFICULTY_BANDS, Action, EpisodeSpec, NavigationEpisode, Scene, StepConfig, distance_field,
    fine_nodes, move_forward,
)


logger = logging.getLogger(__name__)


@dataclass
class EpisodeResult:
    spec: EpisodeSpec
    success: bool
    path_length: float
    shortest_path: float
    steps: int
    trajectory: list = field(default_factory=list)


def spl(results: Sequence[EpisodeResult]) -> float:
    """Success weighted by (normalized inverse) path length."""
    if not results:
        raise ValueError("SPL of an empty result set is undefined")
    total = 0.0
    for r in results:
        if r.success:
            total += r.shortest_path / max(r.path_length, r.shortest_path)
    return total / len(results)


def success_rate(results: Sequence[EpisodeResult]) -> float:
    if not results:
        raise ValueError("success rate of an empty result set is undefined")
    return sum(1 for r in results if r.success) / len(results)


def summarize(results: Sequence[EpisodeResult]) -> dict:
    """{difficulty: {success, spl, n}} plus an 'overall' row."""
    table = {}
    for name in DIFFICULTY_BANDS:
        subset = [r for r in results if r.spec.difficulty == name]
        if subset:
            table[name] = {"success": success_rate(subset), "spl": spl(subset), "n": len(subset)}
    if results:
        table["overall"] = {"success": success_rate(results), "spl": spl(results), "n": len(results)}
    return table


def dataset_fingerprint(episodes: Sequence[EpisodeSpec]) -> str:
    digest = hashlib.sha256()
    for e in episodes:
        digest.update(e.episode_id.encode())
        digest.update(repr(e.start_pose + e.goal_position).encode())
    return digest.hexdigest()[:16]


# ============================================================================
# AGENTS
# ============================================================================

class Agent(Protocol):
    """Anything that can drive a NavigationEpisode one action at a time."""

    last_inserted: bool

    def begin_episode(self, episode: NavigationEpisode, rng: np.random.Generator) -> None:
        ...

    def act(self, episode: NavigationEpisode, observation: np.ndarray) -> int:
        ...


class PolicyAgent:
    """Runs a trained PolicyNet with its own recurrent state and memory buffers."""

    def __init__(self, net: PolicyNet, reach_net=None, memory_cfg: MemoryConfig = MemoryConfig(),
                 augment_cfg: AugmentConfig = AugmentConfig(enabled=False), mode: str = "greedy"):
        if net.cfg.use_memory and reach_net is None:
            raise ValueError("a memory policy needs the reachability network")
        self.net = net
        self.reach_net = reach_net
        self.memory_cfg = memory_cfg
        self.augment_cfg = augment_cfg
        self.mode = mode
        self.long_term = (memory_cfg.long_term(reach_net.cfg.embedding)
                          if net.cfg.use_memory and net.cfg.use_long_term else None)
        self.last_inserted = False

    def begin_episode(self, episode: NavigationEpisode, rng: np.random.Generator) -> None:
        self.rng = rng
        self.state = self.net.initial_state(1)
        self.step_index = 0
        if self.net.cfg.use_memory:
            self.episodic = self.memory_cfg.episodic(self.reach_net.cfg.embedding)
            if self.long_term is not None:
                advance_episode(self.long_term, episode.scene.id)

    def act(self, episode: NavigationEpisode, observation: np.ndarray) -> int:
        views = None
        if self.net.cfg.use_memory:
            embedding = self.reach_net.embed(observation)
            _, self.last_inserted = maybe_insert(self.episodic, self.reach_net, embedding,
                                                 self.step_index, embedded=True)
            if self.long_term is not None:
                maybe_insert(self.long_term, self.reach_net, embedding, self.step_index, embedded=True)
            views = [attention_view(self.episodic, self.long_term)]
        obs = augment_observation(observation, self.augment_cfg, self.rng)
        goal = augment_observation(episode.goal_observation, self.augment_cfg, self.rng)
        out = act(self.net, obs[None], goal[None], self.state, views, self.rng, self.mode)
        self.state = out.state
        self.step_index += 1
        return int(out.action[0])


class GeodesicOracleAgent:
    """Greedy descent of the goal's geodesic distance field, then STOP inside the success radius."""

    def __init__(self, stop_radius: Optional[float] = None):
        self.stop_radius = stop_radius
        self.last_inserted = False

    def begin_episode(self, episode: NavigationEpisode, rng: np.random.Generator) -> None:
        self.field = distance_field(episode.scene, episode.spec.goal_position)

    def act(self, episode: NavigationEpisode, observation: np.ndarray) -> int:
        scene, cfg, state = episode.scene, episode.cfg, episode.state
        radius = self.stop_radius if self.stop_radius is not None else cfg.success_distance
        if self.field[fine_nodes(scene, state.position)[0]] <= radius:
            return int(Action.STOP)
        turn = math.radians(cfg.turn_degrees)
        turns = int(round(2 * math.pi / turn))
        best_k, best_value = 0, math.inf
        for k in range(turns):
            offset = k if k <= turns // 2 else k - turns
            x, y, _, _ = move_forward(scene, state.x, state.y, state.heading + offset * turn,
                                      cfg.forward, cfg.margin)
            value = float(self.field[fine_nodes(scene, (x, y))[0]])
            if value < best_value - 1e-9 or (abs(value - best_value) <= 1e-9 and abs(offset) < abs(best_k)):
                best_k, best_value = offset, value
        if best_k == 0:
            return int(Action.MOVE_FORWARD)
        return int(Action.TURN_LEFT if best_k > 0 else Action.TURN_RIGHT)


class ScriptedAgent:
    """Replays a fixed action (e.g. always STOP)."""

    def __init__(self, action: int):
        self.action = int(action)
        self.last_inserted = False

    def begin_episode(self, episode: NavigationEpisode, rng: np.random.Generator) -> None:
        pass

    def act(self, episode: NavigationEpisode, observation: np.ndarray) -> int:
        return self.action


# ============================================================================
# EVALUATION
# ============================================================================

def run_episode(agent: Agent, episode: NavigationEpisode, rng: np.random.Generator,
                record_trajectory: bool = False) -> EpisodeResult:
    agent.begin_episode(episode, rng)
    trajectory = []
    observation = episode.observe()
    while not episode.done:
        action = agent.act(episode, observation)
        if record_trajectory:
            s = episode.state
            trajectory.append({"episode": episode.spec.episode_id, "step": s.step_count, "x": s.x, "y": s.y,
                               "heading": s.heading, "action": Action(action).name,
                               "inserted_memory": bool(agent.last_inserted)})
        result = episode.step(action)
        observation = result.observation
    return EpisodeResult(spec=episode.spec, success=episode.success, path_length=episode.state.path_length,
                         shortest_path=episode.spec.geodesic_start_goal, steps=episode.state.step_count,
                         trajectory=trajectory)


@dataclass
class EvaluationReport:
    results: list
    table: dict
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {**self.meta, "difficulty": self.table}


def evaluate(agent_factory: Callable[[], Agent], scenes: Mapping[str, Scene], episodes: Sequence[EpisodeSpec],
             step_cfg: StepConfig = StepConfig(), seed: int = 0, workers: int = 4,
             record_trajectories: bool = False, meta: Optional[dict] = None) -> EvaluationReport:
    """
    Run every episode to termination and tabulate success and SPL.

    Episodes of one scene run in order on one agent (so long-term memory carries
    over); scenes run in parallel. Each episode draws from its own seed.
    """
    if not episodes:
        raise DatasetError("evaluation needs at least one episode")
    seeds = np.random.SeedSequence(seed).spawn(len(episodes))
    groups = {}
    for index, spec in enumerate(episodes):
        groups.setdefault(spec.scene_id, []).append(index)

    def run_group(indices):
        agent = agent_factory()
        out = []
        for index in indices:
            spec = episodes[index]
            episode = NavigationEpisode(scenes[spec.scene_id], spec, step_cfg)
            out.append((index, run_episode(agent, episode, np.random.default_rng(seeds[index]),
                                           record_trajectories)))
        return out

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        finished = [item for group in pool.map(run_group, groups.values()) for item in group]
    results = [r for _, r in sorted(finished, key=lambda item: item[0])]
    table = summarize(results)
    logger.info("Evaluated %d episodes: success=%.3f spl=%.3f", len(results),
                table["overall"]["success"], table["overall"]["spl"])
    info = {"episodes": len(results), "dataset": dataset_fingerprint(episodes), "seed": seed}
    info.update(meta or {})
    return EvaluationReport(results=results, table=table, meta=info)


def write_trajectories(path: Path, results: Sequence[EpisodeResult]) -> Path:
    return storage.write_jsonl(path, (row for r in results for row in r.trajectory))


# ============================================================================
# ABLATIONS
# ============================================================================

METRICS = ("success", "spl")


def ablation_report(runs: Mapping[str, Sequence[dict]]) -> dict:
    """
    Aggregate evaluation reports (one per seed) per arm.

    Args:
        runs: arm -> list of report dicts as written by `evaluate(...).to_dict()`

    Returns:
        {"arms": [...], "baseline": first arm, "rows": [...]} with one row per
        (arm, difficulty): mean/min/max per metric and the difference of means
        against the first arm
    """
    if not runs:
        raise DatasetError("ablation needs at least one arm")
    arms = list(runs)
    reference = runs[arms[0]]
    ref_seeds = sorted(r.get("seed") for r in reference)
    ref_datasets = {r.get("dataset") for r in reference}
    for arm in arms:
        if sorted(r.get("seed") for r in runs[arm]) != ref_seeds:
            raise DatasetError(f"arm '{arm}' was evaluated on different seeds than '{arms[0]}'")
        if {r.get("dataset") for r in runs[arm]} != ref_datasets:
            raise DatasetError(f"arm '{arm}' was evaluated on a different episode dataset than '{arms[0]}'")

    difficulties = [d for d in list(DIFFICULTY_BANDS) + ["overall"]
                    if any(d in r["difficulty"] for reports in runs.values() for r in reports)]
    means = {}
    rows = []
    for arm in arms:
        for difficulty in difficulties:
            row = {"arm": arm, "difficulty": difficulty}
            for metric in METRICS:
                values = [r["difficulty"][difficulty][metric] for r in runs[arm] if difficulty in r["difficulty"]]
                if not values:
                    continue
                row[f"{metric}_mean"] = float(np.mean(values))
                row[f"{metric}_min"] = float(np.min(values))
                row[f"{metric}_max"] = float(np.max(values))
                means[(arm, difficulty, metric)] = row[f"{metric}_mean"]
            for metric in METRICS:
                base = means.get((arms[0], difficulty, metric))
                own = means.get((arm, difficulty, metric))
                if base is not None and own is not None:
                    row[f"{metric}_diff"] = own - base
            rows.append(row)
    return {"arms": arms, "baseline": arms[0], "difficulties": difficulties, "seeds": ref_seeds, "rows": rows}


ABLATION_COLUMNS = ("arm", "difficulty", "success_mean", "success_min", "success_max", "success_diff",
                    "spl_mean", "spl_min", "spl_max", "spl_diff")


def write_ablation(out_dir: Path, report: dict) -> tuple:
    out_dir = Path(out_dir)
    csv_path = storage.write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS,
                                 ([row.get(c, "") for c in ABLATION_COLUMNS] for row in report["rows"]))
    json_path = storage.write_json(out_dir / "ablation.json", report)
    return csv_path, json_path
