"""
Pipeline commands shared by the CLI and the MCP tools.

Every command takes a resolved ExperimentConfig, writes its artifacts under
the output root and a resolved-config.json next to them, and returns a
summary dict of what it wrote.

Output layout under the root:
    scenes/       one JSON per scene + split.json
    walks/        one archive per training scene
    reach/        reachability checkpoint, accuracy.csv, pairs.jsonl
    tau/          tau.json
    episodes/     train.jsonl, test.jsonl, summary.json
    policy/<arm>-seed<seed>/   policy.nvmc, metrics.csv, checkpoints/
    eval/<arm>-seed<seed>-<split>/   report.json, report.pdf, trajectories.jsonl
    ablation/     ablation.csv, ablation.json, ablation.pdf
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import storage
from .config import ARMS, ExperimentConfig, output_root, write_resolved
from .errors import ConfigError, DatasetError
from .eval_metrics import PolicyAgent, ablation_report, evaluate, write_ablation, write_trajectories
from .pdf_report import create_ablation_pdf, create_evaluation_pdf
from .policy import PolicyNet
from .ppo_trainer import TrainingSetup, train
from .reachability import ReachabilityNet, build_pair_dataset, calibrate_threshold, train_reachability
from .sim_world import generate_episode_dataset, generate_scene, random_walk, render_with, walk_step_config


logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


# ============================================================================
# LAYOUT HELPERS
# ============================================================================

def _prepare(cfg: ExperimentConfig, *parts: str) -> Path:
    out = output_root(cfg).joinpath(*parts)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    return out


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise DatasetError(f"{path} not found; run '{produced_by}' first")
    return path


def load_split(cfg: ExperimentConfig) -> dict:
    """{"train": {scene_id: Scene}, "test": {...}} in manifest order."""
    scene_dir = output_root(cfg) / "scenes"
    manifest = storage.read_json(_require(scene_dir / "split.json", "gen-scenes"))
    return {split: {sid: storage.load_scene(scene_dir / f"{sid}.json") for sid in manifest[split]}
            for split in SPLITS}


def load_walks(cfg: ExperimentConfig) -> dict:
    walk_dir = output_root(cfg) / "walks"
    manifest = storage.read_json(_require(walk_dir / "walks.json", "collect-walks"))
    return {sid: storage.load_walk(walk_dir / f"{sid}.walk") for sid in manifest["scenes"]}


def load_reach_net(cfg: ExperimentConfig) -> ReachabilityNet:
    return ReachabilityNet.load(_require(output_root(cfg) / "reach" / "reachability.nvmc", "train-reach"))


def load_episode_split(cfg: ExperimentConfig, split: str) -> list:
    if split not in SPLITS:
        raise ConfigError(f"unknown split '{split}', expected one of {SPLITS}")
    return storage.load_episodes(_require(output_root(cfg) / "episodes" / f"{split}.jsonl", "gen-episodes"))


def run_name(arm: str, seed: int) -> str:
    return f"{arm}-seed{seed}"


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_gen_scenes(cfg: ExperimentConfig) -> dict:
    """Generate train and test scenes plus a split manifest."""
    out = _prepare(cfg, "scenes")
    params = cfg.scene_params()
    n_train, n_test = cfg["scenes.train"], cfg["scenes.test"]
    seeds = [int(s) for s in np.random.SeedSequence(cfg["seed"]).generate_state(n_train + n_test)]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("scene seed collision; choose another run seed")
    scenes = [generate_scene(s, params) for s in seeds]
    for scene in scenes:
        storage.save_scene(out / f"{scene.id}.json", scene)
    manifest = {"train": [s.id for s in scenes[:n_train]], "test": [s.id for s in scenes[n_train:]]}
    storage.write_json(out / "split.json", manifest)
    logger.info("Wrote %d train and %d test scenes to %s", n_train, n_test, out)
    return {"directory": str(out), "train": len(manifest["train"]), "test": len(manifest["test"])}


def cmd_collect_walks(cfg: ExperimentConfig) -> dict:
    """One random walk per training scene."""
    scenes = list(load_split(cfg)["train"].values())
    out = _prepare(cfg, "walks")
    step_cfg = walk_step_config(cfg.render_config(), cfg["walks.margin"])
    length = cfg["walks.length"]

    def collect(item):
        index, scene = item
        walk = random_walk(scene, length, step_cfg, [cfg["seed"], index], cfg["sim.min_clearance"])
        return storage.save_walk(out / f"{scene.id}.walk", np.stack([obs for obs, _ in walk]))

    with ThreadPoolExecutor(max_workers=max(1, cfg["reach.workers"])) as pool:
        paths = list(pool.map(collect, enumerate(scenes)))
    storage.write_json(out / "walks.json", {"scenes": [s.id for s in scenes], "length": length})
    logger.info("Collected %d walks of %d steps", len(paths), length)
    return {"directory": str(out), "walks": len(paths), "steps": len(paths) * length}


def cmd_train_reach(cfg: ExperimentConfig) -> dict:
    """Sample pairs from the walks and train the reachability network."""
    walks = load_walks(cfg)
    out = _prepare(cfg, "reach")
    names = sorted(walks)
    dataset = build_pair_dataset([walks[n] for n in names], cfg["reach.positives"], cfg["reach.negatives"],
                                 k=cfg["reach.k"], rng_seed=cfg["seed"], val_fraction=cfg["reach.val_fraction"],
                                 walk_ids=names, workers=cfg["reach.workers"])
    storage.save_pair_index(out / "pairs.jsonl", dataset.records())
    net = ReachabilityNet(cfg.reach_config(), seed=cfg["seed"])
    history = train_reachability(net, dataset, cfg.reach_train_config(), log_path=out / "accuracy.csv")
    final = history[-1] if history else {}
    net.save(out / "reachability.nvmc", {"seed": cfg["seed"], "val_acc": final.get("val_acc")})
    return {"directory": str(out), "pairs": len(dataset), "val_acc": final.get("val_acc"),
            "epochs": len(history)}


def cmd_calibrate_tau(cfg: ExperimentConfig) -> dict:
    """Sweep tau on fresh walks through the test scenes."""
    net = load_reach_net(cfg)
    scenes = list(load_split(cfg)["test"].values())
    out = _prepare(cfg, "tau")
    window = cfg["memory.calibration_window"]
    step_cfg = walk_step_config(cfg.render_config(), cfg["walks.margin"])
    walks = [np.stack([obs for obs, _ in random_walk(scene, 2 * window, step_cfg, [cfg["seed"], 1, index],
                                                      cfg["sim.min_clearance"])])
             for index, scene in enumerate(scenes)]
    report = calibrate_threshold(net, walks, cfg["memory.calibration_thresholds"], window=window,
                                 capacity=cfg["memory.capacity"],
                                 target=(cfg["memory.target_min"], cfg["memory.target_max"]))
    storage.write_json(out / "tau.json", report)
    logger.info("Recommended tau: %s", report["recommended_tau"])
    return {"directory": str(out), "recommended_tau": report["recommended_tau"]}


def cmd_gen_episodes(cfg: ExperimentConfig) -> dict:
    """Episode datasets per split and difficulty band."""
    split = load_split(cfg)
    out = _prepare(cfg, "episodes")
    summary = {}
    for offset, name in enumerate(SPLITS):
        per_band = cfg[f"episodes.{name}_per_difficulty"]
        dataset = generate_episode_dataset(list(split[name].values()), per_band, rng_seed=cfg["seed"] * 2 + offset,
                                           difficulties=cfg["episodes.difficulties"],
                                           min_clearance=cfg["sim.min_clearance"],
                                           max_starts=cfg["episodes.max_starts"])
        storage.save_episodes(out / f"{name}.jsonl", dataset)
        summary[name] = {
            "episodes": len(dataset),
            "per_difficulty": {band: len(dataset.by_difficulty(band)) for band in cfg["episodes.difficulties"]},
            "unsatisfiable": [list(item) for item in dataset.unsatisfiable],
        }
    storage.write_json(out / "summary.json", summary)
    return {"directory": str(out), **{name: summary[name]["episodes"] for name in SPLITS}}


def cmd_train_policy(cfg: ExperimentConfig, arm: str = "memory") -> dict:
    """Train one ablation arm with PPO."""
    policy_cfg = cfg.policy_config(arm)
    split = load_split(cfg)
    scenes = {**split["train"], **split["test"]}
    reach_net = load_reach_net(cfg) if policy_cfg.use_memory else None
    setup = TrainingSetup(scenes=scenes, train_episodes=load_episode_split(cfg, "train"),
                          test_episodes=load_episode_split(cfg, "test"), step_cfg=cfg.step_config(),
                          augment_cfg=cfg.arm_augment(arm), memory_cfg=cfg.memory_config(), reach_net=reach_net)
    out = _prepare(cfg, "policy", run_name(arm, cfg["seed"]))
    net = PolicyNet(policy_cfg, seed=cfg["seed"])
    logger.info("Training arm '%s' (%d parameters)", arm, net.store.num_parameters())
    result = train(net, setup, cfg.ppo_config(), out)
    last = result["metrics"][-1] if result["metrics"] else {}
    return {"directory": str(out), "arm": arm, "checkpoint": result["checkpoint"],
            "test_spl": last.get("test_spl"), "test_success": last.get("test_success")}


def cmd_eval(cfg: ExperimentConfig, arm: str = "memory", checkpoint: Optional[str] = None,
             split: Optional[str] = None) -> dict:
    """Evaluate a policy checkpoint on the train or test episodes."""
    if arm not in ARMS:
        raise ConfigError(f"unknown arm '{arm}', expected one of {ARMS}")
    split_name = split or cfg["eval.split"]
    episodes = load_episode_split(cfg, split_name)
    scene_split = load_split(cfg)
    scenes = {**scene_split["train"], **scene_split["test"]}
    path = Path(checkpoint) if checkpoint else output_root(cfg) / "policy" / run_name(arm, cfg["seed"]) / "policy.nvmc"
    net = PolicyNet.load(_require(path, "train-policy"), with_optimizer=False)
    reach_net = load_reach_net(cfg) if net.cfg.use_memory else None
    memory_cfg = cfg.memory_config()
    out = _prepare(cfg, "eval", f"{run_name(arm, cfg['seed'])}-{split_name}")

    report = evaluate(lambda: PolicyAgent(net, reach_net, memory_cfg), scenes, episodes, cfg.step_config(),
                      seed=cfg["seed"], workers=cfg["eval.workers"],
                      record_trajectories=cfg["eval.trajectories"],
                      meta={"arm": arm, "split": split_name, "checkpoint": path.name})
    data = report.to_dict()
    storage.write_json(out / "report.json", data)
    if cfg["eval.trajectories"]:
        write_trajectories(out / "trajectories.jsonl", report.results)
    if cfg["eval.pdf"]:
        step_cfg = cfg.step_config()
        picks = episodes[:cfg["eval.previews"]]
        previews = []
        for spec in picks:
            previews.append((spec.episode_id, render_with(scenes[spec.scene_id],
                                                          (*spec.goal_position, spec.goal_heading), step_cfg.render)))
        create_evaluation_pdf(data, out / "report.pdf", previews)
    return {"directory": str(out), **{name: cell for name, cell in report.table.items()}}


def cmd_ablate(cfg: ExperimentConfig, arms: Sequence[str] = ("baseline", "augment", "memory"),
               seeds: Optional[Sequence[int]] = None, reports: Optional[Mapping[str, Sequence[str]]] = None) -> dict:
    """
    Aggregate evaluation reports per arm.

    Args:
        arms: arms whose reports are read from eval/<arm>-seed<seed>-<split>/
        seeds: defaults to eval.seeds
        reports: explicit label -> report.json paths (e.g. view-count runs kept
            under other output roots); replaces `arms` when given
    """
    runs = {}
    if reports:
        for label, paths in reports.items():
            runs[label] = [storage.read_json(_require(Path(p), "eval")) for p in paths]
    else:
        root = output_root(cfg) / "eval"
        for arm in arms:
            runs[arm] = [storage.read_json(_require(root / f"{run_name(arm, s)}-{cfg['eval.split']}" / "report.json",
                                                    "eval"))
                         for s in (seeds if seeds is not None else cfg["eval.seeds"])]
    out = _prepare(cfg, "ablation")
    table = ablation_report(runs)
    write_ablation(out, table)
    if cfg["eval.pdf"]:
        create_ablation_pdf(table, out / "ablation.pdf")
    return {"directory": str(out), "arms": table["arms"], "rows": len(table["rows"])}


COMMANDS = {
    "gen-scenes": cmd_gen_scenes,
    "collect-walks": cmd_collect_walks,
    "train-reach": cmd_train_reach,
    "calibrate-tau": cmd_calibrate_tau,
    "gen-episodes": cmd_gen_episodes,
    "train-policy": cmd_train_policy,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}
