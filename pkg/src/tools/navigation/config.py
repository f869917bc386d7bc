"""
Experiment configuration.

A flat mapping of dotted keys to values with a documented default for every
key, a line-oriented `key = value` text format, the desk and paper presets,
and the default output directory kept in a small JSON file in the home dir.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import storage
from .augment import AugmentConfig
from .errors import ConfigError
from .memory import MemoryConfig
from .policy import PolicyConfig
from .ppo_trainer import PPOConfig
from .reachability import ReachabilityConfig, ReachTrainConfig
from .sim_world import RenderConfig, RewardConfig, SceneParams, StepConfig


logger = logging.getLogger(__name__)

CODE_VERSION = "navmem 0.1.0"

# Config file for storing the default output directory
CONFIG_FILE = Path.home() / ".navmem_config"

RESOLVED_CONFIG_NAME = "resolved-config.json"

ARMS = ("baseline", "augment", "memory", "lt_memory")


# key -> (default, description)
DEFAULTS = {
    "seed": (0, "run seed; every random stream is spawned from it"),
    "output_dir": ("", "output directory; empty means the saved default directory"),

    "scenes.train": (24, "number of training scenes"),
    "scenes.test": (6, "number of test scenes"),
    "scenes.width": (16.0, "scene width in world units"),
    "scenes.height": (16.0, "scene height in world units"),
    "scenes.cell": (1.0, "occupancy cell size"),
    "scenes.density": (0.2, "target wall-cell fraction"),
    "scenes.max_retries": (20, "generation attempts before giving up"),

    "sim.views": (4, "panoramic views per observation"),
    "sim.rays": (32, "rays per view strip"),
    "sim.channels": (4, "3 = color, 4 = color + inverse depth"),
    "sim.forward": (0.25, "MOVE_FORWARD distance"),
    "sim.turn_degrees": (10.0, "TURN_LEFT / TURN_RIGHT angle"),
    "sim.margin": (0.01, "minimum wall clearance kept by forward motion"),
    "sim.success_distance": (1.0, "STOP within this geodesic distance succeeds"),
    "sim.max_steps": (500, "episode step limit"),
    "sim.min_clearance": (0.25, "clearance required for sampled start, goal and walk positions"),
    "sim.reward_shape": (1.0, "weight of the geodesic-progress reward"),
    "sim.reward_slack": (-0.01, "constant per-step reward"),
    "sim.reward_success": (2.5, "bonus for a successful STOP"),

    "walks.length": (2000, "observations per random walk"),
    "walks.margin": (0.01, "wall clearance kept by walk steps"),

    "episodes.train_per_difficulty": (200, "training episodes per difficulty band"),
    "episodes.test_per_difficulty": (50, "test episodes per difficulty band"),
    "episodes.difficulties": (["easy", "medium", "hard"], "difficulty bands to generate"),
    "episodes.max_starts": (200, "start positions tried per scene and band"),

    "augment.enabled": (True, "augment observations during training"),
    "augment.crop_min_scale": (0.8, "smallest random crop as a fraction of the strip width"),
    "augment.jitter_strength": (0.2, "brightness and contrast jitter amplitude"),

    "reach.encoder_hidden": (256, "per-view encoder hidden width"),
    "reach.embedding": (64, "embedding width E"),
    "reach.comparator_hidden": (128, "comparator hidden width"),
    "reach.aggregation": ("sum", "view aggregation: sum | concat_fc"),
    "reach.comparator": ("concat", "comparator input: concat | symmetric"),
    "reach.k": (10, "pairs at most k walk steps apart are positive"),
    "reach.positives": (500, "positive pairs per walk"),
    "reach.negatives": (500, "negative pairs per walk"),
    "reach.val_fraction": (0.2, "share of pairs held out for validation"),
    "reach.epochs": (30, "reachability training epochs"),
    "reach.batch_size": (256, "reachability batch size"),
    "reach.lr": (0.01, "SGD learning rate"),
    "reach.momentum": (0.9, "SGD momentum"),
    "reach.weight_decay": (1e-7, "SGD weight decay"),
    "reach.workers": (4, "threads for pair sampling"),

    "memory.tau": (0.5, "insert when the reachability score is below tau"),
    "memory.capacity": (20, "episodic buffer capacity"),
    "memory.long_term_capacity": (60, "long-term buffer capacity"),
    "memory.ttl_episodes": (100, "episodes a long-term entry survives"),
    "memory.log_insertions": (False, "write per-worker insertion logs"),
    "memory.calibration_thresholds": ([0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], "tau values swept by calibrate-tau"),
    "memory.calibration_window": (500, "walk steps per calibration episode"),
    "memory.target_min": (8, "lower end of the desired insertions per episode"),
    "memory.target_max": (15, "upper end of the desired insertions per episode"),

    "policy.view_hidden": (128, "per-view encoder hidden width"),
    "policy.view_features": (64, "per-view feature width"),
    "policy.hidden": (128, "LSTM and attention width H"),
    "policy.action_embedding": (16, "previous-action embedding width"),
    "policy.attention_layers": (4, "stacked attention layers over memory"),
    "policy.attention_heads": (4, "heads per attention layer"),

    "ppo.clip": (0.2, "surrogate clipping epsilon"),
    "ppo.entropy_coef": (0.01, "entropy bonus coefficient"),
    "ppo.value_coef": (0.5, "value loss coefficient"),
    "ppo.epochs": (2, "PPO epochs per update"),
    "ppo.lr": (9e-5, "Adam learning rate"),
    "ppo.gamma": (0.99, "discount"),
    "ppo.lam": (0.95, "GAE lambda"),
    "ppo.segment": (64, "rollout steps per worker per update"),
    "ppo.workers": (8, "parallel rollout workers"),
    "ppo.updates": (5000, "number of PPO updates"),
    "ppo.grad_clip": (0.5, "global gradient-norm clip"),
    "ppo.normalize_advantages": (True, "standardize advantages per update"),
    "ppo.ckpt_every": (500, "updates between checkpoints"),
    "ppo.eval_every": (250, "updates between test evaluations"),
    "ppo.eval_episodes": (60, "test episodes per periodic evaluation"),

    "eval.workers": (4, "threads for evaluation"),
    "eval.split": ("test", "episode split evaluated by eval: train | test"),
    "eval.trajectories": (False, "write per-step trajectory dumps"),
    "eval.pdf": (True, "render report.pdf / ablation.pdf"),
    "eval.previews": (4, "goal-observation previews in report.pdf"),
    "eval.seeds": ([0, 1, 2], "seeds aggregated by ablate"),
}

PRESETS = {
    "desk": {},
    "paper": {
        "scenes.train": 72,
        "scenes.test": 14,
        "walks.length": 5000,
        "reach.positives": 1000,
        "reach.negatives": 1000,
        "reach.embedding": 512,
        "reach.encoder_hidden": 512,
        "reach.comparator_hidden": 512,
        "policy.hidden": 512,
        "ppo.updates": 50000,
    },
}


def describe() -> list:
    """(key, default, description) rows, sorted by key."""
    return [(key, DEFAULTS[key][0], DEFAULTS[key][1]) for key in sorted(DEFAULTS)]


def _coerce(key: str, value):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key '{key}'")
    default = DEFAULTS[key][0]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"'{key}' expects true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{key}' expects an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{key}' expects a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"'{key}' expects a list, got {value!r}")
        return list(value)
    if not isinstance(value, str):
        raise ConfigError(f"'{key}' expects a string, got {value!r}")
    return value


def parse_value(text: str):
    """JSON literal when possible, otherwise the bare string."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_assignment(line: str) -> tuple:
    if "=" not in line:
        raise ConfigError(f"expected 'key = value', got '{line.strip()}'")
    key, value = line.split("=", 1)
    return key.strip(), parse_value(value)


class ExperimentConfig:
    """Resolved configuration: every known key mapped to a checked value."""

    def __init__(self, values: Optional[Mapping] = None):
        self._values = {key: default for key, (default, _) in DEFAULTS.items()}
        for key, value in (values or {}).items():
            self._values[key] = _coerce(key, value)

    def __getitem__(self, key: str):
        if key not in self._values:
            raise ConfigError(f"unknown config key '{key}'")
        return self._values[key]

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def to_dict(self) -> dict:
        return dict(sorted(self._values.items()))

    def with_overrides(self, overrides: Mapping) -> "ExperimentConfig":
        return ExperimentConfig({**self._values, **overrides})

    # ------------------------------------------------------------------
    # text format
    # ------------------------------------------------------------------

    @classmethod
    def parse(cls, text: str, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        overrides = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                key, value = parse_assignment(line)
            except ConfigError as e:
                raise ConfigError(f"line {number}: {e}") from e
            overrides[key] = value
        return (base or cls()).with_overrides(overrides)

    def serialize(self) -> str:
        return "".join(f"{key} = {json.dumps(value)}\n" for key, value in self.to_dict().items())

    @classmethod
    def from_file(cls, path: Path, base: Optional["ExperimentConfig"] = None) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        return cls.parse(text, base)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
        return cls(PRESETS[name])

    # ------------------------------------------------------------------
    # module configs
    # ------------------------------------------------------------------

    def scene_params(self) -> SceneParams:
        params = SceneParams(width=self["scenes.width"], height=self["scenes.height"], cell=self["scenes.cell"],
                             density=self["scenes.density"], max_retries=self["scenes.max_retries"])
        params.validate()
        return params

    def render_config(self) -> RenderConfig:
        render = RenderConfig(views=self["sim.views"], rays=self["sim.rays"], channels=self["sim.channels"])
        render.validate()
        return render

    def step_config(self) -> StepConfig:
        reward = RewardConfig(shape=self["sim.reward_shape"], slack=self["sim.reward_slack"],
                              success=self["sim.reward_success"])
        return StepConfig(forward=self["sim.forward"], turn_degrees=self["sim.turn_degrees"],
                          margin=self["sim.margin"], success_distance=self["sim.success_distance"],
                          max_steps=self["sim.max_steps"], reward=reward, render=self.render_config())

    def augment_config(self, enabled: Optional[bool] = None) -> AugmentConfig:
        cfg = AugmentConfig(enabled=self["augment.enabled"] if enabled is None else enabled,
                            crop_min_scale=self["augment.crop_min_scale"],
                            jitter_strength=self["augment.jitter_strength"])
        cfg.validate()
        return cfg

    def reach_config(self) -> ReachabilityConfig:
        cfg = ReachabilityConfig(views=self["sim.views"], channels=self["sim.channels"], rays=self["sim.rays"],
                                 encoder_hidden=self["reach.encoder_hidden"], embedding=self["reach.embedding"],
                                 comparator_hidden=self["reach.comparator_hidden"],
                                 aggregation=self["reach.aggregation"], comparator=self["reach.comparator"])
        cfg.validate()
        return cfg

    def reach_train_config(self) -> ReachTrainConfig:
        return ReachTrainConfig(epochs=self["reach.epochs"], batch_size=self["reach.batch_size"],
                                lr=self["reach.lr"], momentum=self["reach.momentum"],
                                weight_decay=self["reach.weight_decay"], augment=self.augment_config(),
                                seed=self["seed"])

    def memory_config(self) -> MemoryConfig:
        return MemoryConfig(tau=self["memory.tau"], capacity=self["memory.capacity"],
                            long_term_capacity=self["memory.long_term_capacity"],
                            ttl_episodes=self["memory.ttl_episodes"],
                            log_insertions=self["memory.log_insertions"])

    def policy_config(self, arm: str = "memory") -> PolicyConfig:
        if arm not in ARMS:
            raise ConfigError(f"unknown arm '{arm}', expected one of {ARMS}")
        cfg = PolicyConfig(views=self["sim.views"], channels=self["sim.channels"], rays=self["sim.rays"],
                           view_hidden=self["policy.view_hidden"], view_features=self["policy.view_features"],
                           hidden=self["policy.hidden"], action_embedding=self["policy.action_embedding"],
                           memory_dim=self["reach.embedding"], attention_layers=self["policy.attention_layers"],
                           attention_heads=self["policy.attention_heads"],
                           use_memory=arm in ("memory", "lt_memory"), use_long_term=arm == "lt_memory")
        cfg.validate()
        return cfg

    def arm_augment(self, arm: str) -> AugmentConfig:
        """The baseline arm trains without augmentation; the others follow augment.enabled."""
        return self.augment_config(enabled=False if arm == "baseline" else None)

    def ppo_config(self) -> PPOConfig:
        cfg = PPOConfig(clip=self["ppo.clip"], entropy_coef=self["ppo.entropy_coef"],
                        value_coef=self["ppo.value_coef"], epochs=self["ppo.epochs"], lr=self["ppo.lr"],
                        gamma=self["ppo.gamma"], lam=self["ppo.lam"], segment=self["ppo.segment"],
                        workers=self["ppo.workers"], updates=self["ppo.updates"],
                        grad_clip=self["ppo.grad_clip"], normalize_advantages=self["ppo.normalize_advantages"],
                        ckpt_every=self["ppo.ckpt_every"], eval_every=self["ppo.eval_every"],
                        eval_episodes=self["ppo.eval_episodes"], seed=self["seed"])
        try:
            cfg.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        return cfg


def resolve(preset: str = "desk", config_path: Optional[Path] = None, seed: Optional[int] = None,
            out: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Preset, then config file, then --seed / --out, then --set key=value overrides."""
    cfg = ExperimentConfig.preset(preset)
    if config_path is not None:
        cfg = ExperimentConfig.from_file(config_path, base=cfg)
    explicit = {}
    if seed is not None:
        explicit["seed"] = seed
    if out is not None:
        explicit["output_dir"] = str(out)
    cfg = cfg.with_overrides(explicit)
    pairs = dict(parse_assignment(item) for item in overrides)
    return cfg.with_overrides(pairs)


def output_root(cfg: ExperimentConfig) -> Path:
    return Path(cfg["output_dir"]).expanduser() if cfg["output_dir"] else load_output_dir()


def write_resolved(cfg: ExperimentConfig, out_dir: Path) -> Path:
    return storage.write_json(Path(out_dir) / RESOLVED_CONFIG_NAME,
                              {**cfg.to_dict(), "code_version": CODE_VERSION})


def read_resolved(path: Path) -> ExperimentConfig:
    data = storage.read_json(path)
    data.pop("code_version", None)
    return ExperimentConfig(data)


def load_output_dir() -> Path:
    """Load the default output directory from the config file or return ./runs."""
    if CONFIG_FILE.exists():
        try:
            with open(CONFIG_FILE, 'r') as f:
                saved = json.load(f).get("output_dir")
            if saved:
                return Path(saved).expanduser()
        except Exception:
            logger.warning("Ignoring unreadable %s", CONFIG_FILE)
    return Path("runs")


def save_output_dir(directory: str) -> Path:
    """Save the default output directory to the config file."""
    path = Path(directory).expanduser()
    path.mkdir(parents=True, exist_ok=True)
    with open(CONFIG_FILE, 'w') as f:
        json.dump({"output_dir": str(path)}, f, indent=2)
    return path


def preset_names() -> Sequence[str]:
    return sorted(PRESETS)
