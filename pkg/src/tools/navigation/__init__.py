"""
navmem: memory-augmented reinforcement learning for image-goal navigation
in procedurally generated 2D scenes.
"""

from .config import CODE_VERSION, ExperimentConfig, resolve
from .errors import NavMemError
from .eval_metrics import GeodesicOracleAgent, PolicyAgent, evaluate, spl
from .memory import MemoryBuffer, maybe_insert
from .policy import PolicyNet, act
from .ppo_trainer import compute_gae, train
from .reachability import ReachabilityNet
from .sim_world import NavigationEpisode, generate_scene, geodesic_distance, render_observation, step

__version__ = CODE_VERSION.split()[-1]

__all__ = [
    "CODE_VERSION",
    "ExperimentConfig",
    "GeodesicOracleAgent",
    "MemoryBuffer",
    "NavMemError",
    "NavigationEpisode",
    "PolicyAgent",
    "PolicyNet",
    "ReachabilityNet",
    "act",
    "compute_gae",
    "evaluate",
    "generate_scene",
    "geodesic_distance",
    "maybe_insert",
    "render_observation",
    "resolve",
    "spl",
    "step",
    "train",
]
