"""
Procedural 2D navigation world.

Scenes are occupancy grids with colored wall cells. The agent moves in
continuous coordinates (x along columns, y along rows, heading measured
counter-clockwise from +x) and observes panoramic ray-cast strips.
Geodesic distances come from Dijkstra over a 0.1-unit fine grid.
"""

import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import IntEnum
from functools import cached_property
from threading import Lock
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import ConfigError, EpisodeDoneError, InvalidPoseError, SceneGenerationError


logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi
GEODESIC_RESOLUTION = 0.1
# sqrt(2) rounded to a dyadic fraction: path sums stay exact in float64,
# so distances do not depend on which endpoint Dijkstra starts from.
_DIAGONAL_COST = round(math.sqrt(2) * 2 ** 20) / 2 ** 20
_FIELD_CACHE_SIZE = 64

DIFFICULTY_BANDS = {
    "easy": (1.5, 3.0),
    "medium": (3.0, 5.0),
    "hard": (5.0, 10.0),
    "extra": (10.0, 15.0),
}

# Observation: float64 array of shape (views, channels, rays), entries in [0, 1].
Observation = np.ndarray


class Action(IntEnum):
    MOVE_FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2
    STOP = 3


NUM_ACTIONS = len(Action)


def difficulty_of(distance: float) -> Optional[str]:
    """Band label for a start-goal geodesic distance (the top band is closed)."""
    for name, (low, high) in DIFFICULTY_BANDS.items():
        if low <= distance < high or (name == "extra" and distance == high):
            return name
    return None


def normalize_heading(heading: float) -> float:
    heading = math.fmod(heading, TWO_PI)
    if heading < 0:
        heading += TWO_PI
    return 0.0 if heading >= TWO_PI else heading


# ============================================================================
# CONFIGURATION TYPES
# ============================================================================

@dataclass(frozen=True)
class SceneParams:
    width: float = 16.0
    height: float = 16.0
    cell: float = 1.0
    density: float = 0.2
    max_retries: int = 20
    min_free_fraction: float = 0.5

    def validate(self) -> None:
        if self.cell <= 0:
            raise ConfigError(f"cell size must be positive, got {self.cell}")
        if self.width < 6 or self.height < 6:
            raise ConfigError(f"scene bounds must be at least 6x6 units, got {self.width}x{self.height}")
        for bound in (self.width, self.height):
            if abs(round(bound / self.cell) * self.cell - bound) > 1e-9:
                raise ConfigError(f"bound {bound} is not divisible by cell size {self.cell}")
        if not 0 <= self.density < 1:
            raise ConfigError(f"wall density must lie in [0, 1), got {self.density}")


@dataclass(frozen=True)
class RenderConfig:
    views: int = 4
    rays: int = 32
    channels: int = 4

    def validate(self) -> None:
        if self.views < 1 or self.rays < 1:
            raise ConfigError(f"need at least one view and one ray, got {self.views}x{self.rays}")
        if self.channels not in (3, 4):
            raise ConfigError(f"channels must be 3 (color) or 4 (color + inverse depth), got {self.channels}")


@dataclass(frozen=True)
class RewardConfig:
    shape: float = 1.0
    slack: float = -0.01
    success: float = 2.5


@dataclass(frozen=True)
class StepConfig:
    forward: float = 0.25
    turn_degrees: float = 10.0
    margin: float = 0.01
    success_distance: float = 1.0
    max_steps: int = 500
    reward: RewardConfig = field(default_factory=RewardConfig)
    render: RenderConfig = field(default_factory=RenderConfig)


def walk_step_config(render: RenderConfig = RenderConfig(), margin: float = 0.01) -> StepConfig:
    """Kinematics used for reachability random walks: 1-unit steps, 30 degree turns."""
    return StepConfig(forward=1.0, turn_degrees=30.0, margin=margin, render=render)


# ============================================================================
# SCENE
# ============================================================================

@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable occupancy grid; grid[r, c] is True for wall cells."""

    id: str
    seed: int
    cell: float
    grid: np.ndarray
    wall_colors: dict

    @property
    def rows(self) -> int:
        return self.grid.shape[0]

    @property
    def cols(self) -> int:
        return self.grid.shape[1]

    @property
    def width(self) -> float:
        return self.cols * self.cell

    @property
    def height(self) -> float:
        return self.rows * self.cell

    def free_fraction(self) -> float:
        return float((~self.grid).mean())

    def is_free(self, x: float, y: float) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return not self.grid[int(y // self.cell), int(x // self.cell)]

    @cached_property
    def color_grid(self) -> np.ndarray:
        colors = np.zeros(self.grid.shape + (3,))
        for (r, c), rgb in self.wall_colors.items():
            colors[r, c] = rgb
        return colors

    @cached_property
    def wall_boxes(self) -> np.ndarray:
        """(K, 4) array of wall cell bounds: x0, y0, x1, y1."""
        rows, cols = np.nonzero(self.grid)
        return np.stack([cols * self.cell, rows * self.cell,
                         (cols + 1) * self.cell, (rows + 1) * self.cell], axis=1).astype(float)

    @cached_property
    def fine_shape(self) -> tuple:
        return (int(round(self.height / GEODESIC_RESOLUTION)), int(round(self.width / GEODESIC_RESOLUTION)))

    @cached_property
    def fine_free(self) -> np.ndarray:
        ny, nx = self.fine_shape
        ys = (np.arange(ny) + 0.5) * GEODESIC_RESOLUTION
        xs = (np.arange(nx) + 0.5) * GEODESIC_RESOLUTION
        r = np.minimum((ys // self.cell).astype(int), self.rows - 1)
        c = np.minimum((xs // self.cell).astype(int), self.cols - 1)
        return ~self.grid[np.ix_(r, c)]

    @cached_property
    def nearest_free_node(self) -> np.ndarray:
        _, (ri, ci) = ndimage.distance_transform_edt(~self.fine_free, return_indices=True)
        return (ri * self.fine_shape[1] + ci).reshape(-1)

    @cached_property
    def fine_graph(self) -> csr_matrix:
        free = self.fine_free
        ny, nx = free.shape
        index = np.arange(free.size).reshape(free.shape)
        sources, targets, costs = [], [], []
        for dr, dc in ((0, 1), (1, 0), (1, 1), (1, -1)):
            r1, c0, c1 = ny - dr, max(0, -dc), nx - max(0, dc)
            ok = free[:r1, c0:c1] & free[dr:r1 + dr, c0 + dc:c1 + dc]
            if dr and dc:
                # no corner cutting
                ok &= free[dr:r1 + dr, c0:c1] & free[:r1, c0 + dc:c1 + dc]
            sources.append(index[:r1, c0:c1][ok])
            targets.append(index[dr:r1 + dr, c0 + dc:c1 + dc][ok])
            costs.append(np.full(int(ok.sum()), _DIAGONAL_COST if dr and dc else 1.0))
        return csr_matrix((np.concatenate(costs), (np.concatenate(sources), np.concatenate(targets))),
                          shape=(free.size, free.size))

    @cached_property
    def _field_cache(self) -> tuple:
        return OrderedDict(), Lock()


def _wall_color(seed: int, r: int, c: int) -> tuple:
    digest = hashlib.blake2b(f"{seed}:{r}:{c}".encode(), digest_size=3).digest()
    return tuple(b / 255.0 for b in digest)


def _place_walls(rng: np.random.Generator, rows: int, cols: int, density: float) -> np.ndarray:
    grid = np.zeros((rows, cols), dtype=bool)
    grid[0, :] = grid[-1, :] = True
    grid[:, 0] = grid[:, -1] = True
    interior = (rows - 2) * (cols - 2)
    target = int(round(density * interior))
    longest = max(3, min(rows, cols) // 2)
    while grid[1:-1, 1:-1].sum() < target:
        r, c = int(rng.integers(1, rows - 1)), int(rng.integers(1, cols - 1))
        length = int(rng.integers(2, longest + 1))
        if rng.random() < 0.5:
            grid[r, c:min(c + length, cols - 1)] = True
        else:
            grid[r:min(r + length, rows - 1), c] = True
    return grid


def generate_scene(seed: int, params: SceneParams = SceneParams()) -> Scene:
    """
    Build a scene whose free cells form one 4-connected component.

    Wall segments are dropped until the requested density is reached, then every
    free region except the largest is filled in. Layouts that end up with too
    little free space are re-drawn from the same RNG stream.
    """
    params.validate()
    rows = int(round(params.height / params.cell))
    cols = int(round(params.width / params.cell))
    rng = np.random.default_rng(seed)
    for attempt in range(params.max_retries):
        grid = _place_walls(rng, rows, cols, params.density)
        labels, count = ndimage.label(~grid)
        if count == 0:
            continue
        largest = 1 + int(np.argmax(np.bincount(labels.ravel())[1:]))
        grid = labels != largest
        if (~grid[1:-1, 1:-1]).mean() >= params.min_free_fraction:
            colors = {(int(r), int(c)): _wall_color(seed, int(r), int(c)) for r, c in zip(*np.nonzero(grid))}
            logger.debug("Scene %s generated on attempt %d", seed, attempt + 1)
            return Scene(id=f"scene-{seed}", seed=seed, cell=params.cell, grid=grid, wall_colors=colors)
    raise SceneGenerationError(
        f"no connected layout with free fraction >= {params.min_free_fraction} "
        f"after {params.max_retries} attempts (seed={seed}, density={params.density})")


# ============================================================================
# GEOMETRY
# ============================================================================

def clearance(scene: Scene, point) -> np.ndarray:
    """Distance from a point (or an (N, 2) array of points) to the nearest wall cell."""
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    boxes = scene.wall_boxes
    dx = np.maximum(np.maximum(boxes[None, :, 0] - pts[:, 0:1], 0.0), pts[:, 0:1] - boxes[None, :, 2])
    dy = np.maximum(np.maximum(boxes[None, :, 1] - pts[:, 1:2], 0.0), pts[:, 1:2] - boxes[None, :, 3])
    dist = np.hypot(dx, dy).min(axis=1)
    outside = (pts[:, 0] < 0) | (pts[:, 0] >= scene.width) | (pts[:, 1] < 0) | (pts[:, 1] >= scene.height)
    dist[outside] = 0.0
    return dist if np.ndim(point) == 2 else float(dist[0])


def cast_rays(scene: Scene, x: float, y: float, angles) -> tuple:
    """
    Grid traversal (DDA) from (x, y) along each angle.

    Returns:
        (distances, hit_rows, hit_cols) for the first wall cell each ray enters
    """
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    dx, dy = np.cos(angles), np.sin(angles)
    gx, gy = x / scene.cell, y / scene.cell
    col = np.full(n, int(math.floor(gx)))
    row = np.full(n, int(math.floor(gy)))
    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta_x = np.where(dx != 0, np.abs(1.0 / dx), np.inf)
        delta_y = np.where(dy != 0, np.abs(1.0 / dy), np.inf)
        t_x = np.where(dx == 0, np.inf, np.where(dx > 0, col + 1 - gx, gx - col) * delta_x)
        t_y = np.where(dy == 0, np.inf, np.where(dy > 0, row + 1 - gy, gy - row) * delta_y)

    distances = np.full(n, np.inf)
    hit_row = np.zeros(n, dtype=int)
    hit_col = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for _ in range(scene.rows + scene.cols + 2):
        if not active.any():
            break
        along_x = t_x <= t_y
        t = np.where(along_x, t_x, t_y)
        move_x, move_y = active & along_x, active & ~along_x
        col = np.where(move_x, col + step_c, col)
        row = np.where(move_y, row + step_r, row)
        t_x = np.where(move_x, t_x + delta_x, t_x)
        t_y = np.where(move_y, t_y + delta_y, t_y)
        rc, cc = np.clip(row, 0, scene.rows - 1), np.clip(col, 0, scene.cols - 1)
        wall = (rc != row) | (cc != col) | scene.grid[rc, cc]
        hit = active & wall
        distances[hit] = t[hit] * scene.cell
        hit_row[hit], hit_col[hit] = rc[hit], cc[hit]
        active &= ~wall
    return distances, hit_row, hit_col


def view_angles(heading: float, views: int, rays: int) -> np.ndarray:
    """Ray angles, shape (views, rays); view k is centered on heading + k*360/v, rays left to right."""
    fov = TWO_PI / views
    centers = heading + np.arange(views) * fov
    offsets = fov / 2 - (np.arange(rays) + 0.5) * fov / rays
    return centers[:, None] + offsets[None, :]


def render_observation(scene: Scene, pose: Sequence[float], views: int = 4, rays: int = 32,
                       channels: int = 4) -> Observation:
    """Panoramic strips of wall color (and inverse depth 1/(1+d) when channels == 4)."""
    RenderConfig(views, rays, channels).validate()
    x, y, heading = pose
    if not scene.is_free(x, y):
        raise InvalidPoseError(f"cannot render from ({x:.3f}, {y:.3f}): not in free space")
    distances, hit_r, hit_c = cast_rays(scene, x, y, view_angles(heading, views, rays).reshape(-1))
    colors = scene.color_grid[hit_r, hit_c].reshape(views, rays, 3).transpose(0, 2, 1)
    if channels == 3:
        return np.ascontiguousarray(colors)
    depth = (1.0 / (1.0 + distances)).reshape(views, 1, rays)
    return np.concatenate([colors, depth], axis=1)


def render_with(scene: Scene, pose: Sequence[float], render: RenderConfig) -> Observation:
    return render_observation(scene, pose, render.views, render.rays, render.channels)


# ============================================================================
# GEODESICS
# ============================================================================

def fine_nodes(scene: Scene, points) -> np.ndarray:
    """Nearest free fine-grid node index for each point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    ny, nx = scene.fine_shape
    i = np.clip(np.floor(pts[:, 1] / GEODESIC_RESOLUTION).astype(int), 0, ny - 1)
    j = np.clip(np.floor(pts[:, 0] / GEODESIC_RESOLUTION).astype(int), 0, nx - 1)
    return scene.nearest_free_node[i * nx + j]


def _field_from_node(scene: Scene, node: int) -> np.ndarray:
    return dijkstra(scene.fine_graph, directed=False, indices=int(node))


def distance_field(scene: Scene, point) -> np.ndarray:
    """Fine-grid geodesic distances (world units) from a point; cached per scene."""
    node = int(fine_nodes(scene, point)[0])
    cache, lock = scene._field_cache
    with lock:
        if node in cache:
            cache.move_to_end(node)
            return cache[node]
    field_values = _field_from_node(scene, node) * GEODESIC_RESOLUTION
    with lock:
        cache[node] = field_values
        while len(cache) > _FIELD_CACHE_SIZE:
            cache.popitem(last=False)
    return field_values


def geodesic_distance(scene: Scene, a, b) -> float:
    """Shortest 8-connected path length between a and b; inf if disconnected."""
    node_a = int(fine_nodes(scene, a)[0])
    return float(distance_field(scene, b)[node_a])


def reward_of(prev_geo: float, new_geo: float, stopped: bool, success: bool,
              cfg: RewardConfig = RewardConfig()) -> float:
    reward = cfg.shape * (prev_geo - new_geo) + cfg.slack
    if stopped and success:
        reward += cfg.success
    return reward


# ============================================================================
# AGENT KINEMATICS
# ============================================================================

@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    heading: float
    step_count: int = 0
    done: bool = False
    path_length: float = 0.0

    @property
    def position(self) -> tuple:
        return (self.x, self.y)

    @property
    def pose(self) -> tuple:
        return (self.x, self.y, self.heading)


@dataclass
class StepResult:
    observation: Optional[Observation]
    reward: float
    done: bool
    success: bool
    info: dict


def move_forward(scene: Scene, x: float, y: float, heading: float, distance: float,
                 margin: float) -> tuple:
    """
    Advance up to `distance` along heading, stopping `margin` short of walls.

    Returns:
        (x, y, displacement, collision)
    """
    hit = float(cast_rays(scene, x, y, [heading])[0][0])
    move = min(distance, max(hit - margin, 0.0))
    collision = move < distance
    cos_h, sin_h = math.cos(heading), math.sin(heading)
    if move > 0 and clearance(scene, (x + move * cos_h, y + move * sin_h)) < margin - 1e-9:
        low, high = 0.0, move
        for _ in range(40):
            mid = 0.5 * (low + high)
            if clearance(scene, (x + mid * cos_h, y + mid * sin_h)) >= margin - 1e-9:
                low = mid
            else:
                high = mid
        move, collision = low, True
    return x + move * cos_h, y + move * sin_h, move, collision


def apply_action(scene: Scene, state: AgentState, action: int, cfg: StepConfig) -> tuple:
    """Kinematics only: returns (new_state, displacement, collision)."""
    action = Action(action)
    if action == Action.MOVE_FORWARD:
        x, y, moved, collision = move_forward(scene, state.x, state.y, state.heading, cfg.forward, cfg.margin)
        return replace(state, x=x, y=y, path_length=state.path_length + moved), moved, collision
    if action in (Action.TURN_LEFT, Action.TURN_RIGHT):
        sign = 1.0 if action == Action.TURN_LEFT else -1.0
        heading = normalize_heading(state.heading + sign * math.radians(cfg.turn_degrees))
        return replace(state, heading=heading), 0.0, False
    return state, 0.0, False


def step(scene: Scene, state: AgentState, action: int, goal, cfg: StepConfig = StepConfig(),
         render: bool = True) -> tuple:
    """Apply one action, returning (new_state, StepResult)."""
    if state.done:
        raise EpisodeDoneError(f"episode already finished after {state.step_count} steps")
    if not scene.is_free(state.x, state.y):
        raise InvalidPoseError(f"agent at ({state.x:.3f}, {state.y:.3f}) is not in free space")
    prev_geo = geodesic_distance(scene, state.position, goal)
    new_state, moved, collision = apply_action(scene, state, action, cfg)
    new_geo = geodesic_distance(scene, new_state.position, goal)
    stopped = Action(action) == Action.STOP
    success = stopped and new_geo <= cfg.success_distance
    step_count = state.step_count + 1
    done = stopped or step_count >= cfg.max_steps
    new_state = replace(new_state, step_count=step_count, done=done)
    result = StepResult(
        observation=render_with(scene, new_state.pose, cfg.render) if render else None,
        reward=reward_of(prev_geo, new_geo, stopped, success, cfg.reward),
        done=done,
        success=success,
        info={"geodesic_to_goal": new_geo, "collision": collision, "displacement": moved},
    )
    return new_state, result


# ============================================================================
# EPISODES
# ============================================================================

@dataclass(frozen=True)
class EpisodeSpec:
    episode_id: str
    scene_id: str
    start_pose: tuple
    goal_position: tuple
    goal_heading: float
    difficulty: str
    geodesic_start_goal: float

    def to_dict(self) -> dict:
        return {
            "episode_id": self.episode_id,
            "scene_id": self.scene_id,
            "start_pose": list(self.start_pose),
            "goal_position": list(self.goal_position),
            "goal_heading": self.goal_heading,
            "difficulty": self.difficulty,
            "geodesic_start_goal": self.geodesic_start_goal,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeSpec":
        return cls(
            episode_id=data["episode_id"],
            scene_id=data["scene_id"],
            start_pose=tuple(float(v) for v in data["start_pose"]),
            goal_position=tuple(float(v) for v in data["goal_position"]),
            goal_heading=float(data["goal_heading"]),
            difficulty=data["difficulty"],
            geodesic_start_goal=float(data["geodesic_start_goal"]),
        )


@dataclass
class EpisodeDataset:
    episodes: list
    unsatisfiable: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.episodes)

    def __len__(self) -> int:
        return len(self.episodes)

    def by_difficulty(self, difficulty: str) -> list:
        return [e for e in self.episodes if e.difficulty == difficulty]


def sample_free_points(scene: Scene, rng: np.random.Generator, count: int,
                       min_clearance: float = 0.25, max_batches: int = 1000) -> np.ndarray:
    """Uniform points in free space at least `min_clearance` from every wall."""
    found = []
    total = 0
    for _ in range(max_batches):
        pts = rng.uniform((0.0, 0.0), (scene.width, scene.height), size=(max(64, 2 * count), 2))
        ok = pts[clearance(scene, pts) >= min_clearance]
        found.append(ok)
        total += len(ok)
        if total >= count:
            return np.concatenate(found)[:count]
    raise SceneGenerationError(f"{scene.id}: no free points with clearance >= {min_clearance}")


def generate_episode_dataset(scenes: Sequence[Scene], per_difficulty: int, rng_seed: int,
                             difficulties: Sequence[str] = ("easy", "medium", "hard"),
                             min_clearance: float = 0.25, max_starts: int = 200,
                             goals_per_start: int = 64) -> EpisodeDataset:
    """
    Rejection-sample start/goal pairs until every scene holds `per_difficulty`
    episodes per band. Bands a scene cannot fill within `max_starts` start draws
    are reported in `unsatisfiable`.
    """
    if per_difficulty < 1:
        raise ConfigError(f"per_difficulty must be >= 1, got {per_difficulty}")
    unknown = set(difficulties) - set(DIFFICULTY_BANDS)
    if unknown:
        raise ConfigError(f"unknown difficulty bands: {sorted(unknown)}")

    episodes, unsatisfiable = [], []
    for index, scene in enumerate(scenes):
        rng = np.random.default_rng([rng_seed, index])
        buckets = {name: [] for name in difficulties}
        for _ in range(max_starts):
            if all(len(b) >= per_difficulty for b in buckets.values()):
                break
            start = sample_free_points(scene, rng, 1, min_clearance)[0]
            start_field = _field_from_node(scene, int(fine_nodes(scene, start)[0])) * GEODESIC_RESOLUTION
            goals = sample_free_points(scene, rng, goals_per_start, min_clearance)
            for goal, geo in zip(goals, start_field[fine_nodes(scene, goals)]):
                band = difficulty_of(float(geo))
                if band not in buckets or len(buckets[band]) >= per_difficulty:
                    continue
                heading, goal_heading = rng.uniform(0.0, TWO_PI, size=2)
                bucket = buckets[band]
                bucket.append(EpisodeSpec(
                    episode_id=f"{scene.id}/{band}/{len(bucket)}",
                    scene_id=scene.id,
                    start_pose=(float(start[0]), float(start[1]), float(heading)),
                    goal_position=(float(goal[0]), float(goal[1])),
                    goal_heading=float(goal_heading),
                    difficulty=band,
                    geodesic_start_goal=float(geo),
                ))
        for name in difficulties:
            if len(buckets[name]) < per_difficulty:
                logger.warning("Scene %s cannot fill band '%s' (%d/%d episodes)",
                               scene.id, name, len(buckets[name]), per_difficulty)
                unsatisfiable.append((scene.id, name))
            episodes.extend(buckets[name])
    return EpisodeDataset(episodes=episodes, unsatisfiable=unsatisfiable)


class NavigationEpisode:
    """One episode of image-goal navigation in a scene."""

    def __init__(self, scene: Scene, spec: EpisodeSpec, cfg: StepConfig = StepConfig()):
        if spec.scene_id != scene.id:
            raise ValueError(f"episode {spec.episode_id} belongs to {spec.scene_id}, not {scene.id}")
        self.scene = scene
        self.spec = spec
        self.cfg = cfg
        self.state = AgentState(*spec.start_pose)
        if not scene.is_free(self.state.x, self.state.y):
            raise InvalidPoseError(f"episode {spec.episode_id} starts inside a wall")
        self.goal_observation = render_with(
            scene, (*spec.goal_position, spec.goal_heading), cfg.render)
        self.success = False

    def observe(self) -> Observation:
        return render_with(self.scene, self.state.pose, self.cfg.render)

    @property
    def done(self) -> bool:
        return self.state.done

    def step(self, action: int) -> StepResult:
        self.state, result = step(self.scene, self.state, action, self.spec.goal_position, self.cfg)
        self.success = result.success
        return result


def random_walk(scene: Scene, T: int, step_cfg: StepConfig, rng_seed, min_clearance: float = 0.25) -> list:
    """
    Uniform random actions (no STOP) for exactly T observations.

    Returns:
        list of (observation, pose) pairs; the first is the start pose
    """
    if T < 1:
        raise ConfigError(f"walk length must be >= 1, got {T}")
    rng = np.random.default_rng(rng_seed)
    start = sample_free_points(scene, rng, 1, min_clearance)[0]
    state = AgentState(float(start[0]), float(start[1]), float(rng.uniform(0.0, TWO_PI)))
    walk = [(render_with(scene, state.pose, step_cfg.render), state.pose)]
    actions = rng.integers(0, 3, size=T - 1)
    for action in actions:
        state, _, _ = apply_action(scene, state, int(action), step_cfg)
        walk.append((render_with(scene, state.pose, step_cfg.render), state.pose))
    return walk
