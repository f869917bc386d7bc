"""
On-disk formats: scenes, episode datasets, walk archives, pair indexes,
parameter checkpoints, CSV logs and JSON reports.

Every writer is deterministic (sorted keys, fixed float formatting, no
timestamps) so a re-run with the same inputs reproduces the same bytes.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import StorageError
from .sim_world import EpisodeSpec, Scene


logger = logging.getLogger(__name__)

SCENE_FORMAT_VERSION = 1
CHECKPOINT_FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"NVMC"


def write_json(path: Path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read JSON from {path}: {exc}") from exc


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path: Path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise StorageError(f"cannot read JSON lines from {path}: {exc}") from exc


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])
    return path


def read_csv(path: Path) -> list:
    with open(path, "r", newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def _format_cell(value):
    if isinstance(value, float):
        return repr(round(value, 10))
    return value


# ============================================================================
# SCENES AND EPISODES
# ============================================================================

def scene_to_dict(scene: Scene) -> dict:
    flat = scene.grid.reshape(-1).astype(int)
    runs = []
    for value in flat:
        if runs and runs[-1][0] == value:
            runs[-1][1] += 1
        else:
            runs.append([int(value), 1])
    return {
        "format_version": SCENE_FORMAT_VERSION,
        "id": scene.id,
        "seed": scene.seed,
        "cell": scene.cell,
        "width": scene.width,
        "height": scene.height,
        "rows": scene.rows,
        "cols": scene.cols,
        "occupancy_rle": runs,
        "wall_colors": {f"{r},{c}": list(rgb) for (r, c), rgb in sorted(scene.wall_colors.items())},
    }


def scene_from_dict(data: dict) -> Scene:
    if data.get("format_version") != SCENE_FORMAT_VERSION:
        raise StorageError(f"unsupported scene format version {data.get('format_version')}")
    rows, cols = int(data["rows"]), int(data["cols"])
    values = np.concatenate([np.full(run, value, dtype=bool) for value, run in data["occupancy_rle"]])
    if values.size != rows * cols:
        raise StorageError(f"scene {data.get('id')}: occupancy has {values.size} cells, expected {rows * cols}")
    grid = values.reshape(rows, cols)
    colors = {}
    for key, rgb in data["wall_colors"].items():
        r, c = (int(v) for v in key.split(","))
        colors[(r, c)] = tuple(float(v) for v in rgb)
    missing = [rc for rc in zip(*np.nonzero(grid)) if (int(rc[0]), int(rc[1])) not in colors]
    if missing:
        raise StorageError(f"scene {data.get('id')}: {len(missing)} wall cells have no color")
    return Scene(id=data["id"], seed=int(data["seed"]), cell=float(data["cell"]), grid=grid, wall_colors=colors)


def save_scene(path: Path, scene: Scene) -> Path:
    return write_json(path, scene_to_dict(scene))


def load_scene(path: Path) -> Scene:
    return scene_from_dict(read_json(path))


def save_episodes(path: Path, episodes: Iterable[EpisodeSpec]) -> Path:
    return write_jsonl(path, (e.to_dict() for e in episodes))


def load_episodes(path: Path) -> list:
    return [EpisodeSpec.from_dict(r) for r in read_jsonl(path)]


# ============================================================================
# WALK ARCHIVES AND PAIR INDEXES
# ============================================================================

def save_walk(path: Path, observations: np.ndarray) -> Path:
    """Header (T, v, C, W) as little-endian u32, then the observations as little-endian f32."""
    observations = np.asarray(observations)
    if observations.ndim != 4:
        raise StorageError(f"walk must have shape (T, v, C, W), got {observations.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(np.asarray(observations.shape, dtype="<u4").tobytes())
        f.write(observations.astype("<f4").tobytes())
    return path


def load_walk(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16:
        raise StorageError(f"{path}: truncated walk header")
    shape = tuple(int(v) for v in np.frombuffer(raw[:16], dtype="<u4"))
    expected = 16 + 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise StorageError(f"{path}: expected {expected} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw[16:], dtype="<f4").reshape(shape).astype(np.float32)


def walk_header(path: Path) -> tuple:
    with open(path, "rb") as f:
        return tuple(int(v) for v in np.frombuffer(f.read(16), dtype="<u4"))


def save_pair_index(path: Path, records: Iterable[dict]) -> Path:
    return write_jsonl(path, records)


def load_pair_index(path: Path) -> list:
    return read_jsonl(path)


# ============================================================================
# CHECKPOINTS
# ============================================================================

@dataclass
class Checkpoint:
    tensors: dict
    optimizer: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def parameters(self) -> dict:
        return {k: v for k, v in self.tensors.items() if not k.startswith("opt/")}

    def optimizer_tensors(self) -> dict:
        return {k: v for k, v in self.tensors.items() if k.startswith("opt/")}


def save_checkpoint(path: Path, store, meta: dict = None) -> Path:
    """Write parameters and optimizer state of a ParamStore to one archive."""
    tensors = {name: p.data for name, p in store.items()}
    tensors.update(store.state_arrays())
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        blob = np.asarray(value).astype("<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(value)), "offset": offset})
        chunks.append(blob)
        offset += len(blob)
    manifest = json.dumps({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "tensors": entries,
        "optimizer": store.state_scalars(),
        "meta": meta or {},
    }, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(manifest)))
        f.write(manifest)
        for blob in chunks:
            f.write(blob)
    logger.debug("Saved checkpoint %s (%d tensors)", path, len(entries))
    return path


def load_checkpoint(path: Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise StorageError(f"{path}: not a checkpoint archive")
    (length,) = struct.unpack("<I", raw[4:8])
    try:
        manifest = json.loads(raw[8:8 + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise StorageError(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise StorageError(f"{path}: unsupported checkpoint format {manifest.get('format_version')}")
    payload = raw[8 + length:]
    tensors = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"]))
        start = entry["offset"]
        if start + 4 * count > len(payload):
            raise StorageError(f"{path}: tensor '{entry['name']}' runs past the payload")
        tensors[entry["name"]] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=start).reshape(entry["shape"]).copy()
    return Checkpoint(tensors=tensors, optimizer=manifest.get("optimizer", {}), meta=manifest.get("meta", {}))


def apply_checkpoint(store, checkpoint: Checkpoint, with_optimizer: bool = True) -> None:
    """Copy checkpoint tensors into a ParamStore built with the same architecture."""
    params = checkpoint.parameters()
    for name, p in store.items():
        if name not in params:
            raise StorageError(f"checkpoint has no tensor '{name}'")
        if tuple(params[name].shape) != p.shape:
            raise StorageError(f"tensor '{name}' has shape {params[name].shape}, expected {p.shape}")
        p.data = params[name].astype(p.data.dtype)
    if with_optimizer:
        store.load_state(checkpoint.optimizer_tensors(), checkpoint.optimizer)
