"""
Reachability network: a siamese embedder g over panoramic observations and a
comparator f scoring whether two observations were taken within k random-walk
steps of each other.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import storage
from .augment import AugmentConfig, augment_observation
from .errors import ConfigError, DatasetError, ShapeError, TrainingDivergedError
from .memory import MemoryBuffer, maybe_insert
from .tensor_nn import (
    ParamStore, Tensor, absolute, bce_with_logits, concat, dense, init_dense, mul, no_grad,
    relu, reshape, sgd_momentum_step, sigmoid,
)


logger = logging.getLogger(__name__)

AGGREGATIONS = ("sum", "concat_fc")
COMPARATORS = ("concat", "symmetric")


@dataclass(frozen=True)
class ReachabilityConfig:
    views: int = 4
    channels: int = 4
    rays: int = 32
    encoder_hidden: int = 256
    embedding: int = 64
    comparator_hidden: int = 128
    aggregation: str = "sum"
    comparator: str = "concat"

    def validate(self) -> None:
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"reach.aggregation must be one of {AGGREGATIONS}, got '{self.aggregation}'")
        if self.comparator not in COMPARATORS:
            raise ConfigError(f"reach.comparator must be one of {COMPARATORS}, got '{self.comparator}'")


class ReachabilityNet:
    """R(x_i, x_j) = f(g(x_i), g(x_j)) with a shared per-view encoder inside g."""

    def __init__(self, cfg: ReachabilityConfig = ReachabilityConfig(), seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        per_view = cfg.channels * cfg.rays
        self.view1 = init_dense(self.store, "g.view1", per_view, cfg.encoder_hidden, rng)
        self.view2 = init_dense(self.store, "g.view2", cfg.encoder_hidden, cfg.embedding, rng)
        self.aggregate = (init_dense(self.store, "g.aggregate", cfg.views * cfg.embedding, cfg.embedding, rng)
                          if cfg.aggregation == "concat_fc" else None)
        self.f1 = init_dense(self.store, "f.hidden1", 2 * cfg.embedding, cfg.comparator_hidden, rng)
        self.f2 = init_dense(self.store, "f.hidden2", cfg.comparator_hidden, cfg.comparator_hidden, rng)
        self.f3 = init_dense(self.store, "f.out", cfg.comparator_hidden, 1, rng)

    @property
    def observation_shape(self) -> tuple:
        return (self.cfg.views, self.cfg.channels, self.cfg.rays)

    def _as_batch(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs)
        if obs.shape == self.observation_shape:
            obs = obs[None]
        if obs.shape[1:] != self.observation_shape:
            raise ShapeError(f"observation shape {obs.shape[1:]} does not match network {self.observation_shape}")
        return obs

    def embed_tensor(self, obs: np.ndarray) -> Tensor:
        """(B, v, C, W) observations -> (B, E) embeddings."""
        obs = self._as_batch(obs)
        batch, views = obs.shape[0], self.cfg.views
        x = Tensor(obs.reshape(batch * views, -1))
        per_view = dense(relu(dense(x, self.view1)), self.view2)
        per_view = reshape(per_view, (batch, views, self.cfg.embedding))
        if self.aggregate is None:
            return per_view.sum(axis=1) * (1.0 / views)
        return dense(reshape(per_view, (batch, views * self.cfg.embedding)), self.aggregate)

    def compare_logits(self, emb_a: Tensor, emb_b: Tensor) -> Tensor:
        """Comparator logits, shape (B,)."""
        if self.cfg.comparator == "symmetric":
            joint = concat([absolute(emb_a - emb_b), mul(emb_a, emb_b)], axis=-1)
        else:
            joint = concat([emb_a, emb_b], axis=-1)
        hidden = relu(dense(relu(dense(joint, self.f1)), self.f2))
        out = dense(hidden, self.f3)
        return reshape(out, (out.shape[0],))

    def pair_logits(self, obs_a: np.ndarray, obs_b: np.ndarray) -> Tensor:
        return self.compare_logits(self.embed_tensor(obs_a), self.embed_tensor(obs_b))

    def embed(self, obs: np.ndarray) -> np.ndarray:
        with no_grad():
            out = self.embed_tensor(obs).data.astype(np.float64)
        return out[0] if np.ndim(obs) == 3 else out

    def score_embeddings(self, query: np.ndarray, memory: np.ndarray) -> np.ndarray:
        """f(query, m) for every row m of memory, shape (M,)."""
        memory = np.atleast_2d(memory)
        with no_grad():
            q = Tensor(np.broadcast_to(query, memory.shape))
            return sigmoid(self.compare_logits(q, Tensor(memory))).data.astype(np.float64)

    def save(self, path: Path, meta: Optional[dict] = None) -> Path:
        return storage.save_checkpoint(path, self.store, {"kind": "reachability", "config": asdict(self.cfg),
                                                          **(meta or {})})

    @classmethod
    def load(cls, path: Path) -> "ReachabilityNet":
        checkpoint = storage.load_checkpoint(path)
        if checkpoint.meta.get("kind") != "reachability":
            raise ConfigError(f"{path} is not a reachability checkpoint")
        net = cls(ReachabilityConfig(**checkpoint.meta["config"]))
        storage.apply_checkpoint(net.store, checkpoint)
        return net


def embed(net: ReachabilityNet, obs: np.ndarray) -> np.ndarray:
    return net.embed(obs)


def score(net: ReachabilityNet, obs_a: np.ndarray, obs_b: np.ndarray) -> float:
    with no_grad():
        return float(sigmoid(net.pair_logits(obs_a, obs_b)).data[0])


def label_pair(i: int, j: int, k: int = 10) -> int:
    return int(abs(i - j) <= k)


# ============================================================================
# PAIR DATASETS
# ============================================================================

@dataclass
class PairDataset:
    """Pairs of walk indices with reachability labels and a train/val split."""

    walks: list
    walk: np.ndarray
    i: np.ndarray
    j: np.ndarray
    label: np.ndarray
    split: np.ndarray
    walk_ids: list = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.label.size)

    def counts(self) -> dict:
        return {"positive": int((self.label == 1).sum()), "negative": int((self.label == 0).sum())}

    def indices(self, split: str) -> np.ndarray:
        return np.nonzero(self.split == split)[0]

    def observations(self, idx: np.ndarray) -> tuple:
        a = np.stack([self.walks[w][i] for w, i in zip(self.walk[idx], self.i[idx])])
        b = np.stack([self.walks[w][j] for w, j in zip(self.walk[idx], self.j[idx])])
        return a, b

    def records(self) -> list:
        names = self.walk_ids or [str(w) for w in range(len(self.walks))]
        return [{"walk": names[w], "i": int(i), "j": int(j), "label": int(y), "split": s}
                for w, i, j, y, s in zip(self.walk, self.i, self.j, self.label, self.split)]

    @classmethod
    def from_records(cls, walks: dict, records: Sequence[dict]) -> "PairDataset":
        names = sorted(walks)
        position = {name: n for n, name in enumerate(names)}
        missing = {r["walk"] for r in records} - set(position)
        if missing:
            raise DatasetError(f"pair index references unknown walks: {sorted(missing)}")
        return cls(
            walks=[walks[n] for n in names],
            walk=np.array([position[r["walk"]] for r in records], dtype=int),
            i=np.array([r["i"] for r in records], dtype=int),
            j=np.array([r["j"] for r in records], dtype=int),
            label=np.array([r["label"] for r in records], dtype=int),
            split=np.array([r["split"] for r in records], dtype=object),
            walk_ids=names,
        )


def _sample_walk_pairs(length: int, positives: int, negatives: int, k: int,
                       rng: np.random.Generator) -> list:
    def draw(count, want_positive):
        chosen, attempts = [], 0
        seen = set()
        while len(chosen) < count:
            i = int(rng.integers(0, length))
            if want_positive:
                j = i + int(rng.integers(1, k + 1)) * (1 if rng.random() < 0.5 else -1)
            else:
                j = int(rng.integers(0, length))
            attempts += 1
            if not 0 <= j < length or label_pair(i, j, k) != int(want_positive):
                continue
            key = (min(i, j), max(i, j))
            # duplicates only once distinct pairs are exhausted
            if key in seen and attempts < 50 * count:
                continue
            seen.add(key)
            chosen.append((i, j, int(want_positive)))
        return chosen

    return draw(positives, True) + draw(negatives, False)


def build_pair_dataset(walks: Sequence[np.ndarray], pos_per_walk: int, neg_per_walk: int, k: int = 10,
                       rng_seed: int = 0, val_fraction: float = 0.2,
                       walk_ids: Optional[Sequence[str]] = None, workers: int = 4) -> PairDataset:
    """
    Sample balanced positive (|i-j| <= k) and negative (|i-j| > k) pairs from
    every walk and split them train/val by pair.
    """
    if pos_per_walk != neg_per_walk:
        raise DatasetError(f"labels must be balanced per walk, got {pos_per_walk} positives and {neg_per_walk} negatives")
    names = list(walk_ids) if walk_ids is not None else [str(n) for n in range(len(walks))]
    if pos_per_walk > 0:
        for name, walk in zip(names, walks):
            length = len(walk)
            available = (length - k - 1) * (length - k) // 2
            if length <= 2 * k or neg_per_walk > available:
                raise DatasetError(
                    f"walk '{name}' has {length} steps: too short for {neg_per_walk} negatives with k={k}")

    seeds = np.random.SeedSequence(rng_seed).spawn(len(walks) + 1)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_walk = list(pool.map(
            lambda args: _sample_walk_pairs(len(args[0]), pos_per_walk, neg_per_walk, k,
                                            np.random.default_rng(args[1])),
            zip(walks, seeds[:-1])))

    rows = [(w, i, j, y) for w, pairs in enumerate(per_walk) for i, j, y in pairs]
    table = np.array(rows, dtype=int).reshape(-1, 4)
    split = np.full(len(rows), "train", dtype=object)
    order = np.random.default_rng(seeds[-1]).permutation(len(rows))
    split[order[:int(round(val_fraction * len(rows)))]] = "val"
    logger.info("Built %d reachability pairs from %d walks", len(rows), len(walks))
    return PairDataset(walks=list(walks), walk=table[:, 0], i=table[:, 1], j=table[:, 2],
                       label=table[:, 3], split=split, walk_ids=names)


# ============================================================================
# TRAINING
# ============================================================================

@dataclass(frozen=True)
class ReachTrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-7
    augment: AugmentConfig = AugmentConfig()
    seed: int = 0


ACCURACY_LOG_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def evaluate_pairs(net: ReachabilityNet, dataset: PairDataset, idx: np.ndarray,
                   batch_size: int = 512) -> tuple:
    """Mean BCE loss and accuracy at threshold 0.5 over the given pairs."""
    if idx.size == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    with no_grad():
        for start in range(0, idx.size, batch_size):
            batch = idx[start:start + batch_size]
            a, b = dataset.observations(batch)
            logits = net.pair_logits(a, b)
            labels = dataset.label[batch]
            total_loss += bce_with_logits(logits, labels).item() * batch.size
            correct += int(((logits.data >= 0).astype(int) == labels).sum())
    return total_loss / idx.size, correct / idx.size


def train_reachability(net: ReachabilityNet, dataset: PairDataset, cfg: ReachTrainConfig = ReachTrainConfig(),
                       log_path: Optional[Path] = None) -> list:
    """
    Train with BCE and SGD (momentum, decoupled weight decay). Both observations
    of every pair are augmented independently when augmentation is enabled.

    Returns:
        per-epoch rows (dicts keyed by ACCURACY_LOG_COLUMNS)
    """
    train_idx = dataset.indices("train")
    if train_idx.size == 0:
        raise DatasetError("reachability training needs at least one training pair")
    rng = np.random.default_rng(cfg.seed)
    val_idx = dataset.indices("val")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        total_loss, correct = 0.0, 0
        for start in range(0, order.size, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            a, b = dataset.observations(batch)
            if cfg.augment.enabled:
                a = np.stack([augment_observation(o, cfg.augment, rng) for o in a])
                b = np.stack([augment_observation(o, cfg.augment, rng) for o in b])
            labels = dataset.label[batch]
            net.store.zero_grad()
            logits = net.pair_logits(a, b)
            loss = bce_with_logits(logits, labels)
            if not math.isfinite(loss.item()):
                raise TrainingDivergedError(f"reachability loss became {loss.item()} at epoch {epoch}")
            loss.backward()
            sgd_momentum_step(net.store, cfg.lr, cfg.momentum, cfg.weight_decay)
            total_loss += loss.item() * batch.size
            correct += int(((logits.data >= 0).astype(int) == labels).sum())
        val_loss, val_acc = evaluate_pairs(net, dataset, val_idx)
        row = {"epoch": epoch, "train_loss": total_loss / order.size, "train_acc": correct / order.size,
               "val_loss": val_loss, "val_acc": val_acc}
        history.append(row)
        logger.info("Reachability epoch %d: train_loss=%.4f train_acc=%.3f val_acc=%.3f",
                    epoch, row["train_loss"], row["train_acc"], val_acc)
        if log_path is not None:
            storage.write_csv(log_path, ACCURACY_LOG_COLUMNS, ([r[c] for c in ACCURACY_LOG_COLUMNS] for r in history))
    return history


def calibrate_threshold(net: ReachabilityNet, walks: Sequence[np.ndarray], thresholds: Sequence[float],
                        window: int = 500, capacity: int = 20, target: tuple = (8, 15)) -> dict:
    """
    Sweep the memory threshold over validation walks cut into `window`-step
    episodes and report the mean number of insertions per episode for each.
    """
    embedded = [net.embed(np.asarray(walk, dtype=np.float64)) for walk in walks]
    rows = []
    for tau in thresholds:
        counts = []
        for embeddings in embedded:
            for start in range(0, len(embeddings) - window + 1, window):
                buffer = MemoryBuffer(scope="episodic", tau=tau, capacity=capacity)
                inserted = 0
                for step_index, e in enumerate(embeddings[start:start + window]):
                    _, accepted = maybe_insert(buffer, net, e, step_index, embedded=True)
                    inserted += accepted
                counts.append(inserted)
        mean = float(np.mean(counts)) if counts else float("nan")
        rows.append({"tau": float(tau), "mean_insertions": mean, "episodes": len(counts)})
        logger.info("tau=%.3f: %.2f insertions per %d-step episode", tau, mean, window)
    center = 0.5 * (target[0] + target[1])
    scored = [r for r in rows if math.isfinite(r["mean_insertions"])]
    in_band = [r for r in scored if target[0] <= r["mean_insertions"] <= target[1]]
    pool = in_band or scored
    best = min(pool, key=lambda r: (abs(r["mean_insertions"] - center), r["tau"])) if pool else None
    return {"window": window, "target": list(target), "sweep": rows,
            "recommended_tau": best["tau"] if best else None}
