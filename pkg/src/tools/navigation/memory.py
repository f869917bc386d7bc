"""
Threshold-gated memory over reachability embeddings.

An observation is stored only when its best reachability score against the
buffer is below tau. Episodic buffers are cleared every episode; long-term
buffers keep entries for a fixed number of episodes within one scene.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import MemoryScopeError


logger = logging.getLogger(__name__)

SCOPES = ("episodic", "long_term")


@dataclass
class MemoryEntry:
    vector: np.ndarray
    step: int
    episode: int


@dataclass
class MemoryBuffer:
    scope: str = "episodic"
    tau: float = 0.5
    capacity: int = 20
    ttl_episodes: int = 100
    dim: Optional[int] = None
    entries: list = field(default_factory=list)
    episode: int = 0
    scene_id: Optional[str] = None
    log: Optional[list] = None

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise MemoryScopeError(f"unknown memory scope '{self.scope}'")
        if self.capacity < 1:
            raise ValueError(f"memory capacity must be >= 1, got {self.capacity}")

    def __len__(self) -> int:
        return len(self.entries)

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.dim or 0))
        return np.stack([e.vector for e in self.entries])

    def enable_log(self) -> None:
        self.log = []


def reachability_score(net, obs: np.ndarray, buffer: MemoryBuffer, embedded: bool = False) -> float:
    """Max comparator score of obs against the buffer; -inf for an empty buffer."""
    if not buffer.entries:
        return float("-inf")
    query = obs if embedded else net.embed(obs)
    return float(np.max(net.score_embeddings(query, buffer.matrix())))


def maybe_insert(buffer: MemoryBuffer, net, obs: np.ndarray, step: int, embedded: bool = False) -> tuple:
    """
    Store g(obs) when its reachability score is below tau, evicting the oldest
    entry if the buffer is full.

    Returns:
        (buffer, inserted)
    """
    vector = np.asarray(obs, dtype=np.float64) if embedded else net.embed(obs)
    current = reachability_score(net, vector, buffer, embedded=True)
    inserted = current < buffer.tau
    if inserted:
        if len(buffer.entries) >= buffer.capacity:
            buffer.entries.pop(0)
        buffer.entries.append(MemoryEntry(vector=vector, step=step, episode=buffer.episode))
        if buffer.dim is None:
            buffer.dim = vector.shape[-1]
    if buffer.log is not None:
        buffer.log.append({"step": int(step), "score": current, "inserted": bool(inserted),
                           "buffer_size": len(buffer.entries)})
    return buffer, inserted


def reset_episodic(buffer: MemoryBuffer) -> MemoryBuffer:
    if buffer.scope != "episodic":
        raise MemoryScopeError("reset_episodic called on a long-term buffer")
    buffer.entries.clear()
    return buffer


def advance_episode(buffer: MemoryBuffer, scene_id: str) -> MemoryBuffer:
    """Count one finished episode; expire old entries and forget other scenes."""
    if buffer.scope != "long_term":
        raise MemoryScopeError("advance_episode called on an episodic buffer")
    if scene_id != buffer.scene_id:
        if buffer.entries:
            logger.debug("Scene changed %s -> %s, clearing long-term memory", buffer.scene_id, scene_id)
        buffer.entries.clear()
        buffer.scene_id = scene_id
    buffer.episode += 1
    buffer.entries = [e for e in buffer.entries if buffer.episode - e.episode < buffer.ttl_episodes]
    return buffer


@dataclass
class MemoryView:
    matrix: np.ndarray
    mask: np.ndarray
    placeholder: bool


def attention_view(episodic: MemoryBuffer, long_term: Optional[MemoryBuffer] = None) -> MemoryView:
    """
    Episodic rows then long-term rows, zero-padded to the combined capacity.
    With both buffers empty, row 0 is flagged valid and `placeholder` is set so
    the policy can substitute its learned placeholder vector.
    """
    buffers = [episodic] + ([long_term] if long_term is not None else [])
    dim = next((b.dim for b in buffers if b.dim is not None), None)
    if dim is None:
        raise ValueError("memory view needs an embedding dimension")
    total = sum(b.capacity for b in buffers)
    matrix = np.zeros((total, dim))
    mask = np.zeros(total, dtype=bool)
    row = 0
    for b in buffers:
        for entry in b.entries:
            matrix[row] = entry.vector
            mask[row] = True
            row += 1
    placeholder = row == 0
    if placeholder:
        mask[0] = True
    return MemoryView(matrix=matrix, mask=mask, placeholder=placeholder)


def replay_insertion_log(net, embeddings, log: list, tau: float, capacity: int) -> list:
    """
    Re-derive every gate decision of an episodic insertion log by brute force.

    Args:
        embeddings: the embedding fed at each logged step, in order
        log: records written by maybe_insert

    Returns:
        indices of log records whose decision or buffer size disagrees
    """
    stored = []
    mismatches = []
    for index, (vector, record) in enumerate(zip(embeddings, log)):
        scores = [float(net.score_embeddings(vector, m[None])[0]) for m in stored]
        should_insert = (max(scores) if scores else float("-inf")) < tau
        if should_insert:
            stored = (stored + [np.asarray(vector)])[-capacity:]
        if should_insert != record["inserted"] or len(stored) != record["buffer_size"]:
            mismatches.append(index)
        if record["buffer_size"] > capacity:
            mismatches.append(index)
    return mismatches


@dataclass(frozen=True)
class MemoryConfig:
    tau: float = 0.5
    capacity: int = 20
    long_term_capacity: int = 60
    ttl_episodes: int = 100
    log_insertions: bool = False

    def episodic(self, dim: int) -> MemoryBuffer:
        buffer = MemoryBuffer(scope="episodic", tau=self.tau, capacity=self.capacity, dim=dim)
        if self.log_insertions:
            buffer.enable_log()
        return buffer

    def long_term(self, dim: int) -> MemoryBuffer:
        return MemoryBuffer(scope="long_term", tau=self.tau, capacity=self.long_term_capacity,
                            ttl_episodes=self.ttl_episodes, dim=dim)
