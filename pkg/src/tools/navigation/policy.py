"""
Goal-conditioned actor-critic for image-goal navigation.

Current observation: shared per-view encoder, views concatenated, reduced by a
dense layer and fed with the previous action into a 2-layer LSTM.
Goal observation: same per-view encoder, views averaged (rotation invariant),
projected to the hidden width. With memory enabled, the joint representation
is projected and refined by stacked attention layers over the memory rows
before the action and value heads.
"""

import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import storage
from .errors import ConfigError, EmptyMemoryError, ShapeError
from .memory import MemoryView
from .sim_world import NUM_ACTIONS
from .tensor_nn import (
    Categorical, ParamStore, Tensor, attention_layer, concat, dense, init_attention_layer,
    init_dense, init_lstm, lstm_step, mul, no_grad, relu, reshape, stack, where,
)


logger = logging.getLogger(__name__)

NULL_ACTION = NUM_ACTIONS


@dataclass(frozen=True)
class PolicyConfig:
    views: int = 4
    channels: int = 4
    rays: int = 32
    view_hidden: int = 128
    view_features: int = 64
    hidden: int = 128
    action_embedding: int = 16
    memory_dim: int = 64
    attention_layers: int = 4
    attention_heads: int = 4
    use_memory: bool = True
    use_long_term: bool = False

    def validate(self) -> None:
        if self.hidden % self.attention_heads:
            raise ConfigError(f"policy.hidden={self.hidden} is not divisible by "
                              f"policy.attention_heads={self.attention_heads}")
        if self.use_long_term and not self.use_memory:
            raise ConfigError("policy.use_long_term requires policy.use_memory")


@dataclass
class PolicyState:
    """Recurrent state for a batch of B agents: h, c of shape (2, B, H) and previous actions (B,)."""

    h: np.ndarray
    c: np.ndarray
    prev_action: np.ndarray

    def copy(self) -> "PolicyState":
        return PolicyState(self.h.copy(), self.c.copy(), self.prev_action.copy())

    def reset(self, rows) -> None:
        """Reset the given batch rows to the episode-start state."""
        self.h[:, rows] = 0.0
        self.c[:, rows] = 0.0
        self.prev_action[rows] = NULL_ACTION


@dataclass
class ActOutput:
    action: np.ndarray
    log_prob: np.ndarray
    value: np.ndarray
    state: PolicyState
    probs: np.ndarray


class PolicyNet:
    def __init__(self, cfg: PolicyConfig = PolicyConfig(), seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        s, H = self.store, cfg.hidden
        self.view1 = init_dense(s, "encoder.view1", cfg.channels * cfg.rays, cfg.view_hidden, rng)
        self.view2 = init_dense(s, "encoder.view2", cfg.view_hidden, cfg.view_features, rng)
        self.obs_fc = init_dense(s, "encoder.obs_fc", cfg.views * cfg.view_features, H, rng)
        self.goal_fc = init_dense(s, "encoder.goal_fc", cfg.view_features, H, rng)
        bound = np.sqrt(1.0 / cfg.action_embedding)
        self.action_embed = s.add("encoder.action_embed",
                                  rng.uniform(-bound, bound, size=(NUM_ACTIONS + 1, cfg.action_embedding)))
        self.lstm = [init_lstm(s, "core.lstm1", H + cfg.action_embedding, H, rng),
                     init_lstm(s, "core.lstm2", H, H, rng)]
        trunk = 2 * H
        if cfg.use_memory:
            self.placeholder = s.add("memory.placeholder", rng.uniform(-0.1, 0.1, size=cfg.memory_dim))
            self.memory_adapter = init_dense(s, "memory.adapter", cfg.memory_dim, H, rng)
            self.joint_proj = init_dense(s, "memory.joint_proj", 2 * H, H, rng)
            self.attention = [init_attention_layer(s, f"memory.attn{n}", H, rng)
                              for n in range(cfg.attention_layers)]
            trunk += H
        self.action_head = init_dense(s, "head.action", trunk, NUM_ACTIONS, rng)
        self.value_head = init_dense(s, "head.value", trunk, 1, rng)

    @property
    def observation_shape(self) -> tuple:
        return (self.cfg.views, self.cfg.channels, self.cfg.rays)

    def initial_state(self, batch: int = 1) -> PolicyState:
        H = self.cfg.hidden
        return PolicyState(h=np.zeros((2, batch, H)), c=np.zeros((2, batch, H)),
                           prev_action=np.full(batch, NULL_ACTION, dtype=np.int64))

    def _check(self, obs: np.ndarray) -> np.ndarray:
        obs = np.asarray(obs)
        if obs.ndim == 3:
            obs = obs[None]
        if obs.shape[1:] != self.observation_shape:
            raise ShapeError(f"observation shape {obs.shape[1:]} does not match policy {self.observation_shape}")
        return obs

    def encode_views(self, obs: np.ndarray) -> Tensor:
        """(B, v, C, W) -> per-view features (B, v, F)."""
        obs = self._check(obs)
        batch, views = obs.shape[:2]
        x = Tensor(obs.reshape(batch * views, -1))
        features = relu(dense(relu(dense(x, self.view1)), self.view2))
        return reshape(features, (batch, views, self.cfg.view_features))

    def encode_current(self, obs: np.ndarray, h: Sequence[Tensor], c: Sequence[Tensor],
                       prev_action: np.ndarray) -> tuple:
        """Returns (w_obs, new_h, new_c) with w_obs the top LSTM layer's output."""
        features = self.encode_views(obs)
        batch = features.shape[0]
        reduced = relu(dense(reshape(features, (batch, -1)), self.obs_fc))
        x = concat([reduced, self.action_embed[np.asarray(prev_action, dtype=np.int64)]], axis=-1)
        h1, c1 = lstm_step(x, h[0], c[0], self.lstm[0])
        h2, c2 = lstm_step(h1, h[1], c[1], self.lstm[1])
        return h2, [h1, h2], [c1, c2]

    def encode_goal(self, goal_obs: np.ndarray) -> Tensor:
        features = self.encode_views(goal_obs)
        return dense(features.sum(axis=1) * (1.0 / self.cfg.views), self.goal_fc)

    def memory_tensor(self, views: Sequence[MemoryView]) -> tuple:
        """Stack per-agent memory views into (B, M, H) keys/values and a (B, M) mask."""
        matrix = np.stack([v.matrix for v in views])
        mask = np.stack([v.mask for v in views])
        if not mask.any(axis=1).all():
            raise EmptyMemoryError("a memory view has no valid rows")
        memory = Tensor(matrix)
        flags = np.array([v.placeholder for v in views])
        if flags.any():
            use_placeholder = np.zeros(matrix.shape, dtype=bool)
            use_placeholder[flags, 0, :] = True
            memory = where(use_placeholder, reshape(self.placeholder, (1, 1, -1)), memory)
        return dense(memory, self.memory_adapter), mask

    def heads(self, w_obs: Tensor, w_goal: Tensor, memory_views: Optional[Sequence[MemoryView]] = None) -> tuple:
        """Returns (logits (B, 4), value (B,))."""
        w_joint = concat([w_obs, w_goal], axis=-1)
        if self.cfg.use_memory:
            if memory_views is None:
                raise EmptyMemoryError("memory is enabled but no memory view was given")
            memory, mask = self.memory_tensor(memory_views)
            batch = w_joint.shape[0]
            z = reshape(dense(w_joint, self.joint_proj), (batch, 1, self.cfg.hidden))
            for layer in self.attention:
                z = attention_layer(z, memory, mask, layer, self.cfg.attention_heads)
            trunk = concat([w_joint, reshape(z, (batch, self.cfg.hidden))], axis=-1)
        else:
            trunk = w_joint
        logits = dense(trunk, self.action_head)
        value = dense(trunk, self.value_head)
        return logits, reshape(value, (value.shape[0],))

    def forward(self, obs, goal_obs, state: PolicyState, memory_views=None) -> tuple:
        """One batched step from a numpy state. Returns (distribution, value, h, c)."""
        h = [Tensor(state.h[0]), Tensor(state.h[1])]
        c = [Tensor(state.c[0]), Tensor(state.c[1])]
        w_obs, h, c = self.encode_current(obs, h, c, state.prev_action)
        logits, value = self.heads(w_obs, self.encode_goal(goal_obs), memory_views)
        return Categorical(logits), value, h, c

    def evaluate_segment(self, obs: np.ndarray, goal_obs: np.ndarray, actions: np.ndarray,
                         prev_actions: np.ndarray, starts: np.ndarray, start_state: PolicyState,
                         memory_views: Optional[Sequence[Sequence[MemoryView]]] = None) -> tuple:
        """
        Replay a stored rollout segment with gradients.

        Args:
            obs, goal_obs: (L, B, v, C, W)
            actions, prev_actions: (L, B)
            starts: (L, B) True where the recurrent state was reset before the step
            start_state: recurrent state used for the first step of the segment
            memory_views: per step, per agent MemoryView (None without memory)

        Returns:
            (log_probs, values, entropies), each a Tensor of shape (L, B)
        """
        length = actions.shape[0]
        h = [Tensor(start_state.h[0]), Tensor(start_state.h[1])]
        c = [Tensor(start_state.c[0]), Tensor(start_state.c[1])]
        log_probs, values, entropies = [], [], []
        for t in range(length):
            if t > 0 and starts[t].any():
                keep = (~starts[t]).astype(h[0].data.dtype)[:, None]
                h = [mul(x, keep) for x in h]
                c = [mul(x, keep) for x in c]
            w_obs, h, c = self.encode_current(obs[t], h, c, prev_actions[t])
            logits, value = self.heads(w_obs, self.encode_goal(goal_obs[t]),
                                       memory_views[t] if memory_views is not None else None)
            dist = Categorical(logits)
            log_probs.append(dist.log_prob(actions[t]))
            values.append(value)
            entropies.append(dist.entropy())
        return stack(log_probs), stack(values), stack(entropies)

    def save(self, path: Path, meta: Optional[dict] = None) -> Path:
        return storage.save_checkpoint(path, self.store, {"kind": "policy", "config": asdict(self.cfg),
                                                          **(meta or {})})

    @classmethod
    def load(cls, path: Path, with_optimizer: bool = True) -> "PolicyNet":
        checkpoint = storage.load_checkpoint(path)
        if checkpoint.meta.get("kind") != "policy":
            raise ConfigError(f"{path} is not a policy checkpoint")
        net = cls(PolicyConfig(**checkpoint.meta["config"]))
        storage.apply_checkpoint(net.store, checkpoint, with_optimizer=with_optimizer)
        return net


def encode_goal(net: PolicyNet, goal_obs: np.ndarray) -> np.ndarray:
    with no_grad():
        out = net.encode_goal(goal_obs).data.astype(np.float64)
    return out[0] if np.ndim(goal_obs) == 3 else out


def encode_current(net: PolicyNet, obs: np.ndarray, state: PolicyState) -> tuple:
    """Returns (w_obs, new_state); the new state keeps state.prev_action."""
    with no_grad():
        w_obs, h, c = net.encode_current(
            obs, [Tensor(state.h[0]), Tensor(state.h[1])], [Tensor(state.c[0]), Tensor(state.c[1])],
            state.prev_action)
    new_state = PolicyState(h=np.stack([x.data for x in h]).astype(np.float64),
                            c=np.stack([x.data for x in c]).astype(np.float64),
                            prev_action=state.prev_action.copy())
    w = w_obs.data.astype(np.float64)
    return (w[0] if np.ndim(obs) == 3 else w), new_state


def act(net: PolicyNet, obs: np.ndarray, goal_obs: np.ndarray, state: PolicyState,
        memory_views: Optional[Sequence[MemoryView]], rng: Optional[np.random.Generator],
        mode: str = "sample") -> ActOutput:
    """Pick actions for a batch of agents; the returned state records them as previous actions."""
    if mode not in ("sample", "greedy"):
        raise ConfigError(f"unknown action mode '{mode}'")
    with no_grad():
        dist, value, h, c = net.forward(obs, goal_obs, state, memory_views)
        action = dist.mode() if mode == "greedy" else dist.sample(rng)
        log_prob = dist.log_prob(action).data.astype(np.float64)
    new_state = PolicyState(h=np.stack([x.data for x in h]).astype(np.float64),
                            c=np.stack([x.data for x in c]).astype(np.float64),
                            prev_action=np.asarray(action, dtype=np.int64))
    return ActOutput(action=np.asarray(action, dtype=np.int64), log_prob=log_prob,
                     value=value.data.astype(np.float64), state=new_state, probs=dist.probs)
