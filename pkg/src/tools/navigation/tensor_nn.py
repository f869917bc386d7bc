"""
Differentiable tensor kernels.

A small reverse-mode engine over numpy arrays: every op returns a Tensor that
remembers its parents and a closure mapping the output gradient to parent
gradients. On top of it sit the layers the navigation networks are built from
(dense, layer norm, LSTM step, multi-head attention, attention layer), a
categorical distribution, a named parameter store and the SGD/Adam optimizers.

Storage defaults to float32; gradient checks switch to float64 with
`precision(np.float64)`.
"""

import contextlib
import logging
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import EmptyMemoryError, NonFiniteError, ShapeError


logger = logging.getLogger(__name__)

_DEFAULT_DTYPE = np.float32
_DEBUG = False


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the storage dtype (e.g. float64 for gradient checks)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


_GRAD_STATE = threading.local()


def grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (rollouts, memory scoring, evaluation)."""
    previous = grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = previous


def set_debug(enabled: bool) -> None:
    """Turn NaN/Inf checks after every op on or off."""
    global _DEBUG
    _DEBUG = bool(enabled)


# ============================================================================
# TENSOR
# ============================================================================

class Tensor:
    """An n-d array that records how it was computed."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: tuple, backward: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        if _DEBUG and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"non-finite values produced by '{op}'")
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(self._topological_order()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = np.array(g) if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    def _topological_order(self) -> list:
        order, visited = [], {id(self)}
        stack = [(self, iter(self._parents))]
        while stack:
            node, parents = stack[-1]
            for parent in parents:
                if parent.requires_grad and id(parent) not in visited:
                    visited.add(id(parent))
                    stack.append((parent, iter(parent._parents)))
                    break
            else:
                stack.pop()
                order.append(node)
        return order

    # Operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(value, dtype=dtype)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ============================================================================
# ELEMENTWISE AND STRUCTURAL OPS
# ============================================================================

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return Tensor._result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return Tensor._result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    return Tensor._result(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return Tensor._result(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)), "div")


def _pair(a, b) -> tuple:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor._result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return Tensor._result(np.where(positive, x.data, 0).astype(x.data.dtype), (x,),
                          lambda g: (g * positive,), "relu")


def tanh_op(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._result(out, (x,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return Tensor._result(out, (x,), lambda g: (g * out * (1 - out),), "sigmoid")


def absolute(x: Tensor) -> Tensor:
    return Tensor._result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def minimum(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "minimum")
    pick_a = a.data <= b.data
    return Tensor._result(
        np.minimum(a.data, b.data), (a, b),
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)), "minimum")


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return Tensor._result(np.clip(x.data, low, high), (x,), lambda g: (g * inside,), "clip")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return Tensor._result(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return tsum(x, axis, keepdims) * (1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    return Tensor._result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor._result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    advanced = any(isinstance(i, (np.ndarray, list)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        grad = np.zeros_like(x.data)
        if advanced:
            np.add.at(grad, index, g)
        else:
            grad[index] += g
        return (grad,)

    return Tensor._result(np.array(x.data[index]), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    ndim = tensors[0].ndim
    for t in tensors[1:]:
        other = [s for i, s in enumerate(t.shape) if i != axis % ndim]
        first = [s for i, s in enumerate(tensors[0].shape) if i != axis % ndim]
        if t.ndim != ndim or other != first:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")
    return Tensor._result(
        np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
        lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


def where(condition: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select from a where condition holds, else from b (condition is a constant)."""
    a, b = _pair(a, b)
    condition = np.asarray(condition, dtype=bool)
    return Tensor._result(
        np.where(condition, a.data, b.data), (a, b),
        lambda g: (_unbroadcast(np.where(condition, g, 0), a.shape),
                   _unbroadcast(np.where(condition, 0, g), b.shape)), "where")


# ============================================================================
# NORMALIZATION, SOFTMAX, LOSSES
# ============================================================================

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    return Tensor._result(p, (x,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "softmax")


def masked_softmax(x: Tensor, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax where masked-out (False) positions get a -inf logit."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise EmptyMemoryError("every position along the softmax axis is masked")
    logits = np.where(mask, x.data, -np.inf)
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    p = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)
    return Tensor._result(p, (x,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),), "masked_softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    out = x.data - logsumexp(x.data, axis=axis, keepdims=True)
    p = np.exp(out)
    return Tensor._result(out.astype(x.data.dtype), (x,),
                          lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm: input {x.shape} vs gain {gain.shape} / bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_sigma = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_sigma

    def backward(g):
        dxhat = g * gain.data
        dx = inv_sigma * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                          - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor._result(xhat * gain.data + bias.data, (x, gain, bias), backward, "layer_norm")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy computed from logits."""
    targets = np.asarray(targets, dtype=logits.data.dtype).reshape(logits.shape)
    z = logits.data
    losses = np.maximum(z, 0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    return Tensor._result(np.asarray(losses.mean()), (logits,),
                          lambda g: (g * (expit(z) - targets) / n,), "bce_with_logits")


# ============================================================================
# LAYERS
# ============================================================================

@dataclass
class DenseParams:
    W: Tensor
    b: Tensor


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class LSTMParams:
    W_x: Tensor
    W_h: Tensor
    b: Tensor


@dataclass
class AttentionParams:
    query: DenseParams
    key: DenseParams
    value: DenseParams
    output: DenseParams


@dataclass
class AttentionLayerParams:
    attention: AttentionParams
    norm1: LayerNormParams
    ff1: DenseParams
    ff2: DenseParams
    norm2: LayerNormParams


def dense(x: Tensor, W, b=None) -> Tensor:
    """y = x W + b over the last axis of x."""
    if isinstance(W, DenseParams):
        W, b = W.W, W.b
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weights {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"dense: bias {b.shape} does not match weights {W.shape}")
    flat = x if x.ndim == 2 else reshape(x, (-1, x.shape[-1]))
    y = matmul(flat, W)
    if b is not None:
        y = y + b
    return y if x.ndim == 2 else reshape(y, x.shape[:-1] + (W.shape[1],))


def lstm_step(x: Tensor, h: Tensor, c: Tensor, params: LSTMParams) -> tuple:
    """One step of a single LSTM layer; gate order is input, forget, candidate, output."""
    hidden = h.shape[-1]
    if c.shape != h.shape or params.W_h.shape != (hidden, 4 * hidden) or params.W_x.shape[1] != 4 * hidden:
        raise ShapeError(f"lstm_step: h {h.shape}, c {c.shape}, W_x {params.W_x.shape}, W_h {params.W_h.shape}")
    gates = dense(x, params.W_x, params.b) + matmul(h, params.W_h)
    i = sigmoid(gates[..., :hidden])
    f = sigmoid(gates[..., hidden:2 * hidden])
    g = tanh_op(gates[..., 2 * hidden:3 * hidden])
    o = sigmoid(gates[..., 3 * hidden:])
    c_next = f * c + i * g
    h_next = o * tanh_op(c_next)
    return h_next, c_next


def multi_head_attention(query: Tensor, key_value: Tensor, mask: np.ndarray,
                         params: AttentionParams, heads: int) -> Tensor:
    """
    Scaled dot-product attention of a query set over a key/value set.

    Args:
        query: (B, Q, D) or (Q, D)
        key_value: (B, M, D) or (M, D)
        mask: (B, M) or (M,) booleans, True marks a usable row
        params: projection weights
        heads: number of heads; D must be divisible by it

    Returns:
        (B, Q, D) or (Q, D) tensor, projected by the output map
    """
    unbatched = query.ndim == 2
    if unbatched:
        query = reshape(query, (1,) + query.shape)
        key_value = reshape(key_value, (1,) + key_value.shape)
        mask = np.asarray(mask, dtype=bool)[None]
    batch, n_query, dim = query.shape
    n_keys = key_value.shape[1]
    if dim % heads:
        raise ShapeError(f"attention width {dim} is not divisible by {heads} heads")
    if key_value.shape != (batch, n_keys, dim) or np.shape(mask) != (batch, n_keys):
        raise ShapeError(f"attention: query {query.shape}, memory {key_value.shape}, mask {np.shape(mask)}")
    head_dim = dim // heads

    def split_heads(t: Tensor, length: int) -> Tensor:
        return transpose(reshape(t, (batch, length, heads, head_dim)), (0, 2, 1, 3))

    q = split_heads(dense(query, params.query), n_query)
    k = split_heads(dense(key_value, params.key), n_keys)
    v = split_heads(dense(key_value, params.value), n_keys)
    logits = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(head_dim))
    weights = masked_softmax(logits, np.asarray(mask, dtype=bool)[:, None, None, :])
    mixed = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (batch, n_query, dim))
    out = dense(mixed, params.output)
    return reshape(out, (n_query, dim)) if unbatched else out


def attention_layer(z_prev: Tensor, memory: Tensor, mask: np.ndarray,
                    params: AttentionLayerParams, heads: int) -> Tensor:
    """Post-norm block: a = LN(z + Attn(z, M)); z' = LN(a + FF(a))."""
    a = layer_norm(z_prev + multi_head_attention(z_prev, memory, mask, params.attention, heads),
                   params.norm1.gain, params.norm1.bias)
    ff = dense(relu(dense(a, params.ff1)), params.ff2)
    return layer_norm(a + ff, params.norm2.gain, params.norm2.bias)


class Categorical:
    """Categorical distribution over the last axis of a logits tensor."""

    def __init__(self, logits: Tensor):
        self.logits = logits
        self.log_probs = log_softmax(logits)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    def log_prob(self, actions: np.ndarray) -> Tensor:
        actions = np.asarray(actions, dtype=np.int64)
        rows = np.arange(actions.shape[0])
        return self.log_probs[rows, actions]

    def entropy(self) -> Tensor:
        return -tsum(exp(self.log_probs) * self.log_probs, axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        probs = self.probs.astype(np.float64)
        cumulative = np.cumsum(probs, axis=-1)
        draws = rng.random(probs.shape[0])[:, None] * cumulative[:, -1:]
        return np.minimum((draws >= cumulative).sum(axis=-1), probs.shape[-1] - 1)

    def mode(self) -> np.ndarray:
        return np.argmax(self.logits.data, axis=-1)


# ============================================================================
# PARAMETER STORE AND INITIALIZATION
# ============================================================================

class ParamStore:
    """Named parameters, their gradients and optimizer state."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.state: dict = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter '{name}' already registered")
        tensor = Tensor(value, requires_grad=True, dtype=_DEFAULT_DTYPE, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = sum(float((p.grad.astype(np.float64) ** 2).sum())
                    for p in self._params.values() if p.grad is not None)
        return math.sqrt(total)

    def clip_grad_norm(self, max_norm: float) -> float:
        """Rescale all gradients so their global norm is at most max_norm."""
        norm = self.grad_norm()
        if norm > max_norm > 0:
            scale = max_norm / (norm + 1e-6)
            for p in self._params.values():
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def snapshot(self) -> dict:
        return {name: p.data.copy() for name, p in self._params.items()}

    def restore(self, snapshot: dict) -> None:
        for name, value in snapshot.items():
            self._params[name].data = value.copy()

    def state_arrays(self) -> dict:
        """Flatten optimizer state tensors to 'opt/<kind>/<param>' names."""
        arrays = {}
        for kind in ("adam_m", "adam_v", "momentum"):
            for name, value in self.state.get(kind, {}).items():
                arrays[f"opt/{kind}/{name}"] = value
        return arrays

    def state_scalars(self) -> dict:
        return {k: v for k, v in self.state.items() if not isinstance(v, dict)}

    def load_state(self, arrays: dict, scalars: dict) -> None:
        self.state = dict(scalars)
        for key, value in arrays.items():
            _, kind, name = key.split("/", 2)
            self.state.setdefault(kind, {})[name] = value


def init_dense(store: ParamStore, name: str, fan_in: int, fan_out: int,
               rng: np.random.Generator) -> DenseParams:
    bound = math.sqrt(1.0 / fan_in)
    W = store.add(f"{name}.W", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    b = store.add(f"{name}.b", np.zeros(fan_out))
    return DenseParams(W, b)


def init_layer_norm(store: ParamStore, name: str, dim: int) -> LayerNormParams:
    return LayerNormParams(store.add(f"{name}.gain", np.ones(dim)), store.add(f"{name}.bias", np.zeros(dim)))


def init_lstm(store: ParamStore, name: str, input_dim: int, hidden: int,
              rng: np.random.Generator) -> LSTMParams:
    bound = math.sqrt(1.0 / hidden)
    bias = np.zeros(4 * hidden)
    bias[hidden:2 * hidden] = 1.0
    return LSTMParams(
        store.add(f"{name}.W_x", rng.uniform(-bound, bound, size=(input_dim, 4 * hidden))),
        store.add(f"{name}.W_h", rng.uniform(-bound, bound, size=(hidden, 4 * hidden))),
        store.add(f"{name}.b", bias),
    )


def init_attention_layer(store: ParamStore, name: str, dim: int,
                         rng: np.random.Generator) -> AttentionLayerParams:
    attention = AttentionParams(*(init_dense(store, f"{name}.attn.{part}", dim, dim, rng)
                                  for part in ("query", "key", "value", "output")))
    return AttentionLayerParams(
        attention=attention,
        norm1=init_layer_norm(store, f"{name}.norm1", dim),
        ff1=init_dense(store, f"{name}.ff1", dim, 2 * dim, rng),
        ff2=init_dense(store, f"{name}.ff2", 2 * dim, dim, rng),
        norm2=init_layer_norm(store, f"{name}.norm2", dim),
    )


# ============================================================================
# OPTIMIZERS
# ============================================================================

def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update using the gradients currently in the store."""
    first = store.state.setdefault("adam_m", {})
    second = store.state.setdefault("adam_v", {})
    t = store.state.get("adam_t", 0) + 1
    store.state["adam_t"] = t
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter '{name}' {p.shape}")
        m = beta1 * first.get(name, np.zeros_like(p.data)) + (1 - beta1) * g
        v = beta2 * second.get(name, np.zeros_like(p.data)) + (1 - beta2) * g * g
        first[name], second[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def sgd_momentum_step(store: ParamStore, lr: float, momentum: float = 0.9,
                      weight_decay: float = 0.0) -> None:
    """SGD with heavy-ball momentum and decoupled multiplicative weight decay."""
    buffers = store.state.setdefault("momentum", {})
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient {g.shape} does not match parameter '{name}' {p.shape}")
        buf = momentum * buffers.get(name, np.zeros_like(p.data)) + g
        buffers[name] = buf
        decayed = p.data * (1 - lr * weight_decay) if weight_decay else p.data
        p.data = (decayed - lr * buf).astype(p.data.dtype)


# ============================================================================
# GRADIENT CHECKING
# ============================================================================

def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor) per entry."""
    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denominator


def check_gradients(build_loss: Callable[..., Tensor], inputs: dict, h: float = 1e-5,
                    kink_tolerance: float = 1e-6, floor: float = 1e-4) -> float:
    """
    Compare analytic gradients with central finite differences.

    Args:
        build_loss: callable taking the input Tensors as keyword arguments and
            returning a scalar Tensor
        inputs: name -> float64 array
        h: finite-difference step
        kink_tolerance: components whose h and h/2 estimates disagree by more
            than this are sitting on a non-differentiable point and are skipped
        floor: smallest denominator; entries whose gradients are both below it
            are compared in absolute terms scaled by 1/floor

    Returns:
        The largest entry-wise error |a - n| / max(|a|, |n|, floor) over all inputs
    """
    tensors = {k: Tensor(v, requires_grad=True, dtype=np.float64) for k, v in inputs.items()}
    build_loss(**tensors).backward()

    def evaluate(name, flat_index, delta):
        arrays = {k: v.copy() for k, v in inputs.items()}
        arrays[name].reshape(-1)[flat_index] += delta
        return build_loss(**{k: Tensor(v, dtype=np.float64) for k, v in arrays.items()}).item()

    worst = 0.0
    for name, tensor in tensors.items():
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        analytic = analytic.reshape(-1)
        numeric = np.zeros_like(analytic)
        usable = np.ones(analytic.size, dtype=bool)
        for i in range(analytic.size):
            full = (evaluate(name, i, h) - evaluate(name, i, -h)) / (2 * h)
            half = (evaluate(name, i, h / 2) - evaluate(name, i, -h / 2)) / h
            numeric[i] = full
            usable[i] = abs(full - half) <= kink_tolerance * max(1.0, abs(full))
        if not usable.any():
            continue
        a, n = analytic[usable], numeric[usable]
        worst = max(worst, float(relative_errors(a, n, floor).max()))
    return worst


def check_param_gradients(loss_fn: Callable[[], Tensor], store: ParamStore, names: Sequence[str],
                          h: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0,
                          kink_tolerance: float = 1e-6, floor: float = 1e-4) -> float:
    """
    Finite-difference check of d loss / d parameter for parameters of a store.

    The store's parameters are perturbed in place and restored afterwards.
    `max_entries` limits each parameter to a random subset of its entries. The
    result is the largest entry-wise error, measured as in `check_gradients`.
    """
    store.zero_grad()
    loss_fn().backward()
    analytic = {name: (store[name].grad if store[name].grad is not None
                       else np.zeros_like(store[name].data)).reshape(-1).copy() for name in names}
    rng = np.random.default_rng(seed)

    def evaluate(param, flat_index, delta):
        original = param.data.reshape(-1)[flat_index]
        param.data.reshape(-1)[flat_index] = original + delta
        try:
            with no_grad():
                return loss_fn().item()
        finally:
            param.data.reshape(-1)[flat_index] = original

    worst = 0.0
    for name in names:
        param = store[name]
        entries = np.arange(param.data.size)
        if max_entries is not None and entries.size > max_entries:
            entries = rng.choice(entries, size=max_entries, replace=False)
        a_vals, n_vals = [], []
        for i in entries:
            full = (evaluate(param, i, h) - evaluate(param, i, -h)) / (2 * h)
            half = (evaluate(param, i, h / 2) - evaluate(param, i, -h / 2)) / h
            if abs(full - half) <= kink_tolerance * max(1.0, abs(full)):
                a_vals.append(analytic[name][i])
                n_vals.append(full)
        if not a_vals:
            continue
        a, n = np.array(a_vals), np.array(n_vals)
        worst = max(worst, float(relative_errors(a, n, floor).max()))
    return worst
