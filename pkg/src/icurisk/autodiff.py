"""Dense float64 tensors with taped reverse-mode differentiation.

The tape is dynamic: any operation touching a gradient-requiring tensor
records its parents and a backward closure, and :func:`backward` replays the
recording in reverse topological order.  Everything is float64; broadcasting
is supported for the patterns the layers actually use (scalar-with-tensor
and trailing-axis bias rows), and gradients are always summed back onto the
operand's own shape so any numpy-legal broadcast still differentiates
correctly.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "NonFiniteError",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "relu",
    "silu",
    "exp_neg_relu",
    "clip",
    "tsum",
    "tmean",
    "concat",
    "take_rows",
    "softmax_rows",
    "save_params",
    "load_params",
]

CHECKPOINT_FORMAT = "icurisk-params"
CHECKPOINT_VERSION = 1


class NonFiniteError(ArithmeticError):
    """A forward pass produced NaN/Inf, which is an error, not a state."""


_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (fast inference path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """A numpy float64 array plus an optional gradient slot and tape entry."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(data, parents, backward_fn) -> Tensor:
    """Record one tape node. `backward_fn(g)` must accumulate into parents' grads."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _accum(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        t.grad += _unbroadcast(g, t.data.shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return make_op(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return make_op(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return make_op(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bwd(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return make_op(a.data / b.data, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return make_op(-a.data, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return make_op(a.data @ b.data, (a, b), bwd)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.T)

    return make_op(a.data.T, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return make_op(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    return make_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def take_rows(a, indices) -> Tensor:
    """Gather rows; the backward pass scatter-adds into the source."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)

    def bwd(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return make_op(a.data[idx], (a,), bwd)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += g  # scalar broadcasts
        elif keepdims:
            a.grad += np.broadcast_to(g, a.data.shape)
        else:
            a.grad += np.broadcast_to(np.expand_dims(g, axis), a.data.shape)

    return make_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)

    def bwd(g):
        _accum(a, g * out * (1.0 - out))

    return make_op(out, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return make_op(out, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out)

    return make_op(out, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g / a.data)

    return make_op(np.log(a.data), (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return make_op(np.maximum(a.data, 0.0), (a,), bwd)


def silu(a) -> Tensor:
    """x * sigmoid(x), the base activation under the spline edges."""
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def bwd(g):
        _accum(a, g * s * (1.0 + a.data * (1.0 - s)))

    return make_op(a.data * s, (a,), bwd)


def exp_neg_relu(a) -> Tensor:
    """exp(-max(0, x)) in one tape node: the decay-factor shape, always in (0, 1]."""
    a = as_tensor(a)
    out = np.exp(-np.maximum(a.data, 0.0))

    def bwd(g):
        _accum(a, -g * out * (a.data > 0))

    return make_op(out, (a,), bwd)


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)

    def bwd(g):
        _accum(a, g * ((a.data >= lo) & (a.data <= hi)))

    return make_op(out, (a,), bwd)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax of a 2-D tensor, computed with max subtraction."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        _accum(a, out * (g - (g * out).sum(axis=1, keepdims=True)))

    return make_op(out, (a,), bwd)


# ---------------------------------------------------------------------------
# the tape


def _toposort(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order  # parents before children


def backward(loss: Tensor, store: "ParamStore | None" = None):
    """Populate gradients of everything `loss` was recorded from.

    Gradients are reset before accumulation, so repeated calls on the same
    recorded graph are bit-identical.  When a ParamStore is given, every one
    of its gradient slots is zeroed first (non-participating parameters end
    at exactly zero) and at least one parameter must participate.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ValueError("loss is not connected to any trainable parameter")

    order = _toposort(loss)
    if store is not None:
        store.zero_grad()
        ids = {id(p) for p in store.tensors()}
        if not any(id(n) in ids for n in order):
            raise ValueError("loss is not connected to the given ParamStore")
    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameter store and checkpointing


class ParamStore:
    """Named trainable tensors with same-shaped gradient slots."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.array(array, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return self._params.values()

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def n_values(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def snapshot(self) -> dict:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_snapshot(self, snap: dict):
        for k, arr in snap.items():
            t = self._params[k]
            if t.data.shape != arr.shape:
                raise ValueError(f"snapshot shape mismatch for {k!r}")
            t.data = arr.copy()

    def check_finite(self):
        for k, t in self._params.items():
            if not np.all(np.isfinite(t.data)):
                raise NonFiniteError(f"parameter {k!r} contains NaN/Inf")


def save_params(store: ParamStore, path) -> None:
    """Write (name, shape, values) triples as versioned JSON.

    Values are serialized through repr, which round-trips float64 exactly;
    loading gives back bit-identical arrays.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "params": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in store.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_params(path) -> dict:
    """Read a checkpoint back into a {name: ndarray} dict."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a parameter checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    out = {}
    for name, entry in payload["params"].items():
        out[name] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return out
