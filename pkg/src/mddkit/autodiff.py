"""Dense float64 tensors with reverse-mode automatic differentiation.

Small tape-based engine backing every trainable component in the kit.
Tensors wrap row-major numpy float64 arrays; each differentiable
operation records a node (inputs, output, local gradient rule) and
``backward`` replays the tape in reverse construction order, which makes
gradient accumulation deterministic for a fixed graph.

Broadcasting is deliberately restricted to two cases, scalar-with-tensor
and row-vector-over-matrix, so every gradient rule stays auditable.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "GradientMap",
    "ShapeError",
    "backward",
    "add",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "log",
    "exp",
    "clip_min",
    "softmax",
    "log_softmax",
    "layer_norm",
    "concat",
    "transpose",
    "reshape",
    "conv1d",
    "tsum",
    "tmean",
    "gather_rows",
    "select_columns",
]

_SEQ = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class Tensor:
    """A dense float64 array node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_grad_fn", "_seq", "_used")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None
        self._seq = next(_SEQ)
        self._used = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"

    # Operator sugar; the free functions hold the gradient rules.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    """Wrap an op result; the node is recorded only if a parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    return out


class Graph:
    """Reachable operation records of a root, in construction order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
        seen: set[int] = set()
        nodes: list[Tensor] = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        # Reverse construction order is a valid topological order because
        # every parent is created before its consumer.
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)


class GradientMap:
    """Gradients keyed by tensor; unreached tensors read as zero."""

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads


def backward(root: Tensor) -> GradientMap:
    """Accumulate d(root)/d(leaf) for every requires_grad leaf.

    The root must be scalar, and each graph may be consumed once: a second
    backward through an already-used root raises.
    """
    if root.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if root._used:
        raise RuntimeError("backward was already called on this graph; rebuild the forward pass")
    root._used = True

    graph = Graph.from_root(root)
    flows: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for t in reversed(graph.nodes):
        g = flows.pop(id(t), None)
        if g is None or not t.requires_grad:
            continue
        if t._grad_fn is None:
            # Leaf parameter or input.
            if id(t) in leaf_grads:
                leaf_grads[id(t)] += g
            else:
                leaf_grads[id(t)] = g.copy()
            t.accumulate_grad(g)
            continue

        def send(parent: Tensor, pg: np.ndarray) -> None:
            if not parent.requires_grad:
                return
            slot = flows.get(id(parent))
            if slot is None:
                flows[id(parent)] = np.ascontiguousarray(pg, dtype=np.float64).copy()
            else:
                slot += pg

        t._grad_fn(g, send)
    return GradientMap(leaf_grads)


# ---------------------------------------------------------------------------
# elementwise and broadcast helpers

def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1:
        return "scalar_b"
    if a.size == 1:
        return "scalar_a"
    if a.ndim == 2 and b.ndim in (1, 2):
        row = b.shape if b.ndim == 1 else b.shape[1:]
        if (b.ndim == 1 and b.shape[0] == a.shape[1]) or (
            b.ndim == 2 and b.shape[0] == 1 and b.shape[1] == a.shape[1]
        ):
            return "row_b"
    if b.ndim == 2 and a.ndim == 1 and a.shape[0] == b.shape[1]:
        return "row_a"
    raise ShapeError(
        f"unsupported broadcast between shapes {a.shape} and {b.shape}; "
        "only scalar-tensor and row-vector-over-matrix are allowed"
    )


def _reduce_to(g: np.ndarray, t: Tensor, kind_role: str) -> np.ndarray:
    if kind_role == "same":
        return g
    if kind_role == "scalar":
        return np.sum(g).reshape(t.shape)
    # row vector broadcast down the rows of a matrix
    return np.sum(g, axis=0).reshape(t.shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    out = a.data + b.data

    def grad_fn(g, send):
        if kind == "same":
            send(a, g)
            send(b, g)
        elif kind == "scalar_b":
            send(a, g)
            send(b, _reduce_to(g, b, "scalar"))
        elif kind == "scalar_a":
            send(a, _reduce_to(g, a, "scalar"))
            send(b, g)
        elif kind == "row_b":
            send(a, g)
            send(b, _reduce_to(g, b, "row"))
        else:
            send(a, _reduce_to(g, a, "row"))
            send(b, g)

    return _from_op(out, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    kind = _broadcast_kind(a, b)
    out = a.data * b.data

    def grad_fn(g, send):
        ga = g * b.data
        gb = g * a.data
        if kind == "same":
            send(a, ga)
            send(b, gb)
        elif kind == "scalar_b":
            send(a, ga)
            send(b, _reduce_to(gb, b, "scalar"))
        elif kind == "scalar_a":
            send(a, _reduce_to(ga, a, "scalar"))
            send(b, gb)
        elif kind == "row_b":
            send(a, ga)
            send(b, _reduce_to(gb, b, "row"))
        else:
            send(a, _reduce_to(ga, a, "row"))
            send(b, gb)

    return _from_op(out, (a, b), grad_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def grad_fn(g, send):
        send(a, g @ b.data.T)
        send(b, a.data.T @ g)

    return _from_op(out, (a, b), grad_fn)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def grad_fn(g, send):
        send(a, g * (a.data > 0.0))

    return _from_op(out, (a,), grad_fn)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def grad_fn(g, send):
        send(a, g * out * (1.0 - out))

    return _from_op(out, (a,), grad_fn)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def grad_fn(g, send):
        send(a, g / a.data)

    return _from_op(out, (a,), grad_fn)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def grad_fn(g, send):
        send(a, g * out)

    return _from_op(out, (a,), grad_fn)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes where a >= floor."""
    out = np.maximum(a.data, floor)

    def grad_fn(g, send):
        send(a, g * (a.data >= floor))

    return _from_op(out, (a,), grad_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def grad_fn(g, send):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        send(a, out * (g - dot))

    return _from_op(out, (a,), grad_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def grad_fn(g, send):
        send(a, g - probs * np.sum(g, axis=axis, keepdims=True))

    return _from_op(out, (a,), grad_fn)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if a.shape[-1] != gain.shape[-1] or a.shape[-1] != bias.shape[-1]:
        raise ShapeError(
            f"layer_norm gain/bias must match last dim {a.shape[-1]}, "
            f"got {gain.shape} and {bias.shape}"
        )
    mu = np.mean(a.data, axis=-1, keepdims=True)
    xc = a.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def grad_fn(g, send):
        d = a.shape[-1]
        gxhat = g * gain.data
        send(gain, _reduce_to(g * xhat, gain, "row" if a.ndim == 2 else "same"))
        send(bias, _reduce_to(g, bias, "row" if a.ndim == 2 else "same"))
        m1 = np.mean(gxhat, axis=-1, keepdims=True)
        m2 = np.mean(gxhat * xhat, axis=-1, keepdims=True)
        send(a, inv * (gxhat - m1 - xhat * m2))

    return _from_op(out, (a, gain, bias), grad_fn)


def concat(parts: Iterable[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g, send):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            send(p, g[tuple(idx)])

    return _from_op(out, tuple(parts), grad_fn)


def _is_fancy(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def _slice(a: Tensor, key) -> Tensor:
    out = a.data[key]
    fancy = _is_fancy(key)

    def grad_fn(g, send):
        full = np.zeros_like(a.data)
        if fancy:
            # Integer-array indices may repeat, so scatter-add.
            np.add.at(full, key, g)
        else:
            full[key] += g
        send(a, full)

    return _from_op(np.ascontiguousarray(out), (a,), grad_fn)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = a.data.T

    def grad_fn(g, send):
        send(a, g.T)

    return _from_op(np.ascontiguousarray(out), (a,), grad_fn)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)

    def grad_fn(g, send):
        send(a, g.reshape(a.shape))

    return _from_op(np.ascontiguousarray(out), (a,), grad_fn)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = np.sum(a.data, axis=axis)

    def grad_fn(g, send):
        if axis is None:
            send(a, np.broadcast_to(g, a.shape).copy())
        else:
            send(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _from_op(out, (a,), grad_fn)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    out = np.mean(a.data, axis=axis)

    def grad_fn(g, send):
        if axis is None:
            send(a, np.broadcast_to(g / n, a.shape).copy())
        else:
            send(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape).copy())

    return _from_op(out, (a,), grad_fn)


def gather_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup (embedding); gradient scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows expects a flat id sequence")
    if table.ndim != 2:
        raise ShapeError("gather_rows expects a 2D table")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row id out of range [0, {table.shape[0]})")
    out = table.data[idx]

    def grad_fn(g, send):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        send(table, full)

    return _from_op(out, (table,), grad_fn)


def select_columns(a: Tensor, cols: Sequence[int]) -> Tensor:
    """Pick one column per row: out[i] = a[i, cols[i]]."""
    idx = np.asarray(cols, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise ShapeError(f"select_columns needs one column id per row of {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise IndexError(f"column id out of range [0, {a.shape[1]})")
    rows = np.arange(a.shape[0])
    out = a.data[rows, idx]

    def grad_fn(g, send):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        send(a, full)

    return _from_op(out, (a,), grad_fn)


def conv1d(x: Tensor, weight: Tensor, stride: int = 1) -> Tensor:
    """1D convolution along the first axis.

    x: (n, c_in), weight: (k, c_in, c_out). Zero padding keeps the output
    length at ceil(n / stride).
    """
    if x.ndim != 2 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects (n, c_in) and (k, c_in, c_out), got {x.shape}, {weight.shape}")
    k, c_in, c_out = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: input {x.shape[1]} vs weight {c_in}")
    if stride < 1:
        raise ShapeError("conv1d stride must be >= 1")
    n = x.shape[0]
    pad_left = (k - 1) // 2
    pad_right = k - 1 - pad_left
    xp = np.zeros((n + k - 1, c_in))
    xp[pad_left:pad_left + n] = x.data
    out_len = 1 + (n - 1) // stride
    starts = np.arange(out_len) * stride
    # windows: (out_len, k, c_in) -> (out_len, k*c_in)
    gather = starts[:, None] + np.arange(k)[None, :]
    windows = xp[gather].reshape(out_len, k * c_in)
    wmat = weight.data.reshape(k * c_in, c_out)
    out = windows @ wmat

    def grad_fn(g, send):
        send(weight, (windows.T @ g).reshape(k, c_in, c_out))
        gw = (g @ wmat.T).reshape(out_len, k, c_in)
        gxp = np.zeros_like(xp)
        np.add.at(gxp, gather, gw)
        send(x, gxp[pad_left:pad_left + n])

    return _from_op(out, (x, weight), grad_fn)
