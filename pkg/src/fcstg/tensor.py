"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable primitive is a *kind* with a forward rule and a
backward rule, both kept in module-level registries so the tape can look
them up by name::

    with Tape() as tape:
        loss = tsum(mul(w, w))
    grads = backward(tape, loss)

Broadcasting is deliberately narrow.  ``add`` and ``mul`` accept either
equal shapes or a right operand whose shape is a suffix of the left
operand's shape (a bias or mask repeated over leading axes).  ``matmul``
accepts ``(..., m, k) @ (k, n)`` (shared right matrix) or two operands
with identical leading axes (batched product).  Anything else needs an
explicit ``reshape``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "AdamState", "ShapeError", "NumericFault",
    "tensor_op", "backward", "adam_step",
    "matmul", "add", "sub", "mul", "scale", "relu", "sigmoid", "softmax", "log_softmax",
    "mean", "tsum", "concat", "reshape", "transpose", "take",
    "sin", "cos", "exp", "log",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contraction or broadcast rule."""


class NumericFault(ArithmeticError):
    """An operation produced NaN or infinity."""


class Tensor:
    """A float64 array, optionally a trainable leaf or a node on the active tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"tensor extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    id: int
    kind: str
    inputs: tuple[int | None, ...]
    input_data: tuple[np.ndarray, ...] = ()
    output: np.ndarray | None = None
    attrs: dict = field(default_factory=dict)


class Tape:
    """Append-only record of operations for one forward pass.

    Leaves (tensors created with ``requires_grad=True``) are registered as
    rule-less nodes the first time an operation consumes them, so every
    node's inputs always carry smaller ids than the node itself.
    """

    _active: list["Tape"] = []

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaves: dict[int, tuple[int, Tensor]] = {}

    def __enter__(self):
        Tape._active.append(self)
        return self

    def __exit__(self, *exc):
        Tape._active.pop()

    @classmethod
    def current(cls) -> "Tape | None":
        return cls._active[-1] if cls._active else None

    def _node_of(self, t: Tensor) -> int | None:
        if t._tape is self:
            return t.node_id
        if t.requires_grad:
            hit = self._leaves.get(id(t))
            if hit is None:
                nid = len(self.nodes)
                self.nodes.append(Node(nid, "leaf", ()))
                self._leaves[id(t)] = (nid, t)
                return nid
            return hit[0]
        return None

    def leaves(self) -> list[Tensor]:
        return [t for _, t in self._leaves.values()]

    def leaf_id(self, t: Tensor) -> int | None:
        hit = self._leaves.get(id(t))
        return hit[0] if hit is not None and hit[1] is t else None


# ---------------------------------------------------------------------------
# forward / backward rules


def _suffix_ok(a: tuple, b: tuple) -> bool:
    return a == b or (len(b) <= len(a) and a[len(a) - len(b):] == b)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


def _check_elementwise(kind, a, b):
    if not _suffix_ok(a.shape, b.shape):
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not conform "
                         "(right operand must equal or be a trailing suffix of the left)")


def _fwd_matmul(xs, attrs):
    a, b = xs
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: leading axes differ, {a.shape} @ {b.shape}")
    return a @ b


def _bwd_matmul(g, xs, out, attrs):
    a, b = xs
    ga = g @ np.swapaxes(b, -1, -2)
    if b.ndim == 2:
        gb = a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    else:
        gb = np.swapaxes(a, -1, -2) @ g
    return ga, gb


def _fwd_add(xs, attrs):
    _check_elementwise("add", *xs)
    return xs[0] + xs[1]


def _bwd_add(g, xs, out, attrs):
    return g, _reduce_to(g, xs[1].shape)


def _fwd_mul(xs, attrs):
    _check_elementwise("mul", *xs)
    return xs[0] * xs[1]


def _bwd_mul(g, xs, out, attrs):
    a, b = xs
    return g * b, _reduce_to(g * a, b.shape)


def _fwd_softmax(xs, attrs):
    z = xs[0] - xs[0].max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _bwd_softmax(g, xs, out, attrs):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def _fwd_log_softmax(xs, attrs):
    z = xs[0] - xs[0].max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _bwd_log_softmax(g, xs, out, attrs):
    return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)


def _fwd_mean(xs, attrs):
    return xs[0].mean(axis=attrs["axis"])


def _bwd_mean(g, xs, out, attrs):
    ax = attrs["axis"]
    n = xs[0].shape[ax]
    return (np.broadcast_to(np.expand_dims(g, ax), xs[0].shape) / n,)


def _fwd_sum(xs, attrs):
    ax = attrs.get("axis")
    return np.array(xs[0].sum()) if ax is None else xs[0].sum(axis=ax)


def _bwd_sum(g, xs, out, attrs):
    ax = attrs.get("axis")
    if ax is None:
        return (np.full(xs[0].shape, g.reshape(-1)[0]),)
    return (np.broadcast_to(np.expand_dims(g, ax), xs[0].shape).copy(),)


def _fwd_concat(xs, attrs):
    ax = attrs["axis"]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(p != q for k, (p, q) in enumerate(zip(ref, x.shape))
                                     if k != ax % len(ref)):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} differ off axis {ax}")
    return np.concatenate(xs, axis=ax)


def _bwd_concat(g, xs, out, attrs):
    cuts = np.cumsum([x.shape[attrs["axis"]] for x in xs])[:-1]
    return tuple(np.split(g, cuts, axis=attrs["axis"]))


def _fwd_reshape(xs, attrs):
    try:
        return xs[0].reshape(attrs["shape"])
    except ValueError:
        raise ShapeError(f"reshape: cannot view {xs[0].shape} as {attrs['shape']}") from None


def _fwd_take(xs, attrs):
    return np.take(xs[0], attrs["indices"], axis=attrs["axis"])


def _bwd_take(g, xs, out, attrs):
    ax = attrs["axis"] % xs[0].ndim
    idx = np.asarray(attrs["indices"])
    gx = np.zeros_like(xs[0])
    # move the gathered axes to the front so np.add.at can scatter along axis 0
    gm = np.moveaxis(g, tuple(range(ax, ax + idx.ndim)), tuple(range(idx.ndim)))
    np.add.at(np.moveaxis(gx, ax, 0), idx, gm)
    return (gx,)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


FORWARD_RULES: dict[str, Callable] = {
    "matmul": _fwd_matmul,
    "add": _fwd_add,
    "mul": _fwd_mul,
    "scale": lambda xs, at: xs[0] * at["c"],
    "relu": lambda xs, at: np.maximum(xs[0], 0.0),
    "sigmoid": lambda xs, at: _sigmoid(xs[0]),
    "softmax": _fwd_softmax,
    "log_softmax": _fwd_log_softmax,
    "mean": _fwd_mean,
    "sum": _fwd_sum,
    "concat": _fwd_concat,
    "reshape": _fwd_reshape,
    "transpose": lambda xs, at: np.swapaxes(xs[0], -1, -2),
    "take": _fwd_take,
    "sin": lambda xs, at: np.sin(xs[0]),
    "cos": lambda xs, at: np.cos(xs[0]),
    "exp": lambda xs, at: np.exp(xs[0]),
    "log": lambda xs, at: np.log(xs[0]),
}

# Each rule maps (grad_out, input arrays, output array, attrs) to one
# gradient per input.  Tests swap entries here to prove the gradient
# checker notices a broken rule.
BACKWARD_RULES: dict[str, Callable] = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "mul": _bwd_mul,
    "scale": lambda g, xs, out, at: (g * at["c"],),
    "relu": lambda g, xs, out, at: (g * (xs[0] > 0),),
    "sigmoid": lambda g, xs, out, at: (g * out * (1.0 - out),),
    "softmax": _bwd_softmax,
    "log_softmax": _bwd_log_softmax,
    "mean": _bwd_mean,
    "sum": _bwd_sum,
    "concat": _bwd_concat,
    "reshape": lambda g, xs, out, at: (g.reshape(xs[0].shape),),
    "transpose": lambda g, xs, out, at: (np.swapaxes(g, -1, -2),),
    "take": _bwd_take,
    "sin": lambda g, xs, out, at: (g * np.cos(xs[0]),),
    "cos": lambda g, xs, out, at: (-g * np.sin(xs[0]),),
    "exp": lambda g, xs, out, at: (g * out,),
    "log": lambda g, xs, out, at: (g / xs[0],),
}


def tensor_op(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """Apply primitive ``kind`` and record it on the active tape if needed."""
    try:
        fwd = FORWARD_RULES[kind]
    except KeyError:
        raise ValueError(f"unknown tensor op {kind!r}") from None
    xs = tuple(t.data for t in inputs)
    with np.errstate(all="ignore"):
        out = np.asarray(fwd(xs, attrs), dtype=np.float64)
    if not np.isfinite(out).all():
        raise NumericFault(f"{kind}: non-finite output for input shapes "
                           f"{[x.shape for x in xs]}")
    result = Tensor.__new__(Tensor)
    result.data = out.reshape(1) if out.ndim == 0 else out
    result.grad = None
    result.requires_grad = False
    result.name = None
    result.node_id = None
    result._tape = None

    tape = Tape.current()
    if tape is not None:
        ids = tuple(tape._node_of(t) for t in inputs)
        if any(i is not None for i in ids):
            nid = len(tape.nodes)
            tape.nodes.append(Node(nid, kind, ids, xs, out, attrs))
            result.node_id = nid
            result._tape = tape
    return result


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Returns a gradient for every tensor in ``params`` (default: every leaf the
    tape saw), zero where the loss does not depend on it.  Each parameter's
    ``.grad`` is set to the same array.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    params = tape.leaves() if params is None else list(params)
    grads: dict[int, np.ndarray] = {}
    if loss._tape is tape and loss.node_id is not None:
        grads[loss.node_id] = np.ones_like(loss.data).reshape(loss.data.shape)
    for node in reversed(tape.nodes):
        if node.kind == "leaf":
            continue
        g = grads.pop(node.id, None)
        if g is None:
            continue
        in_grads = BACKWARD_RULES[node.kind](g, node.input_data, node.output, node.attrs)
        for nid, ig in zip(node.inputs, in_grads):
            if nid is None or ig is None:
                continue
            if nid in grads:
                grads[nid] = grads[nid] + ig
            else:
                grads[nid] = np.array(ig, dtype=np.float64)
    result = {}
    for p in params:
        nid = tape.leaf_id(p)
        g = grads.get(nid) if nid is not None else None
        p.grad = np.zeros_like(p.data) if g is None else g.reshape(p.shape)
        result[p] = p.grad
    return result


# ---------------------------------------------------------------------------
# public op wrappers


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return tensor_op("matmul", a, b)


def add(a: Tensor, b: Tensor) -> Tensor:
    return tensor_op("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return tensor_op("add", a, tensor_op("scale", b, c=-1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return tensor_op("mul", a, b)


def scale(a: Tensor, c: float) -> Tensor:
    return tensor_op("scale", a, c=float(c))


def relu(a: Tensor) -> Tensor:
    return tensor_op("relu", a)


def sigmoid(a: Tensor) -> Tensor:
    return tensor_op("sigmoid", a)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    return tensor_op("softmax", a)


def log_softmax(a: Tensor) -> Tensor:
    return tensor_op("log_softmax", a)


def mean(a: Tensor, axis: int) -> Tensor:
    return tensor_op("mean", a, axis=axis)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    return tensor_op("sum", a, axis=axis)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    return tensor_op("concat", *tensors, axis=axis)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return tensor_op("reshape", a, shape=tuple(shape))


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    return tensor_op("transpose", a)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; ``indices`` may be multi-dimensional."""
    return tensor_op("take", a, indices=np.asarray(indices, dtype=np.intp), axis=axis)


def sin(a: Tensor) -> Tensor:
    return tensor_op("sin", a)


def cos(a: Tensor) -> Tensor:
    return tensor_op("cos", a)


def exp(a: Tensor) -> Tensor:
    return tensor_op("exp", a)


def log(a: Tensor) -> Tensor:
    return tensor_op("log", a)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ValueError("adam_step: params, grads and moments differ in count")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"adam_step: shape mismatch {p.shape} / {g.shape} / {m.shape}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
