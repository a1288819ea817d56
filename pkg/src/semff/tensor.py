"""Minimal reverse-mode autodiff on dense float32 buffers.

Primitives cover exactly what the embedding network and the navigation agent
need: affine maps, gated-recurrence nonlinearities, attention softmax,
normalization, and the scalar reductions the losses are built from. Forward
values are plain numpy; when a Tape is active, each primitive records a
backward closure so gradients can be replayed in reverse order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

# Sums longer than this accumulate in float64 before casting back.
_LONG_SUM = 4096


class Tensor:
    """Dense row-major buffer with an optional gradient slot.

    Float32 by default; float64 is permitted only so the finite-difference
    oracle can evaluate clones of a graph at higher precision.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Small conveniences; model code mostly calls the named primitives.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _wrap(arr: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = arr
    out.requires_grad = False
    out.grad = None
    return out


class Tape:
    """Ordered record of primitive applications for one backward replay.

    Nodes are appended in execution order, which is a topological order of
    the graph, so a single reversed sweep visits each node exactly once.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable]] = []
        self._outputs: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tapes must nest"

    def _record(self, out: Tensor, bwd: Callable) -> None:
        self._nodes.append((out, bwd))
        self._outputs.add(id(out))

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs: Sequence[Tensor], bwd: Callable) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, bwd)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Replay ``tape`` in reverse, writing d(loss)/d(t) into each
    requires_grad tensor's ``grad`` slot (additively across calls)."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if id(loss) not in tape._outputs:
        raise ValueError("loss tensor was not recorded on this tape")

    # Traversal state is local so repeated backward calls accumulate cleanly.
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}

    def acc(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = g
            holders[key] = t

    for out, bwd in reversed(tape._nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        bwd(g, acc)

    for key, g in grads.items():
        t = holders[key]
        if t.grad is None:
            t.grad = np.array(g, dtype=t.data.dtype)
        else:
            t.grad = t.grad + g.astype(t.data.dtype)


def clear_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _shape_err(op: str, *tensors: Tensor) -> ShapeError:
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_err("add", a, b)
    out = _wrap(a.data + b.data)

    def bwd(g, acc):
        acc(a, g)
        acc(b, g)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_err("sub", a, b)
    out = _wrap(a.data - b.data)

    def bwd(g, acc):
        acc(a, g)
        acc(b, -g)

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = _wrap(-a.data)

    def bwd(g, acc):
        acc(a, -g)

    return _record(out, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise _shape_err("mul", a, b)
    out = _wrap(a.data * b.data)

    def bwd(g, acc):
        acc(a, g * b.data)
        acc(b, g * a.data)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    out = _wrap(a.data * a.data.dtype.type(c))

    def bwd(g, acc):
        acc(a, g * c)

    return _record(out, (a,), bwd)


def add_const(a: Tensor, c: float) -> Tensor:
    out = _wrap(a.data + a.data.dtype.type(c))

    def bwd(g, acc):
        acc(a, g)

    return _record(out, (a,), bwd)


def rsub_const(a: Tensor, c: float) -> Tensor:
    """c - a, elementwise."""
    out = _wrap(a.data.dtype.type(c) - a.data)

    def bwd(g, acc):
        acc(a, -g)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for the (2d,2d), (2d,1d) and (1d,2d) cases."""
    an, bn = a.data.ndim, b.data.ndim
    if an == 0 or bn == 0 or an > 2 or bn > 2 or (an == 1 and bn == 1):
        raise _shape_err("matmul", a, b)
    if a.shape[-1] != b.shape[0]:
        raise _shape_err("matmul", a, b)
    out = _wrap(a.data @ b.data)

    def bwd(g, acc):
        if an == 2 and bn == 2:
            acc(a, g @ b.data.T)
            acc(b, a.data.T @ g)
        elif an == 2 and bn == 1:
            acc(a, np.outer(g, b.data))
            acc(b, a.data.T @ g)
        else:  # 1d @ 2d
            acc(a, b.data @ g)
            acc(b, np.outer(a.data, g))

    return _record(out, (a, b), bwd)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or a.shape != b.shape:
        raise _shape_err("dot", a, b)
    out = _wrap(np.dot(a.data, b.data).reshape(()))

    def bwd(g, acc):
        acc(a, g * b.data)
        acc(b, g * a.data)

    return _record(out, (a, b), bwd)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = _wrap(y)

    def bwd(g, acc):
        acc(a, g * (1.0 - y * y))

    return _record(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = _wrap(y)

    def bwd(g, acc):
        acc(a, g * y * (1.0 - y))

    return _record(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = _wrap(np.log(a.data))

    def bwd(g, acc):
        acc(a, g / a.data)

    return _record(out, (a,), bwd)


def square(a: Tensor) -> Tensor:
    out = _wrap(a.data * a.data)

    def bwd(g, acc):
        acc(a, 2.0 * g * a.data)

    return _record(out, (a,), bwd)


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); subgradient 0 at the tie point."""
    out = _wrap(np.maximum(a.data, a.data.dtype.type(c)))

    def bwd(g, acc):
        acc(a, g * (a.data > c))

    return _record(out, (a,), bwd)


def _softmax_array(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (vector, or row-wise on a matrix)."""
    if a.data.ndim not in (1, 2):
        raise _shape_err("softmax", a)
    y = _softmax_array(a.data)
    out = _wrap(y)

    def bwd(g, acc):
        s = (g * y).sum(axis=-1, keepdims=True)
        acc(a, y * (g - s))

    return _record(out, (a,), bwd)


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2):
        raise _shape_err("log_softmax", a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = _wrap(y)

    def bwd(g, acc):
        p = np.exp(y)
        acc(a, g - p * g.sum(axis=-1, keepdims=True))

    return _record(out, (a,), bwd)


def l2_normalize(a: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise _shape_err("l2_normalize", a)
    norm = float(np.linalg.norm(a.data.astype(np.float64)))
    if norm < 1e-12:
        raise NumericError("l2_normalize: input norm below 1e-12")
    y = a.data / a.data.dtype.type(norm)
    out = _wrap(y)

    def bwd(g, acc):
        acc(a, (g - y * np.dot(y, g)) / norm)

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors or any(t.data.ndim != 1 for t in tensors):
        raise ShapeError("concat: needs a non-empty sequence of vectors")
    out = _wrap(np.concatenate([t.data for t in tensors]))
    sizes = [t.size for t in tensors]

    def bwd(g, acc):
        off = 0
        for t, n in zip(tensors, sizes):
            acc(t, g[off:off + n])
            off += n

    return _record(out, tensors, bwd)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into the rows of a matrix."""
    tensors = list(tensors)
    if not tensors or any(t.data.ndim != 1 for t in tensors):
        raise ShapeError("stack: needs a non-empty sequence of vectors")
    n = tensors[0].size
    if any(t.size != n for t in tensors):
        raise _shape_err("stack", *tensors)
    out = _wrap(np.stack([t.data for t in tensors]))

    def bwd(g, acc):
        for i, t in enumerate(tensors):
            acc(t, g[i])

    return _record(out, tensors, bwd)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise _shape_err("concat_cols", a, b)
    out = _wrap(np.concatenate([a.data, b.data], axis=1))
    na = a.shape[1]

    def bwd(g, acc):
        acc(a, g[:, :na])
        acc(b, g[:, na:])

    return _record(out, (a, b), bwd)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix (bias over a batch)."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise _shape_err("add_rowvec", m, v)
    out = _wrap(m.data + v.data)

    def bwd(g, acc):
        acc(m, g)
        if g.shape[0] > _LONG_SUM:
            acc(v, g.sum(axis=0, dtype=np.float64).astype(g.dtype))
        else:
            acc(v, g.sum(axis=0))

    return _record(out, (m, v), bwd)


def pick_rows(m: Tensor, indices: np.ndarray) -> Tensor:
    """Select one column entry per row: out[i] = m[i, indices[i]]."""
    if m.data.ndim != 2:
        raise _shape_err("pick_rows", m)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != m.shape[0]:
        raise ShapeError(
            f"pick_rows: need one index per row, got {idx.shape} for {m.shape}")
    rows = np.arange(m.shape[0])
    out = _wrap(m.data[rows, idx])

    def bwd(g, acc):
        gm = np.zeros_like(m.data)
        gm[rows, idx] = g
        acc(m, gm)

    return _record(out, (m,), bwd)


def flatten(a: Tensor) -> Tensor:
    out = _wrap(a.data.reshape(-1))
    shp = a.shape

    def bwd(g, acc):
        acc(a, g.reshape(shp))

    return _record(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    if a.size > _LONG_SUM:
        val = a.data.sum(dtype=np.float64).astype(a.data.dtype)
    else:
        val = a.data.sum()
    out = _wrap(np.asarray(val, dtype=a.data.dtype).reshape(()))

    def bwd(g, acc):
        acc(a, np.full_like(a.data, g))

    return _record(out, (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.size
    if n > _LONG_SUM:
        val = (a.data.sum(dtype=np.float64) / n).astype(a.data.dtype)
    else:
        val = a.data.mean()
    out = _wrap(np.asarray(val, dtype=a.data.dtype).reshape(()))

    def bwd(g, acc):
        acc(a, np.full_like(a.data, g / n))

    return _record(out, (a,), bwd)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """cos(a, b) composed from l2_normalize and dot (fully differentiable)."""
    return dot(l2_normalize(a), l2_normalize(b))


# Registry: primitive id -> callable. `concat` and `stack` are variadic and
# take the input list whole.
PRIMITIVES: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "scale": scale,
    "add_const": add_const,
    "rsub_const": rsub_const,
    "matmul": matmul,
    "dot": dot,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "log": log,
    "square": square,
    "maximum_const": maximum_const,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "l2_normalize": l2_normalize,
    "concat": concat,
    "stack": stack,
    "concat_cols": concat_cols,
    "add_rowvec": add_rowvec,
    "pick_rows": pick_rows,
    "flatten": flatten,
    "sum": sum_all,
    "mean": mean_all,
}

_VARIADIC = {"concat", "stack"}


def apply_primitive(op: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch a primitive by id; shape errors name the primitive."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    if op in _VARIADIC:
        return fn(list(inputs), **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[[list[Tensor]], Tensor],
               inputs: Sequence[Tensor],
               step: float = 1e-3) -> float:
    """Max relative error between backward gradients and central differences.

    ``fn`` must map the input list to a scalar Tensor. Both passes run on
    float64 clones so the oracle's own noise stays far below the tolerances
    being checked.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    clones = [Tensor(t.data.astype(np.float64), requires_grad=True,
                     dtype=np.float64) for t in inputs]

    with Tape() as tape:
        out = fn(clones)
    if out.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar output, got {out.shape}")
    clear_grads(clones)
    backward(tape, out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data)
                for t in clones]

    for t in clones:
        t.requires_grad = False

    max_err = 0.0
    for t, a in zip(clones, analytic):
        flat = t.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(clones).item()
            flat[i] = orig - step
            fm = fn(clones).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            denom = max(abs(aflat[i]), abs(numeric), 1e-6)
            max_err = max(max_err, abs(aflat[i] - numeric) / denom)
    return max_err


# ---------------------------------------------------------------------------
# Parameter initialization
# ---------------------------------------------------------------------------

def glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> Tensor:
    """Glorot-uniform weight tensor; fans taken from (in, out) layout."""
    fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(np.float32),
                  requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def assert_finite(t: Tensor, context: str) -> None:
    if not np.isfinite(t.data).all():
        raise NumericError(f"non-finite value in {context}")
