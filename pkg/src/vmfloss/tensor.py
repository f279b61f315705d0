"""Dense float64 arrays with tape-based reverse-mode differentiation.

Only the handful of primitives needed by an MLP encoder and the loss heads
are provided.  Shapes are never broadcast implicitly: elementwise binary ops
require equal shapes, except for a 0-d (scalar) operand or a row-vector bias
added to a matrix.  Anything else raises :class:`ShapeError`.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Tape", "ShapeError", "DegenerateInputError",
    "tensor", "constant", "apply_op", "backward", "zero_grad",
    "matmul", "add", "sub", "mul", "div", "neg", "scale", "add_bias",
    "sum", "mean", "dot", "exp", "log", "sqrt", "square", "relu", "cos",
    "arccos", "asinh", "clip", "row_norm", "norm", "l2_normalize",
    "logsumexp", "log_softmax", "take", "replace_at", "expand",
    "repeat_rows", "reshape", "transpose", "row_dot",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class DegenerateInputError(ValueError):
    """Input lies where an operation is undefined (e.g. normalizing zero)."""


class Tensor:
    __slots__ = ("data", "grad", "node_id", "requires_grad", "parents",
                 "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, data={self.data!r})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def apply_op(op: str, data: np.ndarray, parents: Sequence[Tensor],
             backward_fn: Callable[[np.ndarray], Sequence]) -> Tensor:
    """Create the output node of a primitive.

    ``backward_fn`` maps the output gradient to one gradient per parent
    (``None`` for parents that receive nothing).  Nodes whose parents do not
    require gradients are returned as constants and never enter the tape.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out._backward = None
    return out


class Tape:
    """Operations reachable from an output, in topological order."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack = [(output, False)]
        # iterative DFS; deep MLP graphs overflow the recursion limit otherwise
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for p in node.parents:
                if p.requires_grad and p.node_id not in seen:
                    stack.append((p, False))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.parents]

    def backward(self, grad=None) -> None:
        out = self.output
        if grad is None:
            if out.data.size != 1:
                raise ShapeError("backward without explicit grad needs a scalar output")
            grad = np.ones_like(out.data)
        grads = {out.node_id: np.asarray(grad, dtype=np.float64).reshape(out.shape)}
        for node in reversed(self.nodes):
            g = grads.pop(node.node_id, None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node.parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                prev = grads.get(p.node_id)
                grads[p.node_id] = pg if prev is None else prev + pg


def backward(output: Tensor, grad=None) -> None:
    if not output.requires_grad:
        return
    Tape(output).backward(grad)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- helpers

def _is_scalar(t: Tensor) -> bool:
    return t.data.ndim == 0


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    return np.asarray(g.sum()) if _is_scalar(t) and g.ndim else g


# ----------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_same(a, b, "add")
    return apply_op("add", a.data + b.data, (a, b),
                    lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def add_bias(x, bias) -> Tensor:
    """Add a row vector ``bias`` (length d) to every row of ``x`` (m x d)."""
    x, bias = constant(x), constant(bias)
    if x.ndim != 2 or bias.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: {x.shape} + {bias.shape}")
    return apply_op("add_bias", x.data + bias.data, (x, bias),
                    lambda g: (g, g.sum(axis=0)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_same(a, b, "sub")
    return apply_op("sub", a.data - b.data, (a, b),
                    lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def neg(a) -> Tensor:
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_same(a, b, "mul")
    return apply_op("mul", a.data * b.data, (a, b),
                    lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


def scale(x, s) -> Tensor:
    """Scalar-times-tensor; ``s`` must be 0-d."""
    s = constant(s)
    if not _is_scalar(s):
        raise ShapeError(f"scale: factor must be 0-d, got {s.shape}")
    return mul(s, x)


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_same(a, b, "div")
    out = a.data / b.data
    return apply_op("div", out, (a, b),
                    lambda g: (_reduce_to(g / b.data, a),
                               _reduce_to(-g * out / b.data, b)))


def exp(x) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return apply_op("exp", out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    if np.any(x.data <= 0):
        raise DegenerateInputError("log of non-positive value")
    return apply_op("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    out = np.sqrt(x.data)
    return apply_op("sqrt", out, (x,), lambda g: (g * 0.5 / out,))


def square(x) -> Tensor:
    return apply_op("square", x.data ** 2, (x,), lambda g: (2.0 * g * x.data,))


def relu(x) -> Tensor:
    mask = x.data > 0
    return apply_op("relu", x.data * mask, (x,), lambda g: (g * mask,))


def cos(x) -> Tensor:
    return apply_op("cos", np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def arccos(x, eps: float = 1e-7) -> Tensor:
    """arccos with the argument clipped to [-1+eps, 1-eps] (finite slope)."""
    xc = np.clip(x.data, -1.0 + eps, 1.0 - eps)
    inside = (x.data > -1.0 + eps) & (x.data < 1.0 - eps)
    return apply_op("arccos", np.arccos(xc), (x,),
                    lambda g: (-g * inside / np.sqrt(1.0 - xc * xc),))


def asinh(x) -> Tensor:
    # log(|x| + sqrt(x^2+1)) with the sign restored avoids cancellation for x << 0
    a = np.abs(x.data)
    out = np.sign(x.data) * np.log1p(a + a * a / (1.0 + np.sqrt(a * a + 1.0)))
    return apply_op("asinh", out, (x,), lambda g: (g / np.sqrt(x.data ** 2 + 1.0),))


def clip(x, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return apply_op("clip", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ----------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return apply_op("matmul", a.data @ b.data, (a, b),
                    lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(x) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("transpose expects a matrix")
    return apply_op("transpose", x.data.T, (x,), lambda g: (g.T,))


def reshape(x, shape) -> Tensor:
    old = x.shape
    return apply_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def dot(a, b) -> Tensor:
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: {a.shape} . {b.shape}")
    return apply_op("dot", np.dot(a.data, b.data), (a, b),
                    lambda g: (g * b.data, g * a.data))


def row_dot(a, b) -> Tensor:
    """Row-wise inner products of two equally shaped matrices."""
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeError(f"row_dot: {a.shape} . {b.shape}")
    return apply_op("row_dot", np.einsum("ij,ij->i", a.data, b.data), (a, b),
                    lambda g: (g[:, None] * b.data, g[:, None] * a.data))


# ----------------------------------------------------------- reductions

def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return apply_op("sum", x.data.sum(axis=axis), (x,), bw)


def mean(x, axis: int | None = None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis), 1.0 / count)


def norm(v) -> Tensor:
    """Euclidean norm of a vector."""
    if v.ndim != 1:
        raise ShapeError("norm expects a vector; use row_norm for matrices")
    out = np.linalg.norm(v.data)
    if out == 0:
        raise DegenerateInputError("norm of zero vector has no gradient")
    return apply_op("norm", out, (v,), lambda g: (g * v.data / out,))


def row_norm(x) -> Tensor:
    if x.ndim != 2:
        raise ShapeError("row_norm expects a matrix")
    out = np.sqrt(np.einsum("ij,ij->i", x.data, x.data))
    if np.any(out == 0):
        raise DegenerateInputError("zero row has no direction")
    return apply_op("row_norm", out, (x,), lambda g: (g[:, None] * x.data / out[:, None],))


def l2_normalize(v) -> Tensor:
    """Scale a vector (or every row of a matrix) to unit Euclidean length."""
    v = constant(v)
    if v.ndim == 1:
        n = np.linalg.norm(v.data)
        if n == 0:
            raise DegenerateInputError("cannot normalize the zero vector")
        u = v.data / n
        return apply_op("l2_normalize", u, (v,),
                        lambda g: ((g - u * np.dot(g, u)) / n,))
    if v.ndim != 2:
        raise ShapeError("l2_normalize expects a vector or matrix")
    n = np.sqrt(np.einsum("ij,ij->i", v.data, v.data))[:, None]
    if np.any(n == 0):
        raise DegenerateInputError("cannot normalize a zero row")
    u = v.data / n

    def bw(g):
        return ((g - u * np.einsum("ij,ij->i", g, u)[:, None]) / n,)

    return apply_op("l2_normalize", u, (v,), bw)


def logsumexp(x, axis: int = -1) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (np.log(s) + m).squeeze(axis)
    soft = e / s
    return apply_op("logsumexp", out, (x,),
                    lambda g: (np.expand_dims(g, axis) * soft,))


def log_softmax(x) -> Tensor:
    """Log-softmax over the last axis, computed with max subtraction."""
    m = np.max(x.data, axis=-1, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return apply_op("log_softmax", out, (x,),
                    lambda g: (g - soft * g.sum(axis=-1, keepdims=True),))


# ----------------------------------------------------------- indexing

def take(x, index) -> Tensor:
    """Pick ``x[i, index[i]]`` from each row of a matrix."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"take: {x.shape} with index {index.shape}")
    rows = np.arange(x.shape[0])

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, index] = g
        return (gx,)

    return apply_op("take", x.data[rows, index], (x,), bw)


def replace_at(x, index, values) -> Tensor:
    """Copy of ``x`` with ``x[i, index[i]]`` replaced by ``values[i]``."""
    index = np.asarray(index, dtype=np.int64)
    values = constant(values)
    if x.ndim != 2 or values.shape != (x.shape[0],) or index.shape != values.shape:
        raise ShapeError("replace_at: expected matrix, and one index/value per row")
    rows = np.arange(x.shape[0])
    out = x.data.copy()
    out[rows, index] = values.data

    def bw(g):
        gx = g.copy()
        gx[rows, index] = 0.0
        return gx, g[rows, index]

    return apply_op("replace_at", out, (x, values), bw)


def expand(v, axis: int, count: int) -> Tensor:
    """Explicitly tile a vector into a matrix.

    ``axis=1`` turns a length-m vector into an m x count matrix of columns;
    ``axis=0`` stacks ``count`` copies of the vector as rows.
    """
    if v.ndim != 1:
        raise ShapeError("expand expects a vector")
    if axis == 1:
        data = np.repeat(v.data[:, None], count, axis=1)
    elif axis == 0:
        data = np.repeat(v.data[None, :], count, axis=0)
    else:
        raise ValueError("axis must be 0 or 1")
    return apply_op("expand", data, (v,), lambda g: (g.sum(axis=axis),))


def repeat_rows(x, times: int) -> Tensor:
    """Repeat each leading-axis entry ``times`` times consecutively."""
    shape = x.shape
    data = np.repeat(x.data, times, axis=0)

    def bw(g):
        return (g.reshape((shape[0], times) + shape[1:]).sum(axis=1),)

    return apply_op("repeat_rows", data, (x,), bw)
