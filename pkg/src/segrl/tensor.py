"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything trainable in this package runs on DiffTensor. Forward ops record
closures on a Graph (the tape); backward() walks the recorded subgraph in
reverse topological order exactly once per node and accumulates gradients into
leaf tensors created with requires_grad=True.

Conventions:
  * all values are float64; inputs are coerced on construction
  * add/mul/div broadcast like numpy; gradients are summed back to each
    operand's shape
  * matmul requires both operands to be at least 2-D; batch dimensions
    broadcast like numpy matmul
  * softmax and layer_norm act on the last axis only
  * inference mode computes identical forward values but records nothing,
    so no memory is retained and backward is impossible

A training step is expected to call graph.clear() (or reset_graph()) once it
is done with the tape; clearing severs the recorded closures so saved
activations are freed even if user code still holds tensor references.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives incompatible operand shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {self.shapes}")


class GraphModeError(RuntimeError):
    """Raised when backward is requested for an unrecorded computation."""


class Graph:
    """Tape of recorded operations.

    mode is either "training" (ops append records) or "inference" (ops only
    compute values). clear() drops all records and severs the backward
    closures of recorded tensors, freeing saved activations.
    """

    def __init__(self, mode: str = "training"):
        self.mode = mode
        self.nodes: list[tuple[int, str, tuple[int, ...]]] = []
        self._recorded: list["DiffTensor"] = []
        self._next_id = 0

    @property
    def training(self) -> bool:
        return self.mode == "training"

    def next_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def record(self, tensor: "DiffTensor", op: str) -> None:
        parent_ids = tuple(p.node_id for p in tensor._parents)
        self.nodes.append((tensor.node_id, op, parent_ids))
        self._recorded.append(tensor)

    def clear(self) -> None:
        for t in self._recorded:
            t._parents = ()
            t._backward = None
        self.nodes = []
        self._recorded = []


_graph = Graph()


def get_graph() -> Graph:
    return _graph


def reset_graph() -> None:
    _graph.clear()


@contextlib.contextmanager
def use_graph(graph: Graph):
    """Swap in an independent Graph (e.g. for a parallel evaluation)."""
    global _graph
    prev = _graph
    _graph = graph
    try:
        yield graph
    finally:
        _graph = prev


@contextlib.contextmanager
def frozen(params):
    """Treat these leaves as constants: no gradient accumulates into them.

    Keep the context open across both the forward and the backward call;
    accumulation checks requires_grad when backward runs, not when a node
    is recorded.
    """
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, flags):
            p.requires_grad = flag


@contextlib.contextmanager
def inference_mode():
    """Compute forward values without recording; values match training mode bitwise."""
    prev = _graph.mode
    _graph.mode = "inference"
    try:
        yield
    finally:
        _graph.mode = prev


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class DiffTensor:
    """A float64 array plus its slot on the tape.

    Leaves carry requires_grad; results of ops carry backward closures while
    the graph is in training mode and any input requires grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    # keep numpy from consuming us in mixed expressions; reflected ops run instead
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = _graph.next_id()
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data.copy())

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return slice_(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def transpose(self, axes=None):
        return transpose(self, axes)


def parameter(data, name: str) -> DiffTensor:
    """A named trainable leaf."""
    return DiffTensor(data, requires_grad=True, name=name)


def as_tensor(x) -> DiffTensor:
    return x if isinstance(x, DiffTensor) else DiffTensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[DiffTensor],
          backward: Callable[[np.ndarray], tuple]) -> DiffTensor:
    """Wrap an op result; records on the tape only when it can need gradients."""
    out = DiffTensor(data)
    if _graph.training and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        _graph.record(out, op)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------

def add(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None
    return _make(data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None
    return _make(data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None
    return _make(data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None
    return _make(data, "div", (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a) -> DiffTensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


# -- matmul ----------------------------------------------------------------

def matmul(a, b) -> DiffTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = a.data @ b.data
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(data, "matmul", (a, b), backward)


# -- pointwise nonlinearities ------------------------------------------------

def exp(a) -> DiffTensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _make(out_data, "exp", (a,), lambda g: (g * out_data,))


def log(a) -> DiffTensor:
    a = as_tensor(a)
    return _make(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def sqrt(a) -> DiffTensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _make(out_data, "sqrt", (a,), lambda g: (g * 0.5 / out_data,))


def tanh(a) -> DiffTensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _make(out_data, "tanh", (a,), lambda g: (g * (1.0 - out_data * out_data),))


LEAKY_SLOPE = 0.01


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> DiffTensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0.0, 1.0, slope)
    return _make(a.data * factor, "leaky_relu", (a,), lambda g: (g * factor,))


def softplus(a) -> DiffTensor:
    # log(1 + e^x), computed as max(x, 0) + log1p(e^{-|x|}) to avoid overflow
    a = as_tensor(a)
    x = a.data
    z = np.exp(-np.abs(x))
    data = np.maximum(x, 0.0) + np.log1p(z)
    # sigmoid from the same overflow-safe exponential
    sig = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make(data, "softplus", (a,), lambda g: (g * sig,))


# -- reductions --------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape).copy()


def sum_(a, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(data, "sum", (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims: bool = False) -> DiffTensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[x % a.ndim] for x in axes]))
    return _make(data, "mean", (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


# -- structural ops -----------------------------------------------------------

def slice_(a, idx) -> DiffTensor:
    """Basic (view-style) indexing; advanced integer-array indexing is not supported."""
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return (ga,)

    return _make(np.ascontiguousarray(data), "slice", (a,), backward)


def gather(a, indices) -> DiffTensor:
    """Row gather along axis 0. Repeated indices are allowed; their gradient
    contributions accumulate (slice_ would drop duplicates)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError("gather", a.shape, idx.shape)
    data = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.ascontiguousarray(data), "gather", (a,), backward)


def reshape(a, shape) -> DiffTensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(data.copy(), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Iterable[DiffTensor], axis: int = 0) -> DiffTensor:
    parts = [as_tensor(t) for t in tensors]
    if not parts:
        raise ShapeError("concat", ())
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts]) from None
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(data, "concat", parts, backward)


def transpose(a, axes: Sequence[int] | None = None) -> DiffTensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = np.argsort(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    return _make(data, "transpose", (a,),
                 lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def swap_last(a) -> DiffTensor:
    """Transpose the last two axes, keeping batch axes in place."""
    a = as_tensor(a)
    axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    return transpose(a, axes)


# -- normalizers ---------------------------------------------------------------

def softmax(a) -> DiffTensor:
    """Softmax over the last axis; stable under large or -inf logits."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # rows that are all -inf would poison exp
    e = np.exp(x - m)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, "softmax", (a,), backward)


LAYER_NORM_EPS = 1e-12


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> DiffTensor:
    """Normalize the last axis to zero mean, unit variance. No affine part."""
    a = as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    n = x.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _make(xhat, "layer_norm", (a,), backward)


def dropout(a, rate: float, rng: np.random.Generator) -> DiffTensor:
    """Inverted dropout; identity when rate == 0 or in inference mode."""
    a = as_tensor(a)
    if rate <= 0.0 or not _graph.training:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.data * keep, "dropout", (a,), lambda g: (g * keep,))


# -- linear algebra -------------------------------------------------------------

def cholesky(a) -> DiffTensor:
    """Lower Cholesky factor of an SPD matrix (batched over leading axes).

    Backward uses the triangular-projection identity: with S = L^T Ḡ and
    P = tril(S) - diag(S)/2, the input gradient is sym(L^{-T} P L^{-1}).
    """
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError("cholesky", a.shape)
    L = np.linalg.cholesky(a.data)

    def backward(g):
        s = np.swapaxes(L, -1, -2) @ g
        p = np.tril(s)
        d = np.arange(a.shape[-1])
        p[..., d, d] *= 0.5
        lt = np.swapaxes(L, -1, -2)
        tmp = np.linalg.solve(lt, p)                       # L^{-T} P
        sig = np.swapaxes(np.linalg.solve(lt, np.swapaxes(tmp, -1, -2)), -1, -2)
        return ((sig + np.swapaxes(sig, -1, -2)) / 2.0,)

    return _make(L, "cholesky", (a,), backward)


def scatter_fixed(values, out_shape: tuple[int, ...], index) -> DiffTensor:
    """Place `values` at a fixed fancy index of a zero tensor of out_shape.

    The index must select each destination slot at most once (no accumulation),
    which holds for the triangular layouts this package builds.
    """
    values = as_tensor(values)
    data = np.zeros(out_shape)
    data[index] = values.data
    return _make(data, "scatter", (values,), lambda g: (np.ascontiguousarray(g[index]),))


# -- backward -------------------------------------------------------------------

def backward(loss: DiffTensor) -> None:
    """Reverse-accumulate d(loss)/d(leaf) into .grad of reachable leaves.

    loss must hold a single element. Each reachable node's closure runs
    exactly once; unreachable tensors keep grad = None.
    """
    if loss.data.size != 1:
        raise ShapeError("backward", loss.shape)
    if not loss.requires_grad:
        raise GraphModeError(
            "backward on a tensor with no recorded graph "
            "(inference mode, or no input requires grad)")

    topo: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf: accumulate into .grad
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg.copy() if isinstance(pg, np.ndarray) else np.asarray(pg)
