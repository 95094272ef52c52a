"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays. Every operation records its parents and a
closure that pushes the output gradient back to them; ``Tensor.backward``
walks the graph in reverse topological order.

Two precision modes exist: float64 (gradient checks, oracles, deterministic
runs) and float32 (faster training). The mode is process-global and set with
:func:`set_precision` or the :func:`precision` context manager.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

_DTYPES = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64


class AutodiffError(RuntimeError):
    """Raised for misuse of the graph: unbound inputs, bad roots, bad order."""


def set_precision(mode: str) -> None:
    global _dtype
    if mode not in _DTYPES:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}, got {mode!r}")
    _dtype = _DTYPES[mode]


def get_dtype():
    return _dtype


@contextlib.contextmanager
def precision(mode: str):
    """Temporarily switch the global precision mode."""
    old = "f64" if _dtype == np.float64 else "f32"
    set_precision(mode)
    try:
        yield
    finally:
        set_precision(old)


def _check_finite(arr: np.ndarray, op: str) -> None:
    # a finite sum implies finite entries; fall back to the full scan otherwise
    if np.isfinite(arr.sum()):
        return
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite value produced by {op}")


class Tensor:
    """A node in the computation graph.

    ``data`` holds the value, ``grad`` the accumulated derivative of the
    current backward root with respect to this node.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 op: str = "leaf", parents: Sequence["Tensor"] = ()):
        arr = np.asarray(data, dtype=_dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self.op = op
        self._parents = tuple(parents)
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise AutodiffError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # -- graph construction helpers ---------------------------------------

    def _make(self, value: np.ndarray, op: str, parents: Sequence["Tensor"]) -> "Tensor":
        _check_finite(value, op)
        return Tensor(value, op=op, parents=parents)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, -as_tensor(other))

    def __rsub__(self, other):
        return add(as_tensor(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, rows):
        return take_rows(self, rows)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``node.grad`` for every ancestor.

        All gradient accumulators reachable from this root are reset first,
        so calling backward twice gives the same result, not twice the result.
        """
        if self.data.size != 1:
            raise AutodiffError(f"backward root must be scalar, got shape {self.shape}")
        order = _topological(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.requires_grad and node.grad is not None:
                node._backward()
        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(node: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add ``g`` into ``node.grad``. ``owned`` marks ``g`` as a fresh array
    that may be adopted without copying."""
    # constants never receive gradients
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g if owned else np.array(g, dtype=node.data.dtype)
    else:
        node.grad += g


# -- primitives ---------------------------------------------------------------

def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. a bias row over a batch)."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError as exc:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from exc
    out = a._make(value, "add", (a, b))

    def backward():
        _accumulate(a, _unbroadcast(out.grad, a.shape))
        _accumulate(b, _unbroadcast(out.grad, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        value = a.data * b.data
    except ValueError as exc:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from exc
    out = a._make(value, "mul", (a, b))

    def backward():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.shape), owned=True)
        _accumulate(b, _unbroadcast(out.grad * a.data, b.shape), owned=True)

    out._backward = backward
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div: zero in denominator")
    value = a.data / b.data
    out = a._make(value, "div", (a, b))

    def backward():
        _accumulate(a, _unbroadcast(out.grad / b.data, a.shape), owned=True)
        _accumulate(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape), owned=True)

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a._make(a.data @ b.data, "matmul", (a, b))

    def backward():
        if a.requires_grad:
            _accumulate(a, out.grad @ b.data.T, owned=True)
        if b.requires_grad:
            _accumulate(b, a.data.T @ out.grad, owned=True)

    out._backward = backward
    return out


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    kind = x.data.dtype.type
    # 1 where x > 0, slope elsewhere; arithmetic is much faster than np.where here
    scale = kind(slope) + kind(1.0 - slope) * (x.data > 0)
    out = x._make(x.data * scale, "leaky_relu", (x,))

    def backward():
        _accumulate(x, out.grad * scale, owned=True)

    out._backward = backward
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    value = np.tanh(x.data)
    out = x._make(value, "tanh", (x,))

    def backward():
        _accumulate(x, out.grad * (1.0 - value * value), owned=True)

    out._backward = backward
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    pos = x.data >= 0
    value = np.empty_like(x.data)
    value[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    value[~pos] = ex / (1.0 + ex)
    out = x._make(value, "sigmoid", (x,))

    def backward():
        _accumulate(x, out.grad * value * (1.0 - value), owned=True)

    out._backward = backward
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input (clamp probabilities upstream)")
    out = x._make(np.log(x.data), "log", (x,))

    def backward():
        _accumulate(x, out.grad / x.data, owned=True)

    out._backward = backward
    return out


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; the gradient is zero where the clamp is active."""
    x = as_tensor(x)
    value = np.clip(x.data, lo, hi)
    inside = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)
    out = x._make(value, "clip", (x,))

    def backward():
        _accumulate(x, out.grad * inside, owned=True)

    out._backward = backward
    return out


def mean(x) -> Tensor:
    """Mean over every element (the batch mean for a column of losses)."""
    x = as_tensor(x)
    count = x.data.size
    out = x._make(np.asarray(x.data.sum() / count), "mean", (x,))

    def backward():
        _accumulate(x, np.full_like(x.data, out.grad.reshape(()) / count), owned=True)

    out._backward = backward
    return out


def sum_all(x) -> Tensor:
    x = as_tensor(x)
    out = x._make(np.asarray(x.data.sum()), "sum", (x,))

    def backward():
        _accumulate(x, np.full_like(x.data, out.grad.reshape(())), owned=True)

    out._backward = backward
    return out


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.data.size:
        raise ValueError(f"reshape: cannot view {x.shape} as {shape}")
    out = x._make(x.data.reshape(shape), "reshape", (x,))

    def backward():
        _accumulate(x, out.grad.reshape(x.shape))

    out._backward = backward
    return out


def transpose(x) -> Tensor:
    x = as_tensor(x)
    out = x._make(x.data.T.copy(), "transpose", (x,))

    def backward():
        _accumulate(x, out.grad.T)

    out._backward = backward
    return out


def take_rows(x, rows) -> Tensor:
    """Select rows along axis 0 with a slice or integer index array."""
    x = as_tensor(x)
    value = x.data[rows]
    out = x._make(np.array(value), "take_rows", (x,))

    def backward():
        g = np.zeros_like(x.data)
        if isinstance(rows, slice):
            g[rows] += out.grad
        else:
            np.add.at(g, rows, out.grad)
        _accumulate(x, g, owned=True)

    out._backward = backward
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    value = np.concatenate([p.data for p in parts], axis=0)
    out = parts[0]._make(value, "concat", parts)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(p, out.grad[lo:hi])

    out._backward = backward
    return out


# -- named-graph interface ------------------------------------------------------

class Graph:
    """A reusable computation with named inputs.

    ``build`` receives keyword arguments (one Tensor per name in ``inputs``)
    and returns the root Tensor. ``forward`` binds arrays to the names and
    evaluates; ``backward`` returns the root's gradient for each name listed
    in ``params`` (all inputs if ``params`` is None).

    >>> g = Graph(lambda x: x * x, inputs=["x"])
    >>> float(g.forward({"x": 3.0}).data)
    9.0
    >>> float(g.backward()["x"])
    6.0
    """

    def __init__(self, build: Callable[..., Tensor], inputs: Iterable[str],
                 params: Iterable[str] | None = None):
        self.build = build
        self.inputs = list(inputs)
        self.params = list(self.inputs if params is None else params)
        unknown = set(self.params) - set(self.inputs)
        if unknown:
            raise AutodiffError(f"params not among inputs: {sorted(unknown)}")
        self._leaves: dict[str, Tensor] | None = None
        self._root: Tensor | None = None

    def forward(self, bindings: Mapping[str, object]) -> Tensor:
        missing = [name for name in self.inputs if name not in bindings]
        if missing:
            raise AutodiffError(f"unbound graph inputs: {missing}")
        leaves = {
            name: Tensor(bindings[name], requires_grad=name in self.params, name=name)
            for name in self.inputs
        }
        self._leaves = leaves
        self._root = self.build(**leaves)
        return self._root

    def backward(self) -> dict[str, np.ndarray]:
        if self._root is None:
            raise AutodiffError("backward called before forward")
        self._root.backward()
        return {
            name: (self._leaves[name].grad if self._leaves[name].grad is not None
                   else np.zeros_like(self._leaves[name].data))
            for name in self.params
        }
