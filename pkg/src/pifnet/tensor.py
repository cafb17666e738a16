"""Dense float64 tensors with a small reverse-mode autodiff tape.

Every operation returns a new :class:`Tensor`; the only in-place mutation is
gradient accumulation into leaf tensors during :func:`backward` (and the
optimizer update, which owns its parameters exclusively).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import GraphError, NumericalError, ShapeError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def check_finite(arr: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite value in {what}")
    return arr


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot.

    Activations use the axis order (batch, channels, depth, height, width);
    convolution kernels use (out_channels, in_channels, kd, kh, kw).
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        self.data = check_finite(arr, name or "tensor")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Wrap the result of an operation and record it on the tape."""
        out = cls.__new__(cls)
        out.data = check_finite(np.asarray(data, dtype=DTYPE), "operation result")
        out.grad = None
        out.name = None
        out._consumed = False
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("add", elementwise("mul", self, -1.0), other)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", self, other)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __neg__(self):
        return elementwise("mul", self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise arithmetic

_ELEMENTWISE = {
    "add": (np.add, lambda g, a, b: (g, g)),
    "sub": (np.subtract, lambda g, a, b: (g, -g)),
    "mul": (np.multiply, lambda g, a, b: (g * b, g * a)),
    "div": (np.divide, lambda g, a, b: (g / b, -g * a / (b * b))),
}


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Apply a binary elementwise operation tagged ``add``/``sub``/``mul``/``div``.

    ``b`` may be a tensor of identical shape or a scalar (python number or
    single-element tensor), which is broadcast.
    """
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = as_tensor(a)
    b_is_tensor = isinstance(b, Tensor)
    b = as_tensor(b)
    scalar_b = b.data.ndim == 0 or (b.size == 1 and b.shape != a.shape)
    if not scalar_b and b.shape != a.shape:
        raise ShapeError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    fwd, bwd = _ELEMENTWISE[op]
    bval = b.data.reshape(()) if scalar_b else b.data
    out = fwd(a.data, bval)

    def backward(g):
        ga, gb = bwd(g, a.data, bval)
        if not b_is_tensor:
            return (ga,)
        if scalar_b:
            gb = np.sum(gb).reshape(b.shape)
        return ga, gb

    return Tensor.from_op(out, (a, b) if b_is_tensor else (a,), backward)


def add(a, b):
    return elementwise("add", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsum(a: Tensor) -> Tensor:
    return Tensor.from_op(a.data.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return Tensor.from_op(a.data.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Tensor.from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros(a.shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor.from_op(a.data[index], (a,), backward)


def crop(a: Tensor, starts: Sequence[int], size: int | Sequence[int]) -> Tensor:
    """Spatial sub-volume ``[start, start+size)`` on the last three axes."""
    sizes = (size,) * 3 if isinstance(size, int) else tuple(size)
    idx = (Ellipsis,) + tuple(slice(s, s + n) for s, n in zip(starts, sizes))

    def backward(g):
        full = np.zeros(a.shape)
        full[idx] = g
        return (full,)

    return Tensor.from_op(a.data[idx], (a,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor.from_op(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return Tensor.from_op(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# ---------------------------------------------------------------------------
# reverse pass

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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf tensor with ``requires_grad`` reachable from ``loss``.

    Gradients accumulate into existing ``.grad`` slots. The recorded graph is
    released afterwards; a second call on the same loss raises GraphError.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("graph already consumed by a previous backward call")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")

    order = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None and node.requires_grad:
                check_finite(g, "gradient")
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._consumed = True


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# random numbers

class Rng:
    """Seeded Philox-4x64 counter-based generator.

    Draw sequences depend only on the seed, not on platform or process
    state. :meth:`child` derives independent streams for sub-tasks.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(self.seed)))

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def child(self, *key: int) -> "Rng":
        seq = np.random.SeedSequence([self.seed, *[int(k) for k in key]])
        return Rng(int(seq.generate_state(1, np.uint64)[0]))

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
