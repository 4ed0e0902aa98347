"""
Dense float64 tensors with reverse-mode differentiation.

Every operation on tensors that require gradients records its parents and a
backward closure mapping the output gradient to one gradient per parent.
`Tensor.backward` walks the recorded graph once in reverse topological order;
only leaf tensors (parameters and inputs created with `requires_grad=True`)
keep their gradients, and those accumulate across calls until `zero_grad`.
"""
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from typing import Optional, Union

import numpy as np
import numpy.typing as npt

from src.errors import ShapeError

Array = npt.NDArray[np.float64]
BackwardFn = Callable[[Array], Sequence[Optional[Array]]]
Operand = Union["Tensor", float, int, np.ndarray]

_grad_enabled: bool = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


def unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def broadcast_shape(op: str, left: tuple[int, ...], right: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(left, right)
    except ValueError:
        raise ShapeError(op, left, right) from None


def as_tensor(value: Operand) -> "Tensor":
    return value if isinstance(value, Tensor) else Tensor(value)


class Tensor:
    """
    A node of the computation graph.

    Attributes:
        data (NDArray): Values, always float64.
        requires_grad (bool): Whether gradients flow into this tensor.
        grad (NDArray | None): Accumulated gradient of a leaf, same shape as `data`.
    """

    def __init__(self, data: npt.ArrayLike, requires_grad: bool = False) -> None:
        self.data: Array = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[Array] = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: Array, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad: Optional[npt.ArrayLike] = None) -> None:
        """
        Populate leaf gradients of this tensor.

        Raises:
            ValueError: When called on a non-scalar tensor without an explicit `grad`.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        ComputationTape.record(self).backward(np.asarray(grad, dtype=np.float64))

    # arithmetic

    def __add__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        broadcast_shape("add", self.shape, other.shape)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        broadcast_shape("sub", self.shape, other.shape)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data - other.data, (self, other),
            lambda g: (unbroadcast(g, a_shape), -unbroadcast(g, b_shape)),
        )

    def __rsub__(self, other: Operand) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        broadcast_shape("mul", self.shape, other.shape)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b, (self, other),
            lambda g: (unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        broadcast_shape("div", self.shape, other.shape)
        a, b = self.data, other.data
        return Tensor.from_op(
            a / b, (self, other),
            lambda g: (unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)),
        )

    def __pow__(self, exponent: float) -> "Tensor":
        a = self.data
        return Tensor.from_op(a ** exponent, (self,), lambda g: (g * exponent * a ** (exponent - 1),))

    def __matmul__(self, other: Operand) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", a.shape, b.shape)
        try:
            out = np.matmul(a, b)
        except ValueError:
            raise ShapeError("matmul", a.shape, b.shape) from None

        def backward(g: Array) -> tuple[Array, Array]:
            return (
                unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape),
                unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape),
            )

        return Tensor.from_op(out, (self, other), backward)

    # shape

    def __getitem__(self, index) -> "Tensor":
        shape = self.shape

        def backward(g: Array) -> tuple[Array]:
            full = np.zeros(shape)
            np.add.at(full, index, g)
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward)

    def reshape(self, *shape: int) -> "Tensor":
        original = self.shape
        return Tensor.from_op(self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),))

    def transpose(self, *axes: int) -> "Tensor":
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = tuple(np.argsort(axes))
        return Tensor.from_op(np.transpose(self.data, axes), (self,), lambda g: (np.transpose(g, inverse),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # reductions

    def sum(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g: Array) -> tuple[Array]:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor.from_op(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else int(np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / max(count, 1))

    # elementwise

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor.from_op(np.log(a), (self,), lambda g: (g / a,))

    def sigmoid(self) -> "Tensor":
        out = 0.5 * (1.0 + np.tanh(0.5 * self.data))
        return Tensor.from_op(out, (self,), lambda g: (g * out * (1.0 - out),))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor.from_op(out, (self,), lambda g: (g * (1.0 - out * out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor.from_op(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        scale = np.where(self.data > 0, 1.0, slope)
        return Tensor.from_op(self.data * scale, (self,), lambda g: (g * scale,))

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g: Array) -> tuple[Array]:
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return Tensor.from_op(out, (self,), backward)


class ComputationTape:
    """
    Recorded operations reachable from a root, in topological order.

    Backward visits each node exactly once, from the root towards the leaves,
    summing the gradients of nodes used more than once before propagating them.
    """

    def __init__(self, order: list[Tensor]) -> None:
        self.order = order

    @classmethod
    def record(cls, root: Tensor) -> "ComputationTape":
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.order)

    def backward(self, grad: Array) -> None:
        root = self.order[-1]
        if not root.requires_grad:
            return
        pending: dict[int, Array] = {id(root): np.broadcast_to(grad, root.shape).astype(np.float64)}
        for node in reversed(self.order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
