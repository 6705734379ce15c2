""" The Tensor type and reverse-mode automatic differentiation.

A Tensor wraps a numpy buffer. Operations on tensors that require gradients record
  their parents and a backward closure; ``Tensor.backward`` walks that graph in reverse
  topological order. Only leaves keep their gradient.
"""
from contextlib import contextmanager
from enum import Enum
from types import SimpleNamespace
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import DimensionError, NonFiniteError, PrecisionError, UsageError
from .memory import track

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]
Axis = Optional[Union[int, Tuple[int, ...]]]
# Maps the gradient of an op's output to the gradients of its parents (None: no gradient).
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Precision(Enum):
    """Floating point precision of a computation graph."""

    SINGLE = "single"
    DOUBLE = "double"

    @property
    def dtype(self) -> np.dtype:
        """The numpy dtype of buffers created under this precision."""
        return np.dtype(np.float32 if self is Precision.SINGLE else np.float64)


_STATE = SimpleNamespace(precision=Precision.SINGLE, grad_enabled=True)


def get_precision() -> Precision:
    """The precision new tensors are created with."""
    return _STATE.precision


@contextmanager
def precision(mode: Union[Precision, str]) -> Iterator[Precision]:
    """Context manager setting the precision of tensors created inside it.

    Examples:
        >>> with precision("double"):
        ...     x = Tensor([1.0, 2.0])
        >>> assert x.dtype == np.float64
    """
    previous = _STATE.precision
    _STATE.precision = Precision(mode)
    try:
        yield _STATE.precision
    finally:
        _STATE.precision = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Context manager disabling graph recording."""
    previous = _STATE.grad_enabled
    _STATE.grad_enabled = False
    try:
        yield
    finally:
        _STATE.grad_enabled = previous


def is_grad_enabled() -> bool:
    """Whether operations currently record a graph."""
    return _STATE.grad_enabled


class Tensor:
    """An n-dimensional array with an optional gradient.

    Args:
        data: Anything ``numpy.asarray`` accepts.
        requires_grad: Whether gradients should be accumulated into this tensor.
        name: Optional label, used in error messages and checkpoints.
    """

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "name",
        "_parents",
        "_backward",
        "__weakref__",
    )

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        array = np.asarray(data, dtype=get_precision().dtype)
        _check_finite(array, name or "tensor creation")
        self.data: np.ndarray = track(array)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = tuple()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        """Wrap an existing buffer without copying or casting it."""
        tensor = cls.__new__(cls)
        tensor.data = track(array)
        tensor.grad = None
        tensor.requires_grad = False
        tensor.name = ""
        tensor._parents = tuple()
        tensor._backward = None
        return tensor

    # ===== Metadata ==============================================================

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        """Leaves are tensors not produced by a recorded operation."""
        return self._backward is None

    def numpy(self) -> np.ndarray:
        """The underlying buffer."""
        return self.data

    def item(self) -> float:
        """The value of a single-element tensor as a python float."""
        if self.size != 1:
            raise UsageError(
                f"item() requires a single-element tensor; Found shape: {self.shape}"
            )
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """A tensor sharing this buffer but cut from the graph."""
        return Tensor._wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # ===== Autodiff ==============================================================

    def backward(self) -> None:
        """Populate ``grad`` of every leaf reachable from this scalar tensor.

        Gradients accumulate: calling ``backward`` twice without ``zero_grad`` adds
          the second gradient to the first.

        Raises:
            UsageError: If this tensor is not a scalar, or is not on a recorded graph.
        """
        if self.size != 1:
            raise UsageError(
                f"backward() requires a scalar loss; Found shape: {self.shape}"
            )
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that is not part of a graph")

        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

    # ===== Operators =============================================================

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        from .ops import getitem

        return getitem(self, index)

    def reshape(self, *shape: int) -> "Tensor":
        from .ops import reshape

        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]  # type: ignore
        return reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        from .ops import permute

        return permute(self, axes)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        from .ops import sum_

        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        from .ops import mean

        return mean(self, axis=axis, keepdims=keepdims)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Iterative post-order DFS over the recorded graph."""
    order: List[Tensor] = list()
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _check_finite(array: np.ndarray, op_name: str) -> None:
    if not np.isfinite(array).all():
        raise NonFiniteError(f"{op_name} produced non-finite values (shape {array.shape})")


def as_tensor(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    """Lift a constant to a non-recording tensor with the dtype of ``like``."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else get_precision().dtype
    return Tensor._wrap(np.asarray(value, dtype=dtype))


def check_precision(*tensors: Tensor) -> None:
    """Raise PrecisionError unless every tensor shares one dtype."""
    dtypes = {tensor.dtype for tensor in tensors}
    if len(dtypes) > 1:
        found = ", ".join(sorted(str(dtype) for dtype in dtypes))
        raise PrecisionError(
            f"Operands of one graph must share a precision; Found: {found}"
        )


def result(
    array: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op_name: str
) -> Tensor:
    """Wrap the output of an operation, recording it on the graph when needed.

    Raises:
        NonFiniteError: If the output holds NaN or Inf.
    """
    _check_finite(array, op_name)
    out = Tensor._wrap(array)
    if _STATE.grad_enabled and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    like = a if isinstance(a, Tensor) else b if isinstance(b, Tensor) else None
    a, b = as_tensor(a, like), as_tensor(b, like)  # type: ignore
    check_precision(a, b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"Shapes do not broadcast: {a.shape} and {b.shape}") from None
    return a, b


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return result(a.data + b.data, (a, b), backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)

    return result(a.data - b.data, (a, b), backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return unbroadcast(grad * b.data, a.shape), unbroadcast(grad * a.data, b.shape)

    return result(a.data * b.data, (a, b), backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _binary_operands(a, b)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_a = grad / b.data
        return unbroadcast(grad_a, a.shape), unbroadcast(-grad_a * a.data / b.data, b.shape)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return result(out, (a, b), backward, "div")


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a constant exponent."""

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * exponent * a.data ** (exponent - 1),)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** exponent
    return result(out, (a,), backward, "power")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of ``[.., m, k]`` and ``[.., k, n]``.

    Raises:
        DimensionError: If either operand has fewer than two dimensions, the inner
          dimensions disagree, or the batch dimensions do not broadcast.
    """
    a, b = as_tensor(a), as_tensor(b)
    check_precision(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"Cannot multiply matrices of shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(
            f"Batch dimensions do not broadcast: {a.shape} and {b.shape}"
        ) from None

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_a = grad @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ grad
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return result(a.data @ b.data, (a, b), backward, "matmul")
