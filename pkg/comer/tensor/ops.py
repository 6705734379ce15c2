""" Differentiable operations on Tensors.

Every function takes and returns Tensors (constants are lifted with ``as_tensor``),
  computes its forward value with numpy and registers the matching backward closure
  through ``core.result``.

Image tensors are channels-last: ``[batch, height, width, channels]``.
"""
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np

from ..constants import MASK_THRESHOLD
from ..errors import (
    DegenerateSliceError,
    DegenerateTargetError,
    DimensionError,
    NormStateError,
    ShapeError,
    UsageError,
)
from .core import Axis, Tensor, as_tensor, check_precision, result
from .memory import track


# ===== Shape manipulation ========================================================


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.reshape(x.shape),)

    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"Cannot reshape {x.shape} into {tuple(shape)}") from None
    if isinstance(out.base, np.ndarray) and not np.may_share_memory(out, x.data):
        track(out.base)
    return result(out, (x,), backward, "reshape")


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.transpose(inverse),)

    return result(x.data.transpose(axes), (x,), backward, "permute")


def _without(shape: Tuple[int, ...], axis: int) -> Tuple[int, ...]:
    return shape[:axis] + shape[axis + 1 :]


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis``.

    Raises:
        DimensionError: If the shapes disagree outside ``axis``.
    """
    tensors = [as_tensor(tensor) for tensor in tensors]
    check_precision(*tensors)
    ndim = tensors[0].ndim
    axis = axis % ndim
    reference = _without(tensors[0].shape, axis)
    for tensor in tensors[1:]:
        if tensor.ndim != ndim or _without(tensor.shape, axis) != reference:
            shapes = ", ".join(str(t.shape) for t in tensors)
            raise DimensionError(f"Cannot concatenate shapes {shapes} along axis {axis}")
    boundaries = np.cumsum([tensor.shape[axis] for tensor in tensors])[:-1]

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(grad, boundaries, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return result(out, tensors, backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Stack equally-shaped tensors along a new axis."""
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def getitem(x: Tensor, index: Any) -> Tensor:
    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(x.data)
        np.add.at(full, index, grad)
        return (full,)

    return result(np.array(x.data[index]), (x,), backward, "getitem")


def pad_edge_even(x: Tensor) -> Tensor:
    """Pad ``[b, h, w, c]`` to even height and width by repeating the last row or column."""
    _, height, width, _ = x.shape
    pad_h, pad_w = height % 2, width % 2
    if not (pad_h or pad_w):
        return x

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        grad = grad.copy()
        if pad_w:
            grad[:, :, -2, :] += grad[:, :, -1, :]
            grad = grad[:, :, :-1, :]
        if pad_h:
            grad[:, -2, :, :] += grad[:, -1, :, :]
            grad = grad[:, :-1, :, :]
        return (grad,)

    out = np.pad(x.data, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    return result(out, (x,), backward, "pad_edge_even")


# ===== Reductions ================================================================


def sum_(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, x.shape).copy(),)

    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    return result(out, (x,), backward, "sum")


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        count = int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return sum_(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# ===== Elementwise ===============================================================


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * positive,)

    return result(np.maximum(x.data, 0), (x,), backward, "relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * (1 - out * out),)

    return result(out, (x,), backward, "tanh")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * out,)

    return result(out, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return result(out, (x,), backward, "log")


def scale(x: Tensor, factor: float) -> Tensor:
    return x * float(factor)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace the positions where ``mask`` (broadcastable to x) is true by ``value``."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.where(mask, 0, grad).astype(grad.dtype),)

    out = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)
    return result(out, (x,), backward, "masked_fill")


def dropout(
    x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator]
) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)``; identity in eval mode."""
    if not training or p == 0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode requires a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1 - p)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * keep,)

    return result(x.data * keep, (x,), backward, "dropout")


# ===== Softmax & losses ==========================================================


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax.

    Positions holding the mask sentinel (at or below ``MASK_THRESHOLD``) receive
      exactly zero weight.

    Raises:
        DegenerateSliceError: If every position of a slice is masked.
    """
    valid = x.data > MASK_THRESHOLD
    if not valid.any(axis=axis).all():
        raise DegenerateSliceError(
            f"Every position is masked along axis {axis} of {x.shape}"
        )
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    weights = np.exp(np.where(valid, shifted, 0)) * valid
    out = weights / weights.sum(axis=axis, keepdims=True)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad - np.exp(out) * grad.sum(axis=axis, keepdims=True),)

    return result(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int) -> Tensor:
    """Mean token-level cross entropy of ``[.., V]`` logits over non-ignored targets.

    Raises:
        DegenerateTargetError: If every target equals ``ignore_index``.
    """
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"Logits {logits.shape} do not match targets {targets.shape}")
    keep = targets != ignore_index
    count = int(keep.sum())
    if count == 0:
        raise DegenerateTargetError(
            "Every target position is padding; the loss is undefined"
        )
    log_probs = log_softmax(logits, axis=-1)
    one_hot = np.zeros(logits.shape, dtype=logits.dtype)
    np.put_along_axis(one_hot, np.where(keep, targets, 0)[..., None], 1, axis=-1)
    one_hot *= keep[..., None]
    return sum_(log_probs * one_hot) * (-1.0 / count)


# ===== Normalization =============================================================


class NormState:
    """Running statistics of a batch normalization layer.

    Args:
        channels: Number of normalized channels.
        initialized: If false, eval mode raises until a training step has run.
    """

    def __init__(self, channels: int, initialized: bool = True):
        self.channels = channels
        self.running_mean: Optional[np.ndarray] = None
        self.running_var: Optional[np.ndarray] = None
        if initialized:
            self.reset()

    def reset(self) -> None:
        """Running mean 0 and running variance 1."""
        self.running_mean = np.zeros(self.channels)
        self.running_var = np.ones(self.channels)


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: NormState,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Batch normalization over every axis but the last (channel) axis.

    In training mode the statistics come from the positions where ``mask`` is true
      (all positions when no mask is given) and update the running statistics; every
      position, masked or not, is normalized with them. Eval mode uses the running
      statistics only.

    Raises:
        NormStateError: In eval mode without running statistics.
        DegenerateSliceError: In training mode when the mask selects no position.
    """
    check_precision(x, gamma, beta)
    channels = x.shape[-1]
    if channels != state.channels or gamma.shape != (channels,):
        raise DimensionError(
            f"Normalization configured for {state.channels} channels; Found input {x.shape}"
        )
    flat = x.data.reshape(-1, channels)
    dtype = x.dtype

    if training:
        weights = (
            np.ones(flat.shape[0], dtype=dtype)
            if mask is None
            else np.asarray(mask, dtype=dtype).reshape(-1)
        )
        count = float(weights.sum())
        if count == 0:
            raise DegenerateSliceError("Batch normalization received no valid position")
        batch_mean = (weights[:, None] * flat).sum(axis=0) / dtype.type(count)
        centered = flat - batch_mean
        batch_var = (weights[:, None] * centered * centered).sum(axis=0) / dtype.type(count)
        inv = 1 / np.sqrt(batch_var + dtype.type(eps))
        unbiased = batch_var * (count / (count - 1)) if count > 1 else batch_var
        if state.running_mean is None or state.running_var is None:
            state.reset()
        state.running_mean = (1 - momentum) * state.running_mean + momentum * batch_mean
        state.running_var = (1 - momentum) * state.running_var + momentum * unbiased
    else:
        if state.running_mean is None or state.running_var is None:
            raise NormStateError(
                "Batch normalization evaluated before running statistics exist"
            )
        weights = None
        count = float(flat.shape[0])
        inv = (1 / np.sqrt(state.running_var + eps)).astype(dtype)
        centered = flat - state.running_mean.astype(dtype)
    normalized = centered * inv
    out = (normalized * gamma.data + beta.data).reshape(x.shape)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad = grad.reshape(-1, channels)
        grad_gamma = (grad * normalized).sum(axis=0)
        grad_beta = grad.sum(axis=0)
        grad_normalized = grad * gamma.data
        if weights is None:
            grad_x = grad_normalized * inv
        else:
            share = weights[:, None] / dtype.type(count)
            grad_x = inv * (
                grad_normalized
                - share * grad_normalized.sum(axis=0)
                - share * normalized * (grad_normalized * normalized).sum(axis=0)
            )
        return grad_x.reshape(x.shape), grad_gamma, grad_beta

    return result(out, (x, gamma, beta), backward, "batchnorm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis."""
    check_precision(x, gamma, beta)
    centered = x.data - x.data.mean(axis=-1, keepdims=True)
    variance = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1 / np.sqrt(variance + x.dtype.type(eps))
    normalized = centered * inv
    width = x.shape[-1]

    def backward(grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        axes = tuple(range(grad.ndim - 1))
        grad_normalized = grad * gamma.data
        grad_x = inv * (
            grad_normalized
            - grad_normalized.mean(axis=-1, keepdims=True)
            - normalized
            * (grad_normalized * normalized).sum(axis=-1, keepdims=True)
            / width
        )
        return grad_x, (grad * normalized).sum(axis=axes), grad.sum(axis=axes)

    out = normalized * gamma.data + beta.data
    return result(out, (x, gamma, beta), backward, "layer_norm")


# ===== Sequence ops ==============================================================


def cumsum_exclusive(x: Tensor, axis: int = 0) -> Tensor:
    """Exclusive prefix sum: ``out[0] = 0`` and ``out[t] = out[t - 1] + x[t - 1]``."""
    axis = axis % x.ndim
    steps = x.shape[axis]
    if steps < 1:
        raise DimensionError(
            f"cumsum_exclusive needs at least one step; Found shape {x.shape}"
        )

    def along(array: np.ndarray, start: int, stop: int) -> np.ndarray:
        index = [slice(None)] * array.ndim
        index[axis] = slice(start, stop)
        return array[tuple(index)]

    out = track(np.zeros(x.shape, dtype=x.dtype))
    np.cumsum(along(x.data, 0, steps - 1), axis=axis, out=along(out, 1, steps))

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(grad)
        reversed_tail = np.flip(along(grad, 1, steps), axis=axis)
        suffix_sums = np.flip(np.cumsum(reversed_tail, axis=axis), axis=axis)
        along(full, 0, steps - 1)[...] = suffix_sums
        return (full,)

    return result(out, (x,), backward, "cumsum_exclusive")


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of ``weight`` selected by integer ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros_like(weight.data)
        np.add.at(full, ids, grad)
        return (full,)

    return result(weight.data[ids], (weight,), backward, "embedding")


# ===== Convolution & pooling =====================================================


def _taps(
    offset: int, pad: int, stride: int, n_in: int, n_out: int
) -> Optional[Tuple[slice, slice]]:
    """Output and input slices read by one kernel offset along one axis; None if empty.

    Output cell ``o`` reads input ``o * stride + offset - pad``; taps falling into the
      zero padding are skipped instead of materializing a padded copy of the input.
    """
    low = max(0, -((offset - pad) // stride))
    high = min(n_out - 1, (n_in - 1 + pad - offset) // stride)
    if high < low:
        return None
    start = low * stride + offset - pad
    return slice(low, high + 1), slice(start, start + (high - low) * stride + 1, stride)


def conv2d(
    x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1
) -> Tensor:
    """2D cross-correlation of ``[b, h, w, c_in]`` with ``[k, k, c_in, c_out]``.

    Zero "same" padding of ``(k - 1) // 2`` on each side; the output has spatial size
      ``floor((n + 2p - k) / stride) + 1``, which is ``n`` for stride 1. The kernel is
      applied one offset at a time as a channel matmul over a shifted window, so
      neither a padded copy nor an im2col buffer of the input is ever built.

    Raises:
        DimensionError: If the input channels do not match the kernel.
        ShapeError: If the kernel is not square with an odd size.
    """
    tensors = (x, kernel) if bias is None else (x, kernel, bias)
    check_precision(*tensors)
    size, size_w, c_in, c_out = kernel.shape
    if size != size_w or size % 2 == 0:
        raise ShapeError(
            f"Convolution kernels must be square with an odd size; Found {kernel.shape}"
        )
    if x.ndim != 4 or x.shape[-1] != c_in:
        raise DimensionError(
            f"Convolution input {x.shape} does not match kernel {kernel.shape}"
        )
    batch, height, width, _ = x.shape
    pad = (size - 1) // 2
    out_h = (height + 2 * pad - size) // stride + 1
    out_w = (width + 2 * pad - size) // stride + 1
    taps = list()
    for di in range(size):
        rows = _taps(di, pad, stride, height, out_h)
        for dj in range(size):
            columns = _taps(dj, pad, stride, width, out_w)
            if rows is not None and columns is not None:
                out_index = (slice(None), rows[0], columns[0])
                in_index = (slice(None), rows[1], columns[1])
                taps.append((di, dj, out_index, in_index))

    out = track(np.zeros((batch, out_h, out_w, c_out), dtype=x.dtype))
    for di, dj, out_index, in_index in taps:
        out[out_index] += track(x.data[in_index] @ kernel.data[di, dj])
    if bias is not None:
        out += bias.data

    def backward(grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        grad_x = np.zeros_like(x.data)
        grad_kernel = np.zeros_like(kernel.data)
        for di, dj, out_index, in_index in taps:
            grad_kernel[di, dj] = np.tensordot(
                x.data[in_index], grad[out_index], axes=([0, 1, 2], [0, 1, 2])
            )
            grad_x[in_index] += grad[out_index] @ kernel.data[di, dj].T
        grads: List[Optional[np.ndarray]] = [grad_x, grad_kernel]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 1, 2)))
        return tuple(grads)

    return result(out, tensors, backward, "conv2d")


def avg_pool2d(x: Tensor) -> Tensor:
    """2×2 average pooling with stride 2 over even spatial dimensions."""
    batch, height, width, channels = x.shape
    if height % 2 or width % 2:
        raise DimensionError(
            f"Average pooling needs even spatial dimensions; Found {x.shape}"
        )
    blocks = x.data.reshape(batch, height // 2, 2, width // 2, 2, channels)

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        spread = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2)
        return (spread * x.dtype.type(0.25),)

    return result(blocks.mean(axis=(2, 4)), (x,), backward, "avg_pool2d")


def max_pool2d(x: Tensor, size: int = 3, stride: int = 2) -> Tensor:
    """Max pooling with "same"-style padding of ``(size - 1) // 2``."""
    batch, height, width, channels = x.shape
    pad = (size - 1) // 2
    out_h = (height + 2 * pad - size) // stride + 1
    out_w = (width + 2 * pad - size) // stride + 1
    padded = np.pad(
        x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)), constant_values=-np.inf
    )
    offsets = [(di, dj) for di in range(size) for dj in range(size)]
    indices = [
        (
            slice(None),
            slice(di, di + stride * (out_h - 1) + 1, stride),
            slice(dj, dj + stride * (out_w - 1) + 1, stride),
            slice(None),
        )
        for di, dj in offsets
    ]
    windows = np.stack([padded[index] for index in indices])
    winner = windows.argmax(axis=0)
    out = np.take_along_axis(windows, winner[None], axis=0)[0]

    def backward(grad: np.ndarray) -> Tuple[np.ndarray]:
        grad_padded = np.zeros(padded.shape, dtype=grad.dtype)
        for position, index in enumerate(indices):
            grad_padded[index] += grad * (winner == position)
        return (grad_padded[:, pad : pad + height, pad : pad + width, :],)

    return result(out, (x,), backward, "max_pool2d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight (+ bias)`` over the last axis."""
    out = x @ weight
    return out if bias is None else out + bias
