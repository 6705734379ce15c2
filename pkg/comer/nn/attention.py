""" Multi-head attention and the attention refinement module (ARM).

Attention tensors are laid out ``[batch, head, query step, key]``. The ARM turns the
  coverage of past attention into a refinement term ``R`` that is subtracted from the
  scaled dot-product scores of the cross-attention before the softmax:

    C = exclusive prefix sum of attention weights over steps
    R = norm(relu(conv(C reshaped onto the h_o × w_o grid) + bias) · W_c)
    E' = E - R          (masked keys keep the sentinel)
"""
import math
from typing import NamedTuple, Optional, Tuple

import numpy as np

from ..constants import MASK_SENTINEL
from ..errors import ConfigError, ShapeError
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.random import RandomStream
from .module import BatchNorm, Conv2d, Linear, Module


class AttentionWeights(NamedTuple):
    """Scores and weights of one attention call.

    Args:
        E: Scaled dot-products ``[b, h, T, L]``; masked positions hold the sentinel.
        A: Softmax of ``E``; masked positions are exactly 0.
        key_mask: Boolean ``[b, L]`` of valid keys.
    """

    E: Tensor
    A: Tensor
    key_mask: np.ndarray


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads of width ``d_model / heads``."""

    def __init__(self, d_model: int, heads: int, stream: RandomStream):
        super().__init__()
        if d_model % heads:
            raise ConfigError(f"d_model {d_model} is not divisible by {heads} heads")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.query = Linear(d_model, d_model, stream.child("query"))
        self.key = Linear(d_model, d_model, stream.child("key"))
        self.value = Linear(d_model, d_model, stream.child("value"))
        self.output = Linear(d_model, d_model, stream.child("output"))

    def split_heads(self, x: Tensor) -> Tensor:
        """``[b, n, d_model]`` → ``[b, h, n, d_k]``."""
        batch, steps, _ = x.shape
        return x.reshape(batch, steps, self.heads, self.d_k).permute(0, 2, 1, 3)

    def merge_heads(self, x: Tensor) -> Tensor:
        """``[b, h, n, d_k]`` → ``[b, n, d_model]``."""
        batch, _, steps, _ = x.shape
        return x.permute(0, 2, 1, 3).reshape(batch, steps, self.d_model)

    def project_keys(self, source: Tensor) -> Tuple[Tensor, Tensor]:
        """Keys and values of ``source`` with heads split; cacheable across steps."""
        return self.split_heads(self.key(source)), self.split_heads(self.value(source))

    def scores(
        self,
        hidden: Tensor,
        keys: Tensor,
        key_mask: Optional[np.ndarray] = None,
        causal: bool = False,
        offset: int = 0,
    ) -> Tensor:
        """Masked scaled dot-products ``E = QKᵀ / √d_k`` of shape ``[b, h, T, L]``.

        Args:
            hidden: Queries before projection, ``[b, T, d_model]``.
            keys: Projected keys with heads split, ``[b, h, L, d_k]``.
            key_mask: Optional boolean ``[b, L]`` of valid keys.
            causal: Mask keys later than the query step.
            offset: Absolute step of the first query (incremental decoding).
        """
        queries = self.split_heads(self.query(hidden))
        energy = (queries @ keys.permute(0, 1, 3, 2)) * (1 / math.sqrt(self.d_k))
        masked = self.invalid(energy.shape, key_mask, causal, offset)
        return energy if masked is None else ops.masked_fill(energy, masked, MASK_SENTINEL)

    @staticmethod
    def invalid(
        shape: Tuple[int, ...],
        key_mask: Optional[np.ndarray],
        causal: bool,
        offset: int = 0,
    ) -> Optional[np.ndarray]:
        """Boolean positions of ``[b, h, T, L]`` scores that must not be attended."""
        batch, _, steps, keys = shape
        masked = np.zeros((batch, 1, steps, keys), dtype=bool)
        if key_mask is not None:
            masked |= ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        if causal:
            later = np.arange(keys)[None, :] > (np.arange(steps)[:, None] + offset)
            masked |= later[None, None]
        return masked if masked.any() else None

    def combine(self, weights: Tensor, values: Tensor) -> Tensor:
        """Weighted values with heads merged and projected: ``[b, T, d_model]``."""
        return self.output(self.merge_heads(weights @ values))

    def __call__(
        self,
        hidden: Tensor,
        source: Tensor,
        key_mask: Optional[np.ndarray] = None,
        causal: bool = False,
    ) -> Tuple[Tensor, AttentionWeights]:
        keys, values = self.project_keys(source)
        energy = self.scores(hidden, keys, key_mask, causal)
        weights = ops.softmax(energy, axis=-1)
        if key_mask is None:
            key_mask = np.ones(energy.shape[:1] + energy.shape[-1:], dtype=bool)
        return self.combine(weights, values), AttentionWeights(energy, weights, key_mask)


def multi_head_attention(
    attention: MultiHeadAttention,
    hidden: Tensor,
    source: Tensor,
    key_mask: Optional[np.ndarray] = None,
    causal: bool = False,
) -> Tuple[Tensor, AttentionWeights]:
    return attention(hidden, source, key_mask, causal)


class AttentionRefinement(Module):
    """The learned coverage function of the ARM.

    Args:
        heads_in: Channels of the coverage input (``h``, or ``2h`` for fusion).
        heads: Attention heads of the refined attention (``h``).
        kernel_size: Spatial size ``k_c`` of the coverage convolution.
        channels: Coverage feature channels ``d_c``.
    """

    def __init__(
        self,
        heads_in: int,
        heads: int,
        kernel_size: int,
        channels: int,
        stream: RandomStream,
        eps: float = 1e-5,
        momentum: float = 0.1,
    ):
        super().__init__()
        self.heads_in = heads_in
        self.heads = heads
        self.conv = Conv2d(heads_in, channels, kernel_size, stream.child("conv"), bias=True)
        self.proj = Linear(channels, heads, stream.child("proj"), bias=False)
        self.norm = BatchNorm(heads, eps, momentum)

    def zero_(self) -> None:
        """Zero every parameter and reset the running statistics.

        A zeroed ARM leaves attention scores unchanged.
        """
        for _, param in self.named_parameters():
            param.data = np.zeros_like(param.data)
        self.norm.gamma.data = np.ones_like(self.norm.gamma.data)
        self.norm.state.reset()

    def refine_coverage(
        self, coverage: Tensor, h_o: int, w_o: int, valid: Optional[np.ndarray] = None
    ) -> Tensor:
        """Map coverage ``[b, T, L, h_in]`` to the refinement term ``[b, h, T, L]``.

        Coverage is kept channels-last so that placing it on the feature grid is a view.

        Args:
            coverage: Accumulated attention of the steps before each step.
            h_o: Height of the feature grid.
            w_o: Width of the feature grid.
            valid: Optional boolean ``[b, T, L]``; normalization statistics are taken
              over valid positions only.

        Raises:
            ShapeError: If ``L != h_o · w_o`` or the channel count is wrong.
        """
        batch, steps, cells, heads_in = coverage.shape
        if cells != h_o * w_o:
            raise ShapeError(
                f"Coverage has {cells} cells; Expected {h_o}×{w_o} = {h_o * w_o}"
            )
        if heads_in != self.heads_in:
            raise ShapeError(f"Coverage has {heads_in} channels; Expected {self.heads_in}")
        grid = coverage.reshape(batch * steps, h_o, w_o, heads_in)
        features = ops.relu(self.conv(grid))
        projected = self.proj(features)
        mask = None
        if valid is not None:
            mask = np.asarray(valid, dtype=bool).reshape(batch * steps, h_o, w_o)
        refinement = self.norm(projected, mask=mask)
        return refinement.reshape(batch, steps, cells, self.heads).permute(0, 3, 1, 2)

    def phi(
        self, weights: Tensor, h_o: int, w_o: int, valid: Optional[np.ndarray] = None
    ) -> Tensor:
        """Refinement term of attention weights ``[b, h_in, T, L]`` in one parallel pass."""
        coverage = ops.cumsum_exclusive(weights.permute(0, 2, 3, 1), axis=1)
        return self.refine_coverage(coverage, h_o, w_o, valid)

    def refine(self, energy: Tensor, refinement: Tensor, key_mask: np.ndarray) -> Tensor:
        """``E - R`` with the sentinel restored at invalid keys."""
        invalid = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
        return ops.masked_fill(energy - refinement, invalid, MASK_SENTINEL)


def phi(
    weights: Tensor,
    h_o: int,
    w_o: int,
    module: AttentionRefinement,
    valid: Optional[np.ndarray] = None,
) -> Tensor:
    return module.phi(weights, h_o, w_o, valid)


def arm(
    energy: Tensor,
    weights: Tensor,
    h_o: int,
    w_o: int,
    module: AttentionRefinement,
    key_mask: np.ndarray,
    valid: Optional[np.ndarray] = None,
) -> Tuple[Tensor, Tensor]:
    """Refined scores ``E - φ(A_in)`` and the refinement term itself."""
    refinement = module.phi(weights, h_o, w_o, valid)
    return module.refine(energy, refinement, key_mask), refinement
