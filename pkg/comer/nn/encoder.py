""" DenseNet image encoder producing the feature grid the decoder attends to. """
import logging
import math
from typing import List, NamedTuple, Optional, Union

import numpy as np

from ..config import ArmConfig, EncoderConfig
from ..errors import InputTooSmallError, ShapeError
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.random import RandomStream
from .module import BatchNorm, Conv2d, Dropout, Module

logger = logging.getLogger(__name__)


class FeatureGrid(NamedTuple):
    """Encoder output.

    Args:
        features: Tensor[b, h_o, w_o, d_model].
        mask: Boolean array[b, h_o, w_o]; true for cells covering at least one
          non-padding pixel.
    """

    features: Tensor
    mask: np.ndarray

    @property
    def h_o(self) -> int:
        return self.features.shape[1]

    @property
    def w_o(self) -> int:
        return self.features.shape[2]

    @property
    def cells(self) -> int:
        return self.h_o * self.w_o

    def flat(self) -> Tensor:
        """Features as ``[b, h_o · w_o, d_model]`` in row-major cell order."""
        batch, _, _, width = self.features.shape
        return self.features.reshape(batch, self.cells, width)

    def flat_mask(self) -> np.ndarray:
        return self.mask.reshape(self.mask.shape[0], -1)


class BottleneckLayer(Module):
    """norm → relu → 1×1 conv to ``factor · k`` → norm → relu → 3×3 conv to ``k``.

    Dropout follows the last convolution.
    """

    def __init__(
        self,
        c_in: int,
        growth_rate: int,
        factor: int,
        dropout: float,
        arm: ArmConfig,
        stream: RandomStream,
    ):
        super().__init__()
        width = factor * growth_rate
        self.norm1 = BatchNorm(c_in, arm.norm_eps, arm.norm_momentum)
        self.conv1 = Conv2d(c_in, width, 1, stream.child("conv1"))
        self.norm2 = BatchNorm(width, arm.norm_eps, arm.norm_momentum)
        self.conv2 = Conv2d(width, growth_rate, 3, stream.child("conv2"))
        self.dropout = Dropout(dropout, stream.child("dropout"))

    def __call__(self, x: Tensor) -> Tensor:
        hidden = self.conv1(ops.relu(self.norm1(x)))
        return self.dropout(self.conv2(ops.relu(self.norm2(hidden))))


class DenseBlock(Module):
    """``D`` bottleneck layers, each consuming the concatenation of all earlier outputs.

    The block output has ``c_in + D · k`` channels.
    """

    def __init__(
        self, c_in: int, config: EncoderConfig, arm: ArmConfig, stream: RandomStream
    ):
        super().__init__()
        self.c_in = c_in
        self.layers: List[BottleneckLayer] = list()
        channels = c_in
        for j in range(1, config.layers_per_block + 1):
            layer = BottleneckLayer(
                channels,
                config.growth_rate,
                config.bottleneck_factor,
                config.dropout,
                arm,
                stream.child(f"layer{j}"),
            )
            self.layers.append(self.add_module(f"layer{j}", layer))  # type: ignore
            channels += config.growth_rate
        self.c_out = channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.c_in:
            raise ShapeError(
                f"Dense block expects {self.c_in} channels; Found input {x.shape}"
            )
        features = [x]
        for layer in self.layers:
            features.append(layer(ops.concat(features, axis=-1)))
        return ops.concat(features, axis=-1)


def dense_block(x: Tensor, block: DenseBlock) -> Tensor:
    return block(x)


class Transition(Module):
    """Replication pad to even size → norm → relu → 1×1 conv to ⌊θc⌋ → 2×2 average pool."""

    def __init__(self, c_in: int, factor: float, arm: ArmConfig, stream: RandomStream):
        super().__init__()
        self.c_out = max(1, int(math.floor(factor * c_in)))
        self.norm = BatchNorm(c_in, arm.norm_eps, arm.norm_momentum)
        self.conv = Conv2d(c_in, self.c_out, 1, stream.child("conv"))

    def __call__(self, x: Tensor) -> Tensor:
        x = ops.pad_edge_even(x)
        return ops.avg_pool2d(self.conv(ops.relu(self.norm(x))))


def transition(x: Tensor, layer: Transition) -> Tensor:
    return layer(x)


class Encoder(Module):
    """Stem → dense blocks with transitions → norm → relu → 1×1 conv to ``d_model``."""

    def __init__(
        self, config: EncoderConfig, arm: ArmConfig, d_model: int, stream: RandomStream
    ):
        super().__init__()
        self.config = config
        self.d_model = d_model
        channels = 2 * config.growth_rate
        self.stem = Conv2d(
            1, channels, config.stem_kernel, stream.child("stem"), stride=config.stem_stride
        )
        self.stem_norm = BatchNorm(channels, arm.norm_eps, arm.norm_momentum)
        self.blocks: List[DenseBlock] = list()
        self.transitions: List[Transition] = list()
        for i in range(1, config.num_blocks + 1):
            block = DenseBlock(channels, config, arm, stream.child(f"block{i}"))
            self.blocks.append(self.add_module(f"block{i}", block))  # type: ignore
            channels = block.c_out
            if i < config.num_blocks or config.trailing_transition:
                layer = Transition(
                    channels, config.transition_factor, arm, stream.child(f"transition{i}")
                )
                self.transitions.append(
                    self.add_module(f"transition{i}", layer)  # type: ignore
                )
                channels = layer.c_out
        self.final_norm = BatchNorm(channels, arm.norm_eps, arm.norm_momentum)
        self.final = Conv2d(channels, d_model, 1, stream.child("final"), bias=True)
        logger.debug(
            "Encoder with %d blocks, %d output channels before projection, total stride %d",
            config.num_blocks,
            channels,
            self.total_stride,
        )

    @property
    def total_stride(self) -> int:
        return self.config.total_stride

    def __call__(
        self, images: Union[Tensor, np.ndarray], mask: Optional[np.ndarray] = None
    ) -> FeatureGrid:
        return self.encode(images, mask)

    def encode(
        self, images: Union[Tensor, np.ndarray], mask: Optional[np.ndarray] = None
    ) -> FeatureGrid:
        """Encode a batch of grayscale images.

        Args:
            images: Array or Tensor of shape ``[b, H, W, 1]`` (or ``[b, H, W]``) in [0, 1].
            mask: Boolean ``[b, H, W]`` marking real (non-padding) pixels; all true if
              omitted.

        Raises:
            InputTooSmallError: If ``H`` or ``W`` is smaller than the total stride.
            ShapeError: If a batch item has no valid feature cell after downsampling.
        """
        if not isinstance(images, Tensor):
            array = np.asarray(images)
            images = Tensor(array[..., None] if array.ndim == 3 else array)
        batch, height, width, _ = images.shape
        stride = self.total_stride
        if height < stride or width < stride:
            raise InputTooSmallError(
                f"Images of {height}×{width} pixels are smaller than "
                f"the encoder stride {stride}"
            )
        if mask is None:
            mask = np.ones((batch, height, width), dtype=bool)

        x = ops.relu(self.stem_norm(self.stem(images)))
        if self.config.stem_pool:
            x = ops.max_pool2d(x, 3, 2)
        transitions = iter(self.transitions)
        for index, block in enumerate(self.blocks, start=1):
            x = block(x)
            if index < len(self.blocks) or self.config.trailing_transition:
                x = next(transitions)(x)
        features = self.final(ops.relu(self.final_norm(x)))
        h_o, w_o = features.shape[1], features.shape[2]
        cells = downsample_mask(mask, stride, h_o, w_o)
        empty = np.flatnonzero(~cells.any(axis=(1, 2)))
        if empty.size:
            raise ShapeError(
                f"Batch items {empty.tolist()} have no valid feature cell; "
                "every image needs real pixels inside the encoded area"
            )
        return FeatureGrid(features, cells)


def downsample_mask(mask: np.ndarray, stride: int, h_o: int, w_o: int) -> np.ndarray:
    """A cell is valid iff any pixel of its ``stride × stride`` footprint is valid."""
    batch, height, width = mask.shape
    padded = np.zeros((batch, h_o * stride, w_o * stride), dtype=bool)
    padded[:, : min(height, h_o * stride), : min(width, w_o * stride)] = mask[
        :, : h_o * stride, : w_o * stride
    ]
    return padded.reshape(batch, h_o, stride, w_o, stride).any(axis=(2, 4))
