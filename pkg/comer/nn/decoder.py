""" Transformer decoder with the coverage wirings of the attention refinement module.

Layers before ``arm_start_layer`` use plain cross-attention. From that layer on, the
  cross-attention scores are refined with a coverage term computed from:

    none    no refinement at all
    self    the layer's own (pre-refinement) attention weights
    cross   the refined weights of the previous layer
    fusion  both, concatenated along the head axis (own weights first)

The same computation is available as one parallel pass over a whole sequence
  (training, teacher forcing) and as an incremental step with a cache (search).
"""
import enum
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import ArmConfig, DecoderConfig
from ..constants import ReservedTokens
from ..errors import DecodeStateError, VocabularyError, WiringError
from ..tensor import ops
from ..tensor.core import Tensor, no_grad
from ..tensor.random import RandomStream
from .attention import AttentionRefinement, MultiHeadAttention, arm
from .encoder import FeatureGrid
from .module import Dropout, Embedding, LayerNorm, Linear, Module
from .positional import image_pe, word_pe

logger = logging.getLogger(__name__)


class CoverageMode(enum.Enum):
    NONE = "none"
    SELF = "self"
    CROSS = "cross"
    FUSION = "fusion"

    @property
    def uses_previous(self) -> bool:
        """Whether the coverage input includes the previous layer's refined weights."""
        return self in (CoverageMode.CROSS, CoverageMode.FUSION)

    @property
    def input_factor(self) -> int:
        """Coverage channels per attention head."""
        return 2 if self is CoverageMode.FUSION else 1


class LayerCoverage(NamedTuple):
    """Cross-attention weights of one decoder layer, each ``[b, h, T, L]``.

    Args:
        raw: ``softmax(E)``.
        refined: ``softmax(E - R)``; the very same tensor as ``raw`` without ARM.
        refinement: The refinement term ``R``, or None for a layer without ARM.
    """

    raw: Tensor
    refined: Tensor
    refinement: Optional[Tensor]


class CoverageState(NamedTuple):
    """Per-layer cross-attention weights of a decoding pass, first layer first."""

    layers: Tuple[LayerCoverage, ...]

    def raw(self, layer: int) -> Tensor:
        """Raw weights of the 1-based ``layer``."""
        return self.layers[layer - 1].raw

    def refined(self, layer: int) -> Tensor:
        """Refined weights of the 1-based ``layer``."""
        return self.layers[layer - 1].refined


class DecoderMemory(NamedTuple):
    """The encoder output as seen by the decoder.

    Args:
        source: Features plus image positional encodings, ``[b, L, d_model]``.
        key_mask: Boolean ``[b, L]`` of valid cells.
        h_o: Height of the feature grid.
        w_o: Width of the feature grid.
    """

    source: Tensor
    key_mask: np.ndarray
    h_o: int
    w_o: int

    @property
    def batch(self) -> int:
        return self.source.shape[0]

    @property
    def cells(self) -> int:
        return self.source.shape[1]


class LayerCache(NamedTuple):
    """Decoding state of one layer after ``t`` steps.

    Args:
        self_keys: Projected self-attention keys of the fed tokens, ``[b, h, t, d_k]``.
        self_values: Projected self-attention values, ``[b, h, t, d_k]``.
        memory_keys: Projected cross-attention keys of the memory, ``[b, h, L, d_k]``.
        memory_values: Projected cross-attention values of the memory.
        raw: History of raw cross-attention weights, ``[b, h, t, L]``.
        refined: History of refined cross-attention weights, ``[b, h, t, L]``.
        coverage: Sum of the coverage inputs of all fed steps, ``[b, 1, L, h_in]``;
          None for a layer without ARM.
    """

    self_keys: Tensor
    self_values: Tensor
    memory_keys: Tensor
    memory_values: Tensor
    raw: Tensor
    refined: Tensor
    coverage: Optional[Tensor]


class DecodeCache(NamedTuple):
    """Immutable incremental decoding state; every step returns a new cache.

    Args:
        layers: One LayerCache per decoder layer.
        memory: The memory the cache was built for.
        steps: Number of tokens fed so far.
    """

    layers: Tuple[LayerCache, ...]
    memory: DecoderMemory
    steps: int

    @property
    def batch(self) -> int:
        return self.memory.batch

    def select(self, rows: Sequence[int]) -> "DecodeCache":
        """A cache holding the given batch rows (repeats allowed), e.g. surviving beams."""
        rows = np.asarray(rows, dtype=np.int64)

        def pick(tensor: Optional[Tensor]) -> Optional[Tensor]:
            return None if tensor is None else Tensor._wrap(tensor.data[rows])

        layers = tuple(
            LayerCache(*(pick(entry) for entry in layer)) for layer in self.layers
        )
        memory = self.memory._replace(
            source=pick(self.memory.source), key_mask=self.memory.key_mask[rows]
        )
        return DecodeCache(layers, memory, self.steps)  # type: ignore


class FeedForward(Module):
    """Position-wise ``linear2(relu(linear1(x)))`` of width ``d_ff``."""

    def __init__(self, d_model: int, d_ff: int, stream: RandomStream):
        super().__init__()
        self.linear1 = Linear(d_model, d_ff, stream.child("linear1"))
        self.linear2 = Linear(d_ff, d_model, stream.child("linear2"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.linear2(ops.relu(self.linear1(x)))


class DecoderLayer(Module):
    """Masked self-attention → cross-attention (with ARM) → feed-forward, post-norm.

    Args:
        index: 1-based position of the layer in the stack.
        config: The decoder configuration.
        mode: The coverage wiring.
        refinement: The ARM of this layer, or None for plain cross-attention.
        shared: Whether ``refinement`` is owned (and checkpointed) by the decoder.
        stream: Random stream of the layer.
    """

    def __init__(
        self,
        index: int,
        config: DecoderConfig,
        mode: CoverageMode,
        refinement: Optional[AttentionRefinement],
        shared: bool,
        stream: RandomStream,
    ):
        super().__init__()
        self.index = index
        self.mode = mode
        self.self_attn = MultiHeadAttention(
            config.d_model, config.heads, stream.child("self_attn")
        )
        self.norm1 = LayerNorm(config.d_model)
        self.cross_attn = MultiHeadAttention(
            config.d_model, config.heads, stream.child("cross_attn")
        )
        self.norm2 = LayerNorm(config.d_model)
        self.ffn = FeedForward(config.d_model, config.d_ff, stream.child("ffn"))
        self.norm3 = LayerNorm(config.d_model)
        self.dropout1 = Dropout(config.dropout, stream.child("dropout1"))
        self.dropout2 = Dropout(config.dropout, stream.child("dropout2"))
        self.dropout3 = Dropout(config.dropout, stream.child("dropout3"))
        if refinement is not None and shared:
            self.share("arm", refinement)
        else:
            self.arm = refinement

    @property
    def uses_arm(self) -> bool:
        return self.arm is not None

    def coverage_input(self, raw: Tensor, previous: Optional[Tensor]) -> Tensor:
        """The weights ``[b, h_in, T, L]`` whose accumulation drives the refinement.

        Raises:
            WiringError: If the mode needs the previous layer's weights and none were given.
        """
        if self.mode is CoverageMode.SELF:
            return raw
        if previous is None:
            raise WiringError(
                f"Decoder layer {self.index} uses {self.mode.value} coverage but received "
                "no refined weights from the previous layer"
            )
        if self.mode is CoverageMode.CROSS:
            return previous
        return ops.concat([raw, previous], axis=1)

    def __call__(
        self,
        hidden: Tensor,
        memory: DecoderMemory,
        token_mask: np.ndarray,
        previous: Optional[Tensor] = None,
    ) -> Tuple[Tensor, LayerCoverage]:
        """Run the layer over all steps at once.

        Args:
            hidden: Token states ``[b, T, d_model]``.
            memory: The encoder memory.
            token_mask: Boolean ``[b, T]`` of non-padding tokens.
            previous: Refined cross-attention weights of the previous layer.
        """
        attended, _ = self.self_attn(hidden, hidden, token_mask, causal=True)
        hidden = self.norm1(hidden + self.dropout1(attended))

        keys, values = self.cross_attn.project_keys(memory.source)
        energy = self.cross_attn.scores(hidden, keys, memory.key_mask)
        raw = ops.softmax(energy, axis=-1)
        refined, refinement = raw, None
        if self.arm is not None:
            valid = token_mask[:, :, None] & memory.key_mask[:, None, :]
            refined_energy, refinement = arm(
                energy,
                self.coverage_input(raw, previous),
                memory.h_o,
                memory.w_o,
                self.arm,
                memory.key_mask,
                valid,
            )
            refined = ops.softmax(refined_energy, axis=-1)
        attended = self.cross_attn.combine(refined, values)
        hidden = self.norm2(hidden + self.dropout2(attended))
        hidden = self.norm3(hidden + self.dropout3(self.ffn(hidden)))
        return hidden, LayerCoverage(raw, refined, refinement)

    def init_cache(self, memory: DecoderMemory) -> LayerCache:
        batch, cells = memory.batch, memory.cells
        heads, d_k = self.self_attn.heads, self.self_attn.d_k
        memory_keys, memory_values = self.cross_attn.project_keys(memory.source)
        coverage = None
        if self.arm is not None:
            coverage = Tensor(np.zeros((batch, 1, cells, self.arm.heads_in)))
        return LayerCache(
            self_keys=Tensor(np.zeros((batch, heads, 0, d_k))),
            self_values=Tensor(np.zeros((batch, heads, 0, d_k))),
            memory_keys=memory_keys,
            memory_values=memory_values,
            raw=Tensor(np.zeros((batch, heads, 0, cells))),
            refined=Tensor(np.zeros((batch, heads, 0, cells))),
            coverage=coverage,
        )

    def step(
        self,
        hidden: Tensor,
        memory: DecoderMemory,
        cache: LayerCache,
        previous: Optional[Tensor] = None,
    ) -> Tuple[Tensor, LayerCoverage, LayerCache]:
        """Run the layer for one new step ``hidden`` of shape ``[b, 1, d_model]``."""
        keys, values = self.self_attn.project_keys(hidden)
        self_keys = ops.concat([cache.self_keys, keys], axis=2)
        self_values = ops.concat([cache.self_values, values], axis=2)
        weights = ops.softmax(self.self_attn.scores(hidden, self_keys), axis=-1)
        attended = self.self_attn.combine(weights, self_values)
        hidden = self.norm1(hidden + self.dropout1(attended))

        energy = self.cross_attn.scores(hidden, cache.memory_keys, memory.key_mask)
        raw = ops.softmax(energy, axis=-1)
        refined, refinement, coverage = raw, None, cache.coverage
        if self.arm is not None and cache.coverage is not None:
            step_input = self.coverage_input(raw, previous)
            valid = memory.key_mask[:, None, :]
            refinement = self.arm.refine_coverage(
                cache.coverage, memory.h_o, memory.w_o, valid
            )
            refined = ops.softmax(
                self.arm.refine(energy, refinement, memory.key_mask), axis=-1
            )
            coverage = cache.coverage + step_input.permute(0, 2, 3, 1)
        attended = self.cross_attn.combine(refined, cache.memory_values)
        hidden = self.norm2(hidden + self.dropout2(attended))
        hidden = self.norm3(hidden + self.dropout3(self.ffn(hidden)))

        updated = cache._replace(
            self_keys=self_keys,
            self_values=self_values,
            raw=ops.concat([cache.raw, raw], axis=2),
            refined=ops.concat([cache.refined, refined], axis=2),
            coverage=coverage,
        )
        return hidden, LayerCoverage(raw, refined, refinement), updated


def decoder_layer(
    layer: DecoderLayer,
    hidden: Tensor,
    memory: DecoderMemory,
    token_mask: np.ndarray,
    previous: Optional[Tensor] = None,
) -> Tuple[Tensor, LayerCoverage]:
    return layer(hidden, memory, token_mask, previous)


class DecoderOutput(NamedTuple):
    """Result of a parallel decoding pass.

    Args:
        logits: Unnormalized scores ``[b, T, V]``.
        coverage: Cross-attention weights of every layer.
    """

    logits: Tensor
    coverage: CoverageState


class Decoder(Module):
    """Token embedding → stacked decoder layers → projection onto the vocabulary.

    A shared ARM is registered once as ``decoder.arm``; unshared ARMs live under their
      layer (``decoder.layer{i}.arm``).
    """

    def __init__(
        self,
        config: DecoderConfig,
        arm_config: ArmConfig,
        vocab_size: int,
        stream: RandomStream,
    ):
        super().__init__()
        self.config = config
        self.mode = CoverageMode(config.coverage)
        self.vocab_size = vocab_size
        self.d_model = config.d_model
        self.embedding = Embedding(vocab_size, config.d_model, stream.child("embedding"))
        self.dropout = Dropout(config.dropout, stream.child("dropout"))

        arm_layers = [
            index
            for index in range(1, config.num_layers + 1)
            if self.mode is not CoverageMode.NONE and index >= config.arm_start_layer
        ]

        def make_arm(tag: RandomStream) -> AttentionRefinement:
            return AttentionRefinement(
                config.heads * self.mode.input_factor,
                config.heads,
                arm_config.kernel_size,
                arm_config.channels,
                tag,
                arm_config.norm_eps,
                arm_config.norm_momentum,
            )

        if arm_layers and config.arm_shared:
            self.arm: Optional[AttentionRefinement] = make_arm(stream.child("arm"))
        else:
            self.arm = None

        self.layers: List[DecoderLayer] = list()
        for index in range(1, config.num_layers + 1):
            layer_stream = stream.child(f"layer{index}")
            refinement = None
            if index in arm_layers:
                refinement = (
                    self.arm if config.arm_shared else make_arm(layer_stream.child("arm"))
                )
            layer = DecoderLayer(
                index, config, self.mode, refinement, config.arm_shared, layer_stream
            )
            self.layers.append(self.add_module(f"layer{index}", layer))  # type: ignore
        self.output = Linear(config.d_model, vocab_size, stream.child("output"))
        logger.debug(
            "Decoder with %d layers, %s coverage on layers %s%s",
            config.num_layers,
            self.mode.value,
            arm_layers,
            " (shared ARM)" if self.arm is not None else "",
        )

    # ===== Inputs ================================================================

    def check_ids(self, ids: np.ndarray) -> np.ndarray:
        """Integer token ids, validated against the vocabulary.

        Raises:
            VocabularyError: For any id outside ``[0, V)``.
        """
        ids = np.asarray(ids)
        if ids.size and not np.issubdtype(ids.dtype, np.integer):
            raise VocabularyError(f"Token ids must be integers; Found dtype {ids.dtype}")
        ids = ids.astype(np.int64)
        unknown = ids[(ids < 0) | (ids >= self.vocab_size)]
        if unknown.size:
            raise VocabularyError(
                f"Token id {int(unknown[0])} is outside the vocabulary "
                f"of {self.vocab_size} tokens"
            )
        return ids

    def embed(self, ids: np.ndarray, offset: int = 0) -> Tensor:
        """Embedded ``[b, T]`` ids plus word positions starting at ``offset``."""
        embedded = self.embedding(ids)
        if self.config.scale_embedding:
            embedded = embedded * math.sqrt(self.d_model)
        positions = word_pe(
            np.arange(offset, offset + ids.shape[1]),
            self.d_model,
            self.config.pe_temperature,
        )
        return self.dropout(embedded + Tensor(positions))

    def prepare_memory(self, grid: Union[FeatureGrid, DecoderMemory]) -> DecoderMemory:
        """Flatten the feature grid and add image positional encodings."""
        if isinstance(grid, DecoderMemory):
            return grid
        positions = image_pe(grid.h_o, grid.w_o, self.d_model, self.config.pe_temperature)
        source = grid.flat() + Tensor(positions.reshape(grid.cells, self.d_model))
        return DecoderMemory(source, grid.flat_mask().astype(bool), grid.h_o, grid.w_o)

    # ===== Parallel decoding =====================================================

    def __call__(
        self,
        ids: np.ndarray,
        grid: Union[FeatureGrid, DecoderMemory],
        token_mask: Optional[np.ndarray] = None,
    ) -> DecoderOutput:
        return self.decode_parallel(ids, grid, token_mask)

    def decode_parallel(
        self,
        ids: np.ndarray,
        grid: Union[FeatureGrid, DecoderMemory],
        token_mask: Optional[np.ndarray] = None,
    ) -> DecoderOutput:
        """Decode whole (teacher-forced) sequences in one pass.

        Args:
            ids: Token ids ``[b, T]`` (or ``[T]``) starting with a start symbol.
            grid: Encoder output or a prepared memory.
            token_mask: Boolean ``[b, T]`` of real tokens; defaults to ``ids != pad``.

        Raises:
            VocabularyError: For token ids outside the vocabulary.
        """
        ids = self.check_ids(np.atleast_2d(ids))
        if token_mask is None:
            token_mask = ids != ReservedTokens.pad
        token_mask = np.asarray(token_mask, dtype=bool)
        memory = self.prepare_memory(grid)
        hidden = self.embed(ids)
        coverage: List[LayerCoverage] = list()
        previous: Optional[Tensor] = None
        for layer in self.layers:
            hidden, layer_coverage = layer(hidden, memory, token_mask, previous)
            coverage.append(layer_coverage)
            previous = layer_coverage.refined
        return DecoderOutput(self.output(hidden), CoverageState(tuple(coverage)))

    # ===== Incremental decoding ==================================================

    def _require_eval(self, operation: str) -> None:
        if self.training:
            raise DecodeStateError(
                f"{operation} requires eval mode; call model.eval() first"
            )

    def init_cache(self, grid: Union[FeatureGrid, DecoderMemory]) -> DecodeCache:
        """An empty cache for decoding against ``grid``.

        Raises:
            DecodeStateError: In training mode.
        """
        self._require_eval("init_cache")
        with no_grad():
            memory = self.prepare_memory(grid)
            layers = tuple(layer.init_cache(memory) for layer in self.layers)
        return DecodeCache(layers, memory, 0)

    def decode_step(
        self, cache: DecodeCache, tokens: np.ndarray
    ) -> Tuple[Tensor, DecodeCache]:
        """Feed one token per batch row.

        Args:
            cache: State after the previously fed tokens.
            tokens: Token ids ``[b]``.

        Returns:
            Logits ``[b, V]`` for the next token and the extended cache.

        Raises:
            DecodeStateError: In training mode, or if the cache does not fit this decoder
              or the batch of ``tokens``.
            VocabularyError: For token ids outside the vocabulary.
        """
        self._require_eval("decode_step")
        if len(cache.layers) != len(self.layers):
            raise DecodeStateError(
                f"Cache holds {len(cache.layers)} layers; "
                f"the decoder has {len(self.layers)}"
            )
        tokens = self.check_ids(np.asarray(tokens).reshape(-1))
        if tokens.shape[0] != cache.batch:
            raise DecodeStateError(
                f"Cache holds {cache.batch} sequences; Found {tokens.shape[0]} new tokens"
            )
        for layer_cache in cache.layers:
            if layer_cache.raw.shape[2] != cache.steps:
                raise DecodeStateError(
                    f"Cache history has {layer_cache.raw.shape[2]} steps; "
                    f"Expected {cache.steps}"
                )

        with no_grad():
            hidden = self.embed(tokens[:, None], offset=cache.steps)
            layers: List[LayerCache] = list()
            previous: Optional[Tensor] = None
            for layer, layer_cache in zip(self.layers, cache.layers):
                hidden, coverage, updated = layer.step(
                    hidden, cache.memory, layer_cache, previous
                )
                layers.append(updated)
                previous = coverage.refined
            logits = self.output(hidden)
        batch, _, vocab = logits.shape
        updated_cache = DecodeCache(tuple(layers), cache.memory, cache.steps + 1)
        return logits.reshape(batch, vocab), updated_cache
