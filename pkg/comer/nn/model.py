""" The full recognizer: DenseNet encoder plus coverage decoder. """
import logging
from typing import Iterator, Optional, Union

import numpy as np

from ..config import RunConfig
from ..tensor.core import Precision, Tensor
from ..tensor.random import RandomStream
from .attention import AttentionRefinement
from .decoder import Decoder, DecoderOutput
from .encoder import Encoder, FeatureGrid
from .module import Module, count_parameters

logger = logging.getLogger(__name__)


class ComerModel(Module):
    """Encoder and decoder registered as ``encoder.*`` and ``decoder.*``.

    Args:
        config: The run configuration (model, encoder and ARM sections are used).
        vocab_size: Number of token ids, reserved tokens included.
        seed: Seed of the initialization streams; defaults to ``training.seed``.
    """

    def __init__(self, config: RunConfig, vocab_size: int, seed: Optional[int] = None):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        seed = config.training.seed if seed is None else seed
        stream = RandomStream(seed).child("init")
        self.encoder = Encoder(
            config.encoder, config.arm, config.model.d_model, stream.child("encoder")
        )
        self.decoder = Decoder(
            config.model, config.arm, vocab_size, stream.child("decoder")
        )
        logger.info(
            "Model with %d parameters (%s coverage, vocabulary of %d)",
            count_parameters(self),
            config.model.coverage,
            vocab_size,
        )

    @property
    def precision(self) -> Precision:
        """The precision the parameters were created with."""
        weight = next(param for _, param in self.named_parameters())
        return Precision.DOUBLE if weight.dtype == np.float64 else Precision.SINGLE

    def encode(
        self, images: Union[Tensor, np.ndarray], mask: Optional[np.ndarray] = None
    ) -> FeatureGrid:
        return self.encoder.encode(images, mask)

    def __call__(
        self,
        images: Union[Tensor, np.ndarray],
        mask: Optional[np.ndarray],
        ids: np.ndarray,
        token_mask: Optional[np.ndarray] = None,
    ) -> DecoderOutput:
        """Teacher-forced logits of ``ids`` given a batch of images."""
        return self.decoder.decode_parallel(ids, self.encode(images, mask), token_mask)

    def refinement_modules(self) -> Iterator[AttentionRefinement]:
        """Every distinct ARM of the decoder."""
        seen = set()
        for module in [self.decoder.arm] + [layer.arm for layer in self.decoder.layers]:
            if module is not None and id(module) not in seen:
                seen.add(id(module))
                yield module

    def zero_refinement(self) -> None:
        """Make every ARM the identity (zero parameters, fresh statistics)."""
        for module in self.refinement_modules():
            module.zero_()
