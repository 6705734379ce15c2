""" The synthetic formula corpus: generation, splitting and statistics. """
import logging
from collections import Counter
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from ..config import GrammarConfig
from ..tensor.random import RandomStream
from .glyphs import GlyphAtlas
from .grammar import FormulaGrammar
from .render import render
from .vocab import Vocab

logger = logging.getLogger(__name__)


class Sample(NamedTuple):
    """A rendered formula.

    Args:
        name: Identifier, also the image file stem.
        image: Grayscale ``[H, W]`` array in [0, 1].
        tokens: Token ids of the label, without reserved ids.
    """

    name: str
    image: np.ndarray
    tokens: Tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)


def sample_name(index: int, count: int) -> str:
    return f"{index:0{max(4, len(str(count - 1)))}d}"


def generate(
    config: GrammarConfig,
    vocab: Optional[Vocab] = None,
    seed: Optional[int] = None,
    n: Optional[int] = None,
) -> List[Sample]:
    """Generate and render ``n`` formulas.

    Each sample draws its tokens and its jitter from its own stream of the seed, so the
      corpus is a pure function of ``(config, seed)``.

    Args:
        config: The ``[dataset]`` configuration.
        vocab: Vocabulary used to encode labels (default symbols if omitted).
        seed: Overrides ``config.seed``.
        n: Overrides ``config.n``.
    """
    vocab = Vocab() if vocab is None else vocab
    seed = config.seed if seed is None else seed
    count = config.n if n is None else n
    grammar = FormulaGrammar(config)
    atlas = GlyphAtlas(vocab.symbols, config.tile_size, config.atlas_seed)
    stream = RandomStream(seed).child("corpus")
    samples = list()
    for index in range(count):
        sample_stream = stream.child(str(index))
        tokens = grammar.sample(sample_stream.child("tokens").generator())
        image = render(tokens, atlas, sample_stream.child("render").generator(), config)
        samples.append(Sample(sample_name(index, count), image, vocab.encode(tokens)))
    logger.info("Generated %d samples with seed %d", count, seed)
    return samples


def split(
    samples: List[Sample], fraction: float, seed: int
) -> Tuple[List[Sample], List[Sample]]:
    """Deterministic ``(train, validation)`` split holding out ``fraction`` of the samples.

    At least one sample is held out when ``fraction > 0`` and the corpus has two or more.
    """
    count = len(samples)
    held = int(round(count * fraction))
    if fraction > 0 and count > 1:
        held = min(max(held, 1), count - 1)
    order = RandomStream(seed).child("split").generator().permutation(count)
    validation = set(int(index) for index in order[:held])
    train = [sample for index, sample in enumerate(samples) if index not in validation]
    held_out = [sample for index, sample in enumerate(samples) if index in validation]
    return train, held_out


def statistics(samples: List[Sample], long_threshold: int = 15) -> Dict[str, object]:
    """Corpus size, length range and histogram, and the number of long formulas."""
    lengths = [sample.length for sample in samples]
    histogram = Counter(lengths)
    return {
        "count": len(samples),
        "min_length": min(lengths, default=0),
        "max_length": max(lengths, default=0),
        "mean_length": float(np.mean(lengths)) if lengths else 0.0,
        "long_threshold": long_threshold,
        "long_count": sum(length >= long_threshold for length in lengths),
        "length_histogram": {length: histogram[length] for length in sorted(histogram)},
    }
