""" The synthetic formula corpus and its batching. """
from .augment import scale_augment, scale_image
from .collate import Batch, BidirectionalTargets, batch_indices, collate, make_targets
from .dataset import Sample, generate, split, statistics
from .glyphs import GlyphAtlas
from .grammar import FormulaGrammar
from .io import read_corpus, read_pgm, write_corpus, write_pgm
from .render import render
from .vocab import Vocab

__all__ = [
    "Batch",
    "BidirectionalTargets",
    "FormulaGrammar",
    "GlyphAtlas",
    "Sample",
    "Vocab",
    "batch_indices",
    "collate",
    "generate",
    "make_targets",
    "read_corpus",
    "read_pgm",
    "render",
    "scale_augment",
    "scale_image",
    "split",
    "statistics",
    "write_corpus",
    "write_pgm",
]
