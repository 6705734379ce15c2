""" Rasterization of token sequences onto a grayscale canvas.

Glyphs are laid out left to right, one tile per token with a fixed gap. The contents
  of a ``^{...}`` group sit half a tile above the surrounding baseline, the contents of
  a ``_{...}`` group half a tile below; nested groups shift further. Ink is 1 on a
  background of 0, so zero padding in a batch looks like empty paper.
"""
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from ..config import GrammarConfig
from .glyphs import GlyphAtlas
from .vocab import CLOSE_BRACE, OPEN_BRACE, SUBSCRIPT, SUPERSCRIPT


class Placement(NamedTuple):
    """Position of one glyph before jitter.

    Args:
        symbol: The token drawn.
        level: Baseline shift in half tiles; negative is up.
        column: Left pixel column of the tile.
    """

    symbol: str
    level: int
    column: int


def layout(tokens: Sequence[str], tile_size: int, margin: int, gap: int) -> List[Placement]:
    levels = [0]
    pending = 0
    placements = list()
    for index, token in enumerate(tokens):
        if token == OPEN_BRACE:
            levels.append(levels[-1] + pending)
            pending = 0
        column = margin + index * (tile_size + gap)
        placements.append(Placement(token, levels[-1], column))
        if token == CLOSE_BRACE and len(levels) > 1:
            levels.pop()
        elif token == SUPERSCRIPT:
            pending = -1
        elif token == SUBSCRIPT:
            pending = 1
    return placements


def canvas_size(
    count: int, levels: int, tile_size: int, margin: int, gap: int
) -> Tuple[int, int]:
    """Height and width of a canvas for ``count`` glyphs with ``levels`` shifts each way."""
    height = 2 * margin + tile_size + 2 * levels * (tile_size // 2)
    width = 2 * margin + count * tile_size + max(count - 1, 0) * gap
    return height, width


def render(
    tokens: Sequence[str],
    atlas: GlyphAtlas,
    rng: np.random.Generator,
    config: GrammarConfig,
) -> np.ndarray:
    """Draw ``tokens`` with per-glyph jitter of up to ``config.jitter`` pixels.

    The canvas height fits ``config.max_depth`` script levels in each direction (more
      if the sequence nests deeper), so images of one corpus share their height.

    Raises:
        AtlasError: If a token has no glyph.
    """
    tile, margin, jitter = atlas.tile_size, config.margin, config.jitter
    placements = layout(tokens, tile, margin, config.gap)
    levels = max([config.max_depth] + [abs(placement.level) for placement in placements])
    height, width = canvas_size(len(tokens), levels, tile, margin, config.gap)
    canvas = np.zeros((height, width))
    baseline = margin + levels * (tile // 2)
    for placement in placements:
        glyph = atlas[placement.symbol]
        shift_row, shift_column = rng.integers(-jitter, jitter + 1, size=2)
        row = baseline + placement.level * (tile // 2) + int(shift_row)
        column = placement.column + int(shift_column)
        region = canvas[row : row + tile, column : column + tile]
        np.maximum(region, glyph, out=region)
    return canvas
