""" Procedural glyph tiles, one binary bitmap per formula symbol. """
import zlib
from typing import Dict, Iterable

import numpy as np

from ..errors import AtlasError
from ..tensor.random import RandomStream

STROKES_PER_GLYPH = 3
MAX_ATTEMPTS = 32


def _draw_segment(tile: np.ndarray, start: np.ndarray, end: np.ndarray) -> None:
    steps = int(np.abs(end - start).max()) + 1
    rows = np.rint(np.linspace(start[0], end[0], steps)).astype(int)
    columns = np.rint(np.linspace(start[1], end[1], steps)).astype(int)
    tile[rows, columns] = 1.0


class GlyphAtlas:
    """Distinct stroke bitmaps of size ``tile_size × tile_size`` for a set of symbols.

    Each glyph is a few random line segments inside a one-pixel border, drawn from a
      stream keyed by the atlas seed and the symbol, so a symbol's glyph does not depend
      on which other symbols are in the atlas.
    """

    def __init__(self, symbols: Iterable[str], tile_size: int = 16, seed: int = 7):
        self.tile_size = tile_size
        self.seed = seed
        self._tiles: Dict[str, np.ndarray] = dict()
        stream = RandomStream(seed).child("atlas")
        for symbol in symbols:
            key = str(zlib.crc32(symbol.encode()))
            self._tiles[symbol] = self._unique_tile(stream.child(key))

    def _unique_tile(self, stream: RandomStream) -> np.ndarray:
        rng = stream.generator()
        for _ in range(MAX_ATTEMPTS):
            tile = self._random_tile(rng)
            if not any(np.array_equal(tile, other) for other in self._tiles.values()):
                return tile
        raise AtlasError(f"Could not draw a distinct glyph after {MAX_ATTEMPTS} attempts")

    def _random_tile(self, rng: np.random.Generator) -> np.ndarray:
        size = self.tile_size
        tile = np.zeros((size, size))
        for _ in range(STROKES_PER_GLYPH):
            start, end = rng.integers(1, size - 1, size=(2, 2))
            _draw_segment(tile, start, end)
        return tile

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._tiles

    def __len__(self) -> int:
        return len(self._tiles)

    def __getitem__(self, symbol: str) -> np.ndarray:
        """The tile of ``symbol``.

        Raises:
            AtlasError: If the atlas has no glyph for the symbol.
        """
        try:
            return self._tiles[symbol]
        except KeyError:
            raise AtlasError(f"No glyph for symbol {symbol!r}") from None
