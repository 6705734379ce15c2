""" Splittable, counter-based random streams.

Every consumer of randomness (weight init, dropout, augmentation, sampling of the
  corpus) derives its own Philox generator from the run seed and a path of string
  tags, so adding a consumer never shifts the numbers another consumer sees.
"""
import zlib
from typing import Tuple

import numpy as np


class RandomStream:
    """A named position in the tree of random streams of a run.

    Examples:
        >>> stream = RandomStream(seed=0)
        >>> init = stream.child("init").child("decoder.layer1.ffn")
        >>> weights = init.generator().normal(size=(4, 4))
    """

    def __init__(self, seed: int, path: Tuple[str, ...] = tuple()):
        self.seed = int(seed)
        self.path = tuple(path)

    def child(self, tag: str) -> "RandomStream":
        """The sub-stream named ``tag``."""
        return RandomStream(self.seed, self.path + (str(tag),))

    def generator(self) -> np.random.Generator:
        """A fresh generator; two calls on the same stream yield identical sequences."""
        entropy = [self.seed] + [zlib.crc32(tag.encode("utf-8")) for tag in self.path]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, path={'/'.join(self.path) or '.'})"


def generator(seed: int, *tags: str) -> np.random.Generator:
    """Shorthand for ``RandomStream(seed, tags).generator()``."""
    return RandomStream(seed, tags).generator()
