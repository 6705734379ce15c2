""" Allocation tracking for the tensor library.

Every buffer owned by a Tensor, and every scratch buffer a kernel allocates, is reported
  to the active trackers. A buffer counts as live until numpy frees it, so the peak
  reflects what is simultaneously resident, not the running total.

Examples:
    >>> from comer.tensor.memory import AllocationTracker
    >>> with AllocationTracker() as tracker:
    ...     run_some_ops()
    >>> tracker.peak_floats, tracker.largest_floats
"""
import weakref
from typing import List, Set

import numpy as np

_ACTIVE: List["AllocationTracker"] = list()


class AllocationTracker:
    """Context manager recording the buffers allocated while it is active.

    Attributes:
        live_floats: Number of tracked elements currently resident.
        peak_floats: Maximum of ``live_floats`` over the tracked region.
        total_floats: Sum of every tracked allocation.
        largest_floats: Size of the single largest tracked buffer.
        count: Number of tracked buffers.
    """

    def __init__(self) -> None:
        self.live_floats = 0
        self.peak_floats = 0
        self.total_floats = 0
        self.largest_floats = 0
        self.count = 0
        self._live: Set[int] = set()

    def __enter__(self) -> "AllocationTracker":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *_: object) -> None:
        _ACTIVE.remove(self)

    def _allocate(self, array: np.ndarray) -> None:
        key = id(array)
        if key in self._live:
            return
        size = int(array.size)
        self._live.add(key)
        self.count += 1
        self.live_floats += size
        self.total_floats += size
        self.peak_floats = max(self.peak_floats, self.live_floats)
        self.largest_floats = max(self.largest_floats, size)
        weakref.finalize(array, self._release, key, size)

    def _release(self, key: int, size: int) -> None:
        self._live.discard(key)
        self.live_floats -= size


def track(array: np.ndarray) -> np.ndarray:
    """Report a buffer to every active tracker and return it unchanged.

    Views do not own memory and are ignored. A buffer is counted once however often
      it is reported, and is considered freed when numpy releases it.
    """
    if not _ACTIVE or not array.flags.owndata:
        return array
    for tracker in _ACTIVE:
        tracker._allocate(array)
    return array
