""" Batching: padded images with masks and padded bidirectional token targets. """
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ..constants import ReservedTokens
from ..errors import UsageError
from .dataset import Sample


class BidirectionalTargets(NamedTuple):
    """Decoder sequences of one label in both reading orders.

    Args:
        l2r: ``[sos_l2r, t_1, ..., t_n, eos]``.
        r2l: ``[sos_r2l, t_n, ..., t_1, eos]``.
    """

    l2r: Tuple[int, ...]
    r2l: Tuple[int, ...]


def make_targets(tokens: Sequence[int]) -> BidirectionalTargets:
    """Both decoding orders of a label.

    Raises:
        UsageError: If the label is empty or contains a reserved id.
    """
    tokens = tuple(int(token) for token in tokens)
    if not tokens:
        raise UsageError("Cannot build targets of an empty label")
    reserved = [token for token in tokens if 0 <= token <= ReservedTokens.sos_r2l]
    if reserved:
        raise UsageError(f"Labels must not contain reserved token ids; Found {reserved[0]}")
    eos = ReservedTokens.eos
    return BidirectionalTargets(
        (ReservedTokens.sos_l2r,) + tokens + (eos,),
        (ReservedTokens.sos_r2l,) + tokens[::-1] + (eos,),
    )


class DirectionBatch(NamedTuple):
    """Teacher-forcing arrays of one direction.

    Args:
        inputs: Decoder inputs ``[b, T]`` (sequence without its last token).
        targets: Next-token targets ``[b, T]`` (sequence without its first token).
    """

    inputs: np.ndarray
    targets: np.ndarray

    @property
    def token_mask(self) -> np.ndarray:
        return self.inputs != ReservedTokens.pad


class Batch(NamedTuple):
    """A collated batch.

    Args:
        names: Sample identifiers.
        images: Zero-padded images ``[b, H, W]``.
        mask: Boolean ``[b, H, W]``, true over each image's own extent.
        tokens: The unpadded labels.
        l2r: Left-to-right teacher-forcing arrays.
        r2l: Right-to-left teacher-forcing arrays.
    """

    names: Tuple[str, ...]
    images: np.ndarray
    mask: np.ndarray
    tokens: Tuple[Tuple[int, ...], ...]
    l2r: DirectionBatch
    r2l: DirectionBatch

    def __len__(self) -> int:
        return len(self.names)


def pad_sequences(sequences: Sequence[Sequence[int]]) -> np.ndarray:
    """Right-pad with the pad id to the longest sequence."""
    longest = max(len(sequence) for sequence in sequences)
    padded = np.full((len(sequences), longest), ReservedTokens.pad, dtype=np.int64)
    for row, sequence in enumerate(sequences):
        padded[row, : len(sequence)] = sequence
    return padded


def pad_images(
    images: Sequence[np.ndarray], min_size: int = 1
) -> Tuple[np.ndarray, np.ndarray]:
    """Zero-pad images to the batch's largest height and width (at least ``min_size``)."""
    height = max(min_size, max(image.shape[0] for image in images))
    width = max(min_size, max(image.shape[1] for image in images))
    batch = np.zeros((len(images), height, width))
    mask = np.zeros((len(images), height, width), dtype=bool)
    for index, image in enumerate(images):
        batch[index, : image.shape[0], : image.shape[1]] = image
        mask[index, : image.shape[0], : image.shape[1]] = True
    return batch, mask


def _direction(sequences: List[Tuple[int, ...]]) -> DirectionBatch:
    padded = pad_sequences(sequences)
    return DirectionBatch(padded[:, :-1], padded[:, 1:])


def collate(samples: Sequence[Sample], min_size: int = 1) -> Batch:
    """Pad a list of samples into one batch.

    Raises:
        UsageError: For an empty list of samples.
    """
    if not samples:
        raise UsageError("Cannot collate an empty list of samples")
    images, mask = pad_images([sample.image for sample in samples], min_size)
    targets = [make_targets(sample.tokens) for sample in samples]
    return Batch(
        names=tuple(sample.name for sample in samples),
        images=images,
        mask=mask,
        tokens=tuple(tuple(sample.tokens) for sample in samples),
        l2r=_direction([target.l2r for target in targets]),
        r2l=_direction([target.r2l for target in targets]),
    )


def batch_indices(
    count: int,
    batch_size: int,
    rng: Optional[np.random.Generator] = None,
    shuffle: bool = True,
) -> Iterator[np.ndarray]:
    """Index chunks of ``batch_size`` over ``count`` samples, shuffled by ``rng``."""
    order = rng.permutation(count) if shuffle and rng is not None else np.arange(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]
