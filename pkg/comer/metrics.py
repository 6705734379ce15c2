""" Token-level recognition metrics: exact match, error tolerance and length buckets. """
import logging
import warnings
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from Levenshtein import distance

from .data.dataset import Sample
from .data.vocab import Vocab
from .errors import ComerWarning, UsageError
from .nn.model import ComerModel
from .search import recognize

logger = logging.getLogger(__name__)

# Inclusive lower and upper label lengths of each bucket; None is unbounded.
LENGTH_BUCKETS: Tuple[Tuple[str, int, Optional[int]], ...] = (
    ("1-9", 1, 9),
    ("10-19", 10, 19),
    ("20-29", 20, 29),
    ("30+", 30, None),
)
MAX_TOLERANCE = 3


def token_edit_distance(prediction: Sequence[int], reference: Sequence[int]) -> int:
    """Levenshtein distance between two token-id sequences with unit costs."""
    return int(distance([int(token) for token in prediction], [int(t) for t in reference]))


def length_bucket(length: int) -> str:
    for name, low, high in LENGTH_BUCKETS:
        if length >= low and (high is None or length <= high):
            return name
    raise UsageError(f"Labels must have at least one token; Found length {length}")


class BucketAccuracy(NamedTuple):
    """Exact-match rate of the samples whose label length falls in one bucket.

    Args:
        count: Number of samples in the bucket.
        exprate: Fraction recognized exactly; None for an empty bucket.
    """

    count: int
    exprate: Optional[float]


class EvalReport(NamedTuple):
    """Recognition accuracy of a dataset.

    Args:
        count: Number of evaluated samples.
        exprate: Fraction with edit distance 0.
        err_le_1: Fraction with edit distance at most 1.
        err_le_2: Fraction with edit distance at most 2.
        err_le_3: Fraction with edit distance at most 3.
        buckets: Accuracy per label-length bucket.
        long_threshold: Labels of at least this length count as long.
        long_exprate: Exact-match rate on long labels; None if there are none.
    """

    count: int
    exprate: float
    err_le_1: float
    err_le_2: float
    err_le_3: float
    buckets: Dict[str, BucketAccuracy]
    long_threshold: int
    long_exprate: Optional[float]

    def table(self) -> str:
        """Human-readable per-length accuracy table."""
        rows = [f"{'length':<8}{'count':>7}{'exprate':>10}"]
        for name, bucket in self.buckets.items():
            rate = "-" if bucket.exprate is None else f"{100 * bucket.exprate:.2f}"
            rows.append(f"{name:<8}{bucket.count:>7}{rate:>10}")
        return "\n".join(rows)


class Prediction(NamedTuple):
    """Recognition result of one sample.

    Args:
        name: The sample identifier.
        distance: Token edit distance to the label.
        tokens: Predicted token ids, left to right.
        reference: The label's token ids.
    """

    name: str
    distance: int
    tokens: Tuple[int, ...]
    reference: Tuple[int, ...]


def report_from_distances(
    distances: Sequence[int], lengths: Sequence[int], long_threshold: int = 15
) -> EvalReport:
    """Aggregate per-sample edit distances and label lengths.

    Raises:
        UsageError: If there are no samples.
    """
    if not distances:
        raise UsageError("Cannot evaluate an empty dataset")
    distances = np.asarray(distances)
    lengths = np.asarray(lengths)
    rates = [float(np.mean(distances <= k)) for k in range(MAX_TOLERANCE + 1)]
    buckets = dict()
    names = np.array([length_bucket(int(length)) for length in lengths])
    for name, _, _ in LENGTH_BUCKETS:
        selected = distances[names == name]
        exprate = float(np.mean(selected == 0)) if selected.size else None
        buckets[name] = BucketAccuracy(int(selected.size), exprate)
    empty = [name for name, bucket in buckets.items() if not bucket.count]
    if empty:
        warnings.warn(f"No samples in length bucket(s): {', '.join(empty)}", ComerWarning)
    long = distances[lengths >= long_threshold]
    return EvalReport(
        count=int(distances.size),
        exprate=rates[0],
        err_le_1=rates[1],
        err_le_2=rates[2],
        err_le_3=rates[3],
        buckets=buckets,
        long_threshold=long_threshold,
        long_exprate=float(np.mean(long == 0)) if long.size else None,
    )


def predict(
    model: ComerModel,
    samples: Sequence[Sample],
    beam_size: int = 10,
    max_len: int = 32,
    joint: bool = True,
) -> List[Prediction]:
    """Recognize every sample."""
    predictions = list()
    for sample in samples:
        tokens = recognize(model, sample.image, beam_size, max_len, joint)
        predictions.append(
            Prediction(
                sample.name,
                token_edit_distance(tokens, sample.tokens),
                tokens,
                sample.tokens,
            )
        )
    return predictions


def evaluate(
    model: ComerModel,
    samples: Sequence[Sample],
    beam_size: int = 10,
    max_len: int = 32,
    joint: bool = True,
    long_threshold: int = 15,
) -> Tuple[EvalReport, List[Prediction]]:
    """Recognize every sample and report accuracy.

    Raises:
        UsageError: If ``samples`` is empty.
    """
    if not samples:
        raise UsageError("Cannot evaluate an empty dataset")
    predictions = predict(model, samples, beam_size, max_len, joint)
    report = report_from_distances(
        [prediction.distance for prediction in predictions],
        [len(prediction.reference) for prediction in predictions],
        long_threshold,
    )
    logger.info(
        "Evaluated %d samples: exprate %.4f, <=1 %.4f, <=2 %.4f, <=3 %.4f",
        report.count,
        report.exprate,
        report.err_le_1,
        report.err_le_2,
        report.err_le_3,
    )
    return report, predictions


def write_predictions(predictions: Sequence[Prediction], vocab: Vocab, file: Path) -> None:
    """One ``id<TAB>distance<TAB>tokens`` row per sample."""
    rows = [
        f"{p.name}\t{p.distance}\t{vocab.detokenize(vocab.decode(p.tokens))}"
        for p in predictions
    ]
    file.write_text("\n".join(rows) + "\n", encoding="utf-8")
