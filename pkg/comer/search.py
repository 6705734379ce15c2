""" Beam search in either reading order and approximate joint (bidirectional) search.

Hypotheses are ranked by their length-normalized log-probability, the sum of token
  log-probabilities divided by the number of generated tokens (the start token is not
  counted, the end token is). Equal scores are broken in favour of the
  lexicographically smallest token-id sequence.
"""
import enum
import logging
import warnings
from typing import Any, Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from .constants import ReservedTokens
from .errors import ComerWarning, SearchError, UsageError
from .nn.decoder import DecodeCache
from .nn.encoder import FeatureGrid
from .nn.model import ComerModel
from .tensor.core import no_grad, precision

logger = logging.getLogger(__name__)

NON_EMITTABLE = (ReservedTokens.pad, ReservedTokens.sos_l2r, ReservedTokens.sos_r2l)


class Direction(enum.Enum):
    L2R = "l2r"
    R2L = "r2l"

    @property
    def sos(self) -> int:
        return ReservedTokens.sos_l2r if self is Direction.L2R else ReservedTokens.sos_r2l

    @property
    def opposite(self) -> "Direction":
        return Direction.R2L if self is Direction.L2R else Direction.L2R


class Hypothesis(NamedTuple):
    """A decoded token sequence.

    Args:
        direction: The reading order the tokens were generated in.
        tokens: Generated ids in generation order, the end token included if finished.
        logprob: Sum of the token log-probabilities.
        finished: Whether the last token is the end token.
    """

    direction: Direction
    tokens: Tuple[int, ...]
    logprob: float
    finished: bool

    @property
    def score(self) -> float:
        """Length-normalized log-probability."""
        return self.logprob / max(len(self.tokens), 1)

    @property
    def payload(self) -> Tuple[int, ...]:
        """Generated tokens without the end token, in generation order."""
        return self.tokens[:-1] if self.finished else self.tokens

    def in_reading_order(self) -> Tuple[int, ...]:
        """The payload read left to right."""
        return self.payload if self.direction is Direction.L2R else self.payload[::-1]


def ranking_key(hypothesis: Hypothesis) -> Tuple[float, Tuple[int, ...]]:
    return -hypothesis.score, hypothesis.tokens


# ===== Scorers ===================================================================


class Scorer:
    """Next-token log-probabilities for a batch of prefixes.

    ``start`` returns the state of ``rows`` empty prefixes; ``step`` consumes one token
      per row and returns ``[rows, V]`` log-probabilities of the token after it;
      ``select`` keeps (and repeats) rows of a state.
    """

    vocab_size: int

    def start(self, direction: Direction, rows: int) -> Any:
        raise NotImplementedError

    def step(self, state: Any, tokens: np.ndarray) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def select(self, state: Any, rows: Sequence[int]) -> Any:
        raise NotImplementedError

    def sequence_logprob(self, direction: Direction, payload: Sequence[int]) -> float:
        """Teacher-forced log-likelihood of ``payload`` followed by the end token."""
        raise NotImplementedError


class ModelScorer(Scorer):
    """Scores prefixes with a model against the encoding of a single image.

    Args:
        model: The recognizer; it is switched to eval mode.
        image: Grayscale ``[H, W]`` image.
        mask: Optional boolean ``[H, W]`` of valid pixels.
    """

    def __init__(
        self, model: ComerModel, image: np.ndarray, mask: Optional[np.ndarray] = None
    ):
        self.model = model.eval()
        self.vocab_size = model.vocab_size
        self.precision = model.precision
        with precision(self.precision), no_grad():
            self.grid: FeatureGrid = model.encode(
                np.asarray(image)[None], None if mask is None else np.asarray(mask)[None]
            )
            self.memory = model.decoder.prepare_memory(self.grid)

    def start(self, direction: Direction, rows: int) -> DecodeCache:
        with precision(self.precision):
            return self.model.decoder.init_cache(self.memory).select([0] * rows)

    def step(
        self, state: DecodeCache, tokens: np.ndarray
    ) -> Tuple[np.ndarray, DecodeCache]:
        with precision(self.precision):
            logits, state = self.model.decoder.decode_step(state, tokens)
        return log_softmax(logits.numpy().astype(np.float64), axis=-1), state

    def select(self, state: DecodeCache, rows: Sequence[int]) -> DecodeCache:
        return state.select(rows)

    def sequence_logprob(self, direction: Direction, payload: Sequence[int]) -> float:
        inputs = np.array([[direction.sos, *payload]], dtype=np.int64)
        targets = np.array([*payload, ReservedTokens.eos], dtype=np.int64)
        with precision(self.precision), no_grad():
            output = self.model.decoder.decode_parallel(inputs, self.memory)
        log_probs = log_softmax(output.logits.numpy()[0].astype(np.float64), axis=-1)
        return float(log_probs[np.arange(len(targets)), targets].sum())


PrefixFn = Callable[[Direction, Tuple[int, ...]], np.ndarray]


class TableScorer(Scorer):
    """Scores prefixes with a function of the direction and the tokens generated so far.

    Args:
        vocab_size: Number of token ids.
        log_probs: Maps ``(direction, prefix)`` to a ``[V]`` vector of log-probabilities.
    """

    def __init__(self, vocab_size: int, log_probs: PrefixFn):
        self.vocab_size = vocab_size
        self.log_probs = log_probs

    def start(
        self, direction: Direction, rows: int
    ) -> List[Tuple[Direction, Tuple[int, ...]]]:
        return [(direction, None)] * rows  # type: ignore

    def step(self, state: List[Any], tokens: np.ndarray) -> Tuple[np.ndarray, List[Any]]:
        # The first fed token is the start token, which is not part of the prefix.
        state = [
            (direction, tuple() if prefix is None else prefix + (int(token),))
            for (direction, prefix), token in zip(state, tokens)
        ]
        scores = np.stack([np.asarray(self.log_probs(d, p), dtype=float) for d, p in state])
        return scores, state

    def select(self, state: List[Any], rows: Sequence[int]) -> List[Any]:
        return [state[row] for row in rows]

    def sequence_logprob(self, direction: Direction, payload: Sequence[int]) -> float:
        prefix: Tuple[int, ...] = tuple()
        total = 0.0
        for token in [*payload, ReservedTokens.eos]:
            total += float(self.log_probs(direction, prefix)[token])
            prefix += (int(token),)
        return total


# ===== Search ====================================================================


def default_max_len(lengths: Sequence[int]) -> int:
    """Twice the longest label plus two."""
    return 2 * max(lengths, default=0) + 2


def beam_search(
    scorer: Scorer,
    direction: Direction = Direction.L2R,
    beam_size: int = 10,
    max_len: int = 32,
) -> List[Hypothesis]:
    """Best hypotheses in one reading order, best first.

    Live hypotheses are expanded by every emittable token; the ``beam_size`` best
      candidates survive, finished ones leave the beam. The search ends once
      ``beam_size`` hypotheses finished or ``max_len`` tokens were generated.

    Returns:
        Up to ``beam_size`` finished hypotheses. If none finished, the single best
          unfinished hypothesis (``finished`` is False) and a ComerWarning.

    Raises:
        UsageError: If ``beam_size`` or ``max_len`` is below 1.
    """
    if beam_size < 1 or max_len < 1:
        raise UsageError(
            f"beam_size and max_len must be at least 1; Found {beam_size} and {max_len}"
        )
    emittable = np.ones(scorer.vocab_size, dtype=bool)
    emittable[list(NON_EMITTABLE)] = False

    live = [Hypothesis(direction, tuple(), 0.0, False)]
    state = scorer.start(direction, 1)
    last = np.array([direction.sos])
    finished: List[Hypothesis] = list()
    for _ in range(max_len):
        log_probs, state = scorer.step(state, last)
        candidates: List[Tuple[Hypothesis, int]] = list()
        for row, hypothesis in enumerate(live):
            for token in np.flatnonzero(emittable & np.isfinite(log_probs[row])):
                token = int(token)
                candidates.append(
                    (
                        Hypothesis(
                            direction,
                            hypothesis.tokens + (token,),
                            hypothesis.logprob + float(log_probs[row, token]),
                            token == ReservedTokens.eos,
                        ),
                        row,
                    )
                )
        candidates.sort(key=lambda candidate: ranking_key(candidate[0]))
        survivors = candidates[:beam_size]
        finished.extend(hypothesis for hypothesis, _ in survivors if hypothesis.finished)
        continuing = [
            (hypothesis, row) for hypothesis, row in survivors if not hypothesis.finished
        ]
        if len(finished) >= beam_size or not continuing:
            live = [hypothesis for hypothesis, _ in continuing]
            break
        live = [hypothesis for hypothesis, _ in continuing]
        state = scorer.select(state, [row for _, row in continuing])
        last = np.array([hypothesis.tokens[-1] for hypothesis in live])

    if finished:
        return sorted(finished, key=ranking_key)[:beam_size]
    if not live:
        raise SearchError("Beam search produced no hypotheses")
    best = min(live, key=ranking_key)
    warnings.warn(
        f"No {direction.value} hypothesis finished within {max_len} tokens; "
        "returning the best unfinished one",
        ComerWarning,
    )
    return [best]


def greedy_search(
    scorer: Scorer, direction: Direction = Direction.L2R, max_len: int = 32
) -> Hypothesis:
    return beam_search(scorer, direction, 1, max_len)[0]


class JointCandidate(NamedTuple):
    """A candidate of the joint search.

    Args:
        hypothesis: The candidate as generated.
        own: Its length-normalized log-likelihood in its own direction.
        opposite: Length-normalized log-likelihood of the reversed sequence in the
          other direction.
    """

    hypothesis: Hypothesis
    own: float
    opposite: float

    @property
    def score(self) -> float:
        return (self.own + self.opposite) / 2

    @property
    def tokens(self) -> Tuple[int, ...]:
        return self.hypothesis.in_reading_order()


def best_joint(candidates: Sequence[JointCandidate]) -> JointCandidate:
    """The highest scoring candidate; ties go to the smallest left-to-right sequence.

    Raises:
        SearchError: If there are no candidates.
    """
    if not candidates:
        raise SearchError("Joint search received no candidates from either direction")
    return min(candidates, key=lambda candidate: (-candidate.score, candidate.tokens))


def approximate_joint_search(
    scorer: Scorer, beam_size: int = 10, max_len: int = 32
) -> JointCandidate:
    """Search both reading orders and rescore every candidate with the opposite one.

    Returns:
        The best candidate; its ``tokens`` are in left-to-right reading order.
    """
    candidates = list()
    for direction in Direction:
        for hypothesis in beam_search(scorer, direction, beam_size, max_len):
            payload = hypothesis.payload
            opposite = scorer.sequence_logprob(direction.opposite, payload[::-1])
            candidates.append(
                JointCandidate(hypothesis, hypothesis.score, opposite / (len(payload) + 1))
            )
    best = best_joint(candidates)
    logger.debug(
        "Joint search picked a %s candidate of %d tokens (score %.4f)",
        best.hypothesis.direction.value,
        len(best.tokens),
        best.score,
    )
    return best


def recognize(
    model: ComerModel,
    image: np.ndarray,
    beam_size: int = 10,
    max_len: int = 32,
    joint: bool = True,
) -> Tuple[int, ...]:
    """Token ids of the formula in ``image``, left to right."""
    scorer = ModelScorer(model, image)
    if joint:
        return approximate_joint_search(scorer, beam_size, max_len).tokens
    return beam_search(scorer, Direction.L2R, beam_size, max_len)[0].in_reading_order()
