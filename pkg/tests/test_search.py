""" Tests for comer/search.py """
import itertools
import math
from typing import Dict, Tuple

import numpy as np
import pytest
from comer.constants import ReservedTokens
from comer.errors import ComerWarning, SearchError, UsageError
from comer.nn.model import ComerModel
from comer.search import (
    Direction,
    Hypothesis,
    JointCandidate,
    ModelScorer,
    TableScorer,
    approximate_joint_search,
    beam_search,
    best_joint,
    default_max_len,
    greedy_search,
    recognize,
)

A, B, EOS = 4, 5, ReservedTokens.eos
VOCAB_SIZE = 6

# ===== Fixtures ===========================================


def markov_table(transitions: Dict[int, Dict[int, float]]) -> TableScorer:
    """Scorer whose next-token distribution depends on the last token only."""

    def log_probs(direction: Direction, prefix: Tuple[int, ...]) -> np.ndarray:
        last = prefix[-1] if prefix else direction.sos
        row = np.full(VOCAB_SIZE, -np.inf)
        for token, probability in transitions.get(last, dict()).items():
            row[token] = math.log(probability)
        return row

    return TableScorer(VOCAB_SIZE, log_probs)


@pytest.fixture(name="greedy_trap")
def _greedy_trap() -> TableScorer:
    """The greedy first token leads to a worse finished sequence."""
    return markov_table(
        {
            ReservedTokens.sos_l2r: {A: 0.6, B: 0.4},
            ReservedTokens.sos_r2l: {A: 0.6, B: 0.4},
            A: {EOS: 0.5, A: 0.25, B: 0.25},
            B: {EOS: 0.95, A: 0.025, B: 0.025},
        }
    )


def exhaustive_best(scorer: TableScorer, max_len: int) -> Hypothesis:
    """Best finished hypothesis over every sequence of emittable tokens."""
    best = None
    for length in range(max_len):
        for payload in itertools.product((A, B), repeat=length):
            logprob = scorer.sequence_logprob(Direction.L2R, payload)
            if not np.isfinite(logprob):
                continue
            hypothesis = Hypothesis(Direction.L2R, payload + (EOS,), logprob, True)
            if best is None or (-hypothesis.score, hypothesis.tokens) < (
                -best.score,
                best.tokens,
            ):
                best = hypothesis
    assert best is not None
    return best


# ===== Tests ==============================================


class TestHypothesis:
    """Tests for the Hypothesis type."""

    @staticmethod
    def test_score_counts_end_token():
        """The start token is not counted, the end token is."""
        # Arrange
        hypothesis = Hypothesis(Direction.L2R, (A, B, EOS), -3.0, True)

        # Act & Assert
        assert hypothesis.score == -1.0
        assert hypothesis.payload == (A, B)

    @staticmethod
    def test_reading_order():
        """Right-to-left payloads are reversed."""
        # Arrange
        hypothesis = Hypothesis(Direction.R2L, (A, B, EOS), -1.0, True)

        # Act & Assert
        assert hypothesis.in_reading_order() == (B, A)


class TestBeamSearch:
    """Tests for beam search over a hand-built distribution."""

    @staticmethod
    def test_beam_one_is_greedy(greedy_trap):
        """A single beam follows the most likely first token."""
        # Act
        result = beam_search(greedy_trap, Direction.L2R, beam_size=1, max_len=4)

        # Assert
        assert result[0].tokens == (A, EOS)
        assert result[0].score == pytest.approx((math.log(0.6) + math.log(0.5)) / 2)
        assert greedy_search(greedy_trap, Direction.L2R, 4) == result[0]

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("beam_size", [2, 4, 8])
    # fmt: on
    def test_wider_beams_find_optimum(greedy_trap, beam_size):
        """A beam of two already recovers the exhaustive best sequence."""
        # Act
        result = beam_search(greedy_trap, Direction.L2R, beam_size, max_len=4)

        # Assert
        expected = exhaustive_best(greedy_trap, max_len=4)
        assert result[0].tokens == expected.tokens == (B, EOS)
        assert result[0].score == pytest.approx((math.log(0.4) + math.log(0.95)) / 2)

    @staticmethod
    def test_scores_monotone_in_beam_size(greedy_trap):
        """A wider beam never returns a worse best hypothesis on this distribution."""
        # Act
        scores = [
            beam_search(greedy_trap, Direction.L2R, beam, max_len=4)[0].score
            for beam in (1, 2, 4, 8)
        ]

        # Assert
        assert scores == sorted(scores)

    @staticmethod
    def test_results_sorted_and_finished(greedy_trap):
        """Returned hypotheses are finished and best first."""
        # Act
        result = beam_search(greedy_trap, Direction.L2R, beam_size=4, max_len=4)

        # Assert
        assert all(hypothesis.finished for hypothesis in result)
        assert [h.score for h in result] == sorted((h.score for h in result), reverse=True)

    @staticmethod
    def test_ties_break_to_smallest_tokens():
        """Equal scores are ordered by the token-id sequence."""
        # Arrange
        scorer = markov_table(
            {ReservedTokens.sos_l2r: {A: 0.5, B: 0.5}, A: {EOS: 1.0}, B: {EOS: 1.0}}
        )

        # Act
        result = beam_search(scorer, Direction.L2R, beam_size=2, max_len=3)

        # Assert
        assert [hypothesis.tokens for hypothesis in result] == [(A, EOS), (B, EOS)]

    @staticmethod
    def test_reserved_tokens_never_emitted():
        """Padding and start tokens are skipped even when most likely."""
        # Arrange
        scorer = markov_table(
            {
                ReservedTokens.sos_l2r: {
                    ReservedTokens.pad: 0.5,
                    ReservedTokens.sos_r2l: 0.4,
                    A: 0.1,
                },
                A: {EOS: 1.0},
            }
        )

        # Act
        result = beam_search(scorer, Direction.L2R, beam_size=3, max_len=3)

        # Assert
        assert [hypothesis.tokens for hypothesis in result] == [(A, EOS)]

    @staticmethod
    def test_unfinished_warns(warning_catcher):
        """Without an end token the best unfinished hypothesis is returned."""
        # Arrange
        scorer = markov_table({ReservedTokens.sos_l2r: {A: 1.0}, A: {A: 1.0}})

        # Act
        result = beam_search(scorer, Direction.L2R, beam_size=2, max_len=3)

        # Assert
        assert result == [Hypothesis(Direction.L2R, (A, A, A), 0.0, False)]
        assert warning_catcher[0].category == ComerWarning

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("beam_size, max_len", [(0, 4), (2, 0), (-1, -1)])
    # fmt: on
    def test_rejects_bad_arguments(greedy_trap, beam_size, max_len):
        """Beam size and length limit must be positive."""
        # Act & Assert
        with pytest.raises(UsageError):
            beam_search(greedy_trap, Direction.L2R, beam_size, max_len)

    @staticmethod
    def test_default_max_len():
        """Twice the longest label plus two."""
        # Act & Assert
        assert default_max_len([3, 9, 5]) == 20


class TestJointSearch:
    """Tests for rescoring candidates with the opposite direction."""

    @staticmethod
    def test_mean_of_both_directions():
        """The candidate with the better mean wins over the better own score."""
        # Arrange
        l2r = JointCandidate(Hypothesis(Direction.L2R, (A, EOS), -2.0, True), -1.0, -3.0)
        r2l = JointCandidate(Hypothesis(Direction.R2L, (B, EOS), -3.0, True), -1.5, -1.6)

        # Act
        best = best_joint([l2r, r2l])

        # Assert
        assert best is r2l
        assert best.score == pytest.approx(-1.55)
        assert l2r.score == pytest.approx(-2.0)

    @staticmethod
    def test_tie_breaks_on_reading_order():
        """Equal scores go to the smallest left-to-right token sequence."""
        # Arrange
        r2l = Hypothesis(Direction.R2L, (A, B, EOS), -2.0, True)
        l2r = Hypothesis(Direction.L2R, (A, B, EOS), -2.0, True)
        first, second = JointCandidate(r2l, -1.0, -1.0), JointCandidate(l2r, -1.0, -1.0)

        # Act
        best = best_joint([first, second])

        # Assert
        assert best.tokens == (A, B)

    @staticmethod
    def test_no_candidates():
        """An empty candidate list is an error."""
        # Act & Assert
        with pytest.raises(SearchError):
            best_joint([])

    @staticmethod
    def test_unanimous_directions(greedy_trap):
        """When both directions agree the joint result is that sequence."""
        # Act
        best = approximate_joint_search(greedy_trap, beam_size=2, max_len=4)

        # Assert
        assert best.tokens == (B,)
        expected = (math.log(0.4) + math.log(0.95)) / 2
        assert best.own == pytest.approx(expected)
        assert best.opposite == pytest.approx(expected)

    @staticmethod
    def test_opposite_direction_rescoring():
        """The other direction's opinion can overturn the left-to-right favourite."""
        # Arrange
        scorer = markov_table(
            {
                ReservedTokens.sos_l2r: {A: 0.6, B: 0.4},
                ReservedTokens.sos_r2l: {A: 0.3, B: 0.7},
                A: {EOS: 1.0},
                B: {EOS: 1.0},
            }
        )

        # Act
        left_to_right = beam_search(scorer, Direction.L2R, beam_size=2, max_len=3)
        best = approximate_joint_search(scorer, beam_size=2, max_len=3)

        # Assert
        assert left_to_right[0].tokens == (A, EOS)
        assert best.tokens == (B,)
        assert best.score == pytest.approx((math.log(0.4) + math.log(0.7)) / 4)


class TestModelScorer:
    """Tests for searching with a real (untrained) model."""

    @staticmethod
    @pytest.fixture(name="model")
    def _model(tiny_config) -> ComerModel:
        """Fixture returning a tiny model in eval mode."""
        return ComerModel(tiny_config, vocab_size=9).eval()

    @staticmethod
    def test_step_log_probs_normalized(model, rng):
        """Each step yields a normalized distribution per row."""
        # Arrange
        scorer = ModelScorer(model, rng.uniform(size=(16, 24)))
        state = scorer.start(Direction.L2R, 2)

        # Act
        log_probs, _ = scorer.step(state, np.array([Direction.L2R.sos] * 2))

        # Assert
        assert log_probs.shape == (2, 9)
        np.testing.assert_allclose(np.exp(log_probs).sum(axis=1), 1.0, rtol=1e-5)

    @staticmethod
    def test_incremental_matches_parallel(model, rng):
        """Summed step log-probabilities equal the teacher-forced likelihood."""
        # Arrange
        scorer = ModelScorer(model, rng.uniform(size=(16, 24)))
        payload = (4, 6, 5)
        state = scorer.start(Direction.R2L, 1)

        # Act
        total = 0.0
        for fed, target in zip((Direction.R2L.sos, *payload), (*payload, EOS)):
            log_probs, state = scorer.step(state, np.array([fed]))
            total += log_probs[0, target]

        # Assert
        expected = scorer.sequence_logprob(Direction.R2L, payload)
        assert total == pytest.approx(expected, rel=1e-4)

    @staticmethod
    def test_recognize_is_deterministic(model, rng, warning_catcher):
        """The same image decodes to the same tokens."""
        # Arrange
        image = rng.uniform(size=(16, 24))

        # Act
        first = recognize(model, image, beam_size=2, max_len=5)
        second = recognize(model, image, beam_size=2, max_len=5)

        # Assert
        assert first == second
        assert all(token not in (0, 1, 2, 3) for token in first)
