""" Tests for comer/nn/attention.py """
import math

import numpy as np
import pytest
from comer.constants import MASK_SENTINEL
from comer.errors import ConfigError, ShapeError
from comer.nn.attention import (
    AttentionRefinement,
    MultiHeadAttention,
    arm,
    multi_head_attention,
    phi,
)
from comer.tensor import ops
from comer.tensor.core import Tensor, no_grad, precision
from comer.tensor.gradcheck import GradientComparison
from comer.tensor.memory import AllocationTracker
from comer.tensor.random import RandomStream

# ===== Fixtures ===========================================


@pytest.fixture(name="stream")
def _stream() -> RandomStream:
    """Fixture returning an initialization stream."""
    return RandomStream(3).child("attention")


def _randomize(
    module: AttentionRefinement, rng: np.random.Generator
) -> AttentionRefinement:
    """Random parameters and running statistics, in eval mode."""
    for _, param in module.named_parameters():
        param.data = rng.normal(size=param.shape).astype(param.dtype)
    module.norm.state.running_mean = rng.normal(size=module.heads)
    module.norm.state.running_var = rng.uniform(0.5, 2.0, size=module.heads)
    module.eval()
    return module


def _attention_weights(rng: np.random.Generator, shape) -> Tensor:
    """Random rows summing to 1 over the last axis."""
    return ops.softmax(Tensor(rng.normal(size=shape)), axis=-1)


def _naive_refinement(
    weights: np.ndarray, module: AttentionRefinement, h_o: int, w_o: int
) -> np.ndarray:
    """Refinement term of ``[h_in, T, L]`` weights computed position by position."""
    kernel, bias = module.conv.weight.data, module.conv.bias.data
    projection = module.proj.weight.data
    norm = module.norm
    size = kernel.shape[0]
    pad = size // 2
    heads_in, steps, cells = weights.shape
    refinement = np.zeros((module.heads, steps, cells))
    for t in range(steps):
        coverage = np.zeros((h_o, w_o, heads_in))
        for s in range(t):
            for c in range(heads_in):
                coverage[:, :, c] += weights[c, s].reshape(h_o, w_o)
        for x in range(h_o):
            for y in range(w_o):
                feature = bias.astype(np.float64).copy()
                for di in range(size):
                    for dj in range(size):
                        i, j = x + di - pad, y + dj - pad
                        if 0 <= i < h_o and 0 <= j < w_o:
                            feature += coverage[i, j] @ kernel[di, dj]
                projected = np.maximum(feature, 0) @ projection
                normalized = (projected - norm.state.running_mean) / np.sqrt(
                    norm.state.running_var + norm.eps
                )
                scaled = normalized * norm.gamma.data + norm.beta.data
                refinement[:, t, x * w_o + y] = scaled
    return refinement


# ===== Multi-head attention ===============================


class TestMultiHeadAttention:
    """Tests for scaled dot-product attention."""

    @staticmethod
    def test_closed_form(stream):
        """One head over two keys reproduces the closed-form softmax."""
        # Arrange
        attention = MultiHeadAttention(2, 1, stream)
        projections = (attention.query, attention.key, attention.value, attention.output)
        for projection in projections:
            projection.weight.data = np.eye(2, dtype=np.float32)
        query = Tensor([[[math.sqrt(2), 0.0]]])
        source = Tensor([[[1.0, 0.0], [0.0, 1.0]]])

        # Act
        _, weights = multi_head_attention(attention, query, source)

        # Assert
        np.testing.assert_allclose(weights.E.data[0, 0, 0], [1.0, 0.0], atol=1e-6)
        np.testing.assert_allclose(
            weights.A.data[0, 0, 0], [math.e / (math.e + 1), 1 / (math.e + 1)], atol=1e-6
        )

    @staticmethod
    def test_identical_values_are_preserved(stream, rng):
        """Attention over identical values returns the (projected) value for any query."""
        # Arrange
        attention = MultiHeadAttention(8, 2, stream)
        row = rng.normal(size=8)
        source = Tensor(np.tile(row, (1, 5, 1)))
        hidden = Tensor(rng.normal(size=(1, 3, 8)))

        # Act
        out, _ = attention(hidden, source)

        # Assert
        expected = attention.output(attention.value(Tensor(row[None, None])))
        repeated = np.repeat(expected.data[0], 3, axis=0)
        np.testing.assert_allclose(out.data[0], repeated, atol=1e-5)

    @staticmethod
    def test_causal_mask(stream, rng):
        """Weights above the diagonal are exactly zero and rows sum to one."""
        # Arrange
        attention = MultiHeadAttention(8, 2, stream)
        hidden = Tensor(rng.normal(size=(2, 3, 8)))

        # Act
        _, weights = attention(hidden, hidden, causal=True)

        # Assert
        upper = np.triu(np.ones((3, 3), dtype=bool), k=1)
        assert (weights.A.data[:, :, upper] == 0).all()
        assert (weights.E.data[:, :, upper] == MASK_SENTINEL).all()
        np.testing.assert_allclose(weights.A.data.sum(axis=-1), 1.0, atol=1e-6)

    @staticmethod
    def test_key_mask(stream, rng):
        """Masked keys receive exactly zero weight."""
        # Arrange
        attention = MultiHeadAttention(8, 4, stream)
        key_mask = np.array([[True, False, True, True]])

        # Act
        hidden = Tensor(rng.normal(size=(1, 2, 8)))
        source = Tensor(rng.normal(size=(1, 4, 8)))
        _, weights = attention(hidden, source, key_mask)

        # Assert
        assert (weights.A.data[..., 1] == 0).all()
        np.testing.assert_array_equal(weights.key_mask, key_mask)

    @staticmethod
    def test_causality_probe(stream, rng):
        """Outputs at step t do not depend on inputs after t."""
        # Arrange
        attention = MultiHeadAttention(8, 2, stream)
        hidden = rng.normal(size=(1, 4, 8))
        perturbed = hidden.copy()
        perturbed[:, 3] += 5.0

        # Act
        out, _ = attention(Tensor(hidden), Tensor(hidden), causal=True)
        out_perturbed, _ = attention(Tensor(perturbed), Tensor(perturbed), causal=True)

        # Assert
        np.testing.assert_array_equal(out.data[:, :3], out_perturbed.data[:, :3])

    @staticmethod
    def test_heads_must_divide(stream):
        """d_model must split evenly across heads."""
        with pytest.raises(ConfigError):
            MultiHeadAttention(10, 4, stream)


# ===== Attention refinement ===============================


class TestPhi:
    """Tests for the coverage refinement function."""

    @staticmethod
    def test_zero_parameters_give_zero(stream, rng):
        """A zeroed module yields a zero refinement term in training mode."""
        # Arrange
        module = AttentionRefinement(2, 2, 5, 16, stream)
        module.zero_()

        # Act
        refinement = phi(_attention_weights(rng, (2, 2, 4, 12)), 3, 4, module)

        # Assert
        assert refinement.shape == (2, 2, 4, 12)
        assert (refinement.data == 0).all()

    @staticmethod
    def test_first_step_has_no_coverage(stream, rng):
        """Without a bias, the first step sees empty coverage and a zero term."""
        # Arrange
        module = _randomize(AttentionRefinement(2, 2, 3, 4, stream), rng)
        module.conv.bias.data = np.zeros_like(module.conv.bias.data)
        module.norm.state.reset()
        module.norm.beta.data = np.zeros_like(module.norm.beta.data)

        # Act
        refinement = phi(_attention_weights(rng, (1, 2, 1, 6)), 2, 3, module)

        # Assert
        np.testing.assert_allclose(refinement.data, 0.0, atol=1e-7)

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("heads_in, kernel_size, channels", [
        (2, 1, 2),
        (2, 3, 3),
        (4, 3, 2),
    ])
    # fmt: on
    def test_naive_loop_oracle(stream, rng, heads_in, kernel_size, channels):
        """The parallel pass matches a position-by-position computation."""
        with precision("double"):
            # Arrange
            module = AttentionRefinement(heads_in, 2, kernel_size, channels, stream)
            module = _randomize(module, rng)
            weights = _attention_weights(rng, (1, heads_in, 4, 12))

            # Act
            refinement = module.phi(weights, 3, 4)

        # Assert
        expected = _naive_refinement(weights.data[0], module, 3, 4)
        np.testing.assert_allclose(refinement.data[0], expected, atol=1e-6)

    @staticmethod
    def test_sequential_recomputation(stream, rng):
        """Refining one step at a time from running coverage equals the parallel pass."""
        # Arrange
        module = _randomize(AttentionRefinement(4, 2, 5, 8, stream), rng)
        weights = _attention_weights(rng, (2, 4, 6, 20))
        coverage = np.zeros((2, 1, 20, 4), dtype=np.float32)
        rows = list()

        # Act
        parallel = module.phi(weights, 4, 5)
        for t in range(6):
            rows.append(module.refine_coverage(Tensor(coverage), 4, 5).data)
            coverage = coverage + weights.data[:, :, t].transpose(0, 2, 1)[:, None]

        # Assert
        np.testing.assert_allclose(
            parallel.data, np.concatenate(rows, axis=2), rtol=1e-5, atol=1e-5
        )

    @staticmethod
    def test_later_steps_do_not_leak(stream, rng):
        """Changing the weights of step t changes no refinement row up to t."""
        # Arrange
        module = _randomize(AttentionRefinement(2, 2, 3, 4, stream), rng)
        weights = rng.uniform(size=(1, 2, 5, 6))
        perturbed = weights.copy()
        perturbed[:, :, 3] += 1.0

        # Act
        refinement = module.phi(Tensor(weights), 2, 3)
        refinement_perturbed = module.phi(Tensor(perturbed), 2, 3)

        # Assert
        before, after = refinement.data, refinement_perturbed.data
        np.testing.assert_array_equal(before[:, :, :4], after[:, :, :4])
        assert not np.array_equal(before[:, :, 4], after[:, :, 4])

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("cells, h_o, w_o, heads_in", [
        (12, 3, 5, 2),
        (12, 3, 4, 3),
    ])
    # fmt: on
    def test_shape_errors(stream, rng, cells, h_o, w_o, heads_in):
        """Cells must fill the grid and channels must match the module."""
        # Arrange
        module = AttentionRefinement(2, 2, 3, 4, stream)

        # Act & Assert
        with pytest.raises(ShapeError):
            module.phi(_attention_weights(rng, (1, heads_in, 2, cells)), h_o, w_o)

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("steps, h_o, w_o, heads, heads_in, channels", [
        (16, 8, 8, 4, 4, 16),
        (16, 8, 8, 4, 8, 16),
        (32, 16, 16, 8, 8, 32),
        (32, 16, 16, 8, 16, 32),
    ])
    # fmt: on
    def test_peak_memory_is_linear_in_coverage(
        stream, rng, steps, h_o, w_o, heads, heads_in, channels
    ):
        """No buffer scales with heads times coverage channels.

        The peak stays within 4·T·L·max(h_in, d_c) floats.
        """
        # Arrange
        module = AttentionRefinement(heads_in, heads, 5, channels, stream).eval()
        weights = _attention_weights(rng, (1, heads_in, steps, h_o * w_o))
        cells = steps * h_o * w_o

        # Act
        with no_grad(), AllocationTracker() as tracker:
            refinement = module.phi(weights, h_o, w_o)

        # Assert
        assert refinement.shape == (1, heads, steps, h_o * w_o)
        assert tracker.peak_floats <= 4 * cells * max(heads_in, channels)
        assert tracker.largest_floats < cells * heads * channels


class TestArm:
    """Tests for applying the refinement to attention scores."""

    @staticmethod
    def test_zero_module_is_identity(stream, rng):
        """A zeroed module leaves the scores bitwise unchanged."""
        # Arrange
        module = AttentionRefinement(2, 2, 5, 8, stream)
        module.zero_()
        module.eval()
        key_mask = np.ones((1, 6), dtype=bool)
        key_mask[0, 4:] = False
        scores = Tensor(rng.normal(size=(1, 2, 3, 6)))
        energy = ops.masked_fill(scores, ~key_mask[:, None, None, :], MASK_SENTINEL)
        weights = ops.softmax(energy, axis=-1)

        # Act
        refined, refinement = arm(energy, weights, 2, 3, module, key_mask)

        # Assert
        np.testing.assert_array_equal(refined.data, energy.data)
        assert (refinement.data == 0).all()

    @staticmethod
    def test_refinement_suppresses_attention(stream, rng):
        """A positive refinement at one position lowers its weight."""
        # Arrange
        module = AttentionRefinement(1, 1, 3, 2, stream)
        energy = Tensor(rng.normal(size=(1, 1, 2, 4)))
        refinement = np.zeros((1, 1, 2, 4))
        refinement[0, 0, 1, 2] = 3.0

        # Act
        refined = module.refine(energy, Tensor(refinement), np.ones((1, 4), dtype=bool))

        # Assert
        before = ops.softmax(energy).data[0, 0, 1, 2]
        after = ops.softmax(refined).data[0, 0, 1, 2]
        assert after < before

    @staticmethod
    def test_masked_keys_keep_sentinel(stream, rng):
        """Invalid keys hold the sentinel after refinement."""
        # Arrange
        module = _randomize(AttentionRefinement(2, 2, 3, 4, stream), rng)
        key_mask = np.array([[True, True, False, True, True, False]])
        scores = Tensor(rng.normal(size=(1, 2, 3, 6)))
        energy = ops.masked_fill(scores, ~key_mask[:, None, None, :], MASK_SENTINEL)

        # Act
        refined, _ = arm(energy, ops.softmax(energy), 2, 3, module, key_mask)

        # Assert
        assert (refined.data[..., ~key_mask[0]] == MASK_SENTINEL).all()
        assert (ops.softmax(refined).data[..., ~key_mask[0]] == 0).all()

    @staticmethod
    def test_gradient(stream, rng):
        """Gradients through the refined attention match finite differences."""
        with precision("double"):
            # Arrange
            module = AttentionRefinement(2, 2, 3, 3, stream)
            scores = Tensor(rng.normal(size=(2, 2, 3, 6)), requires_grad=True)
            target = Tensor(rng.normal(size=(2, 2, 3, 6)))
            key_mask = np.ones((2, 6), dtype=bool)

            def loss() -> Tensor:
                weights = ops.softmax(scores)
                refined, _ = arm(scores, weights, 2, 3, module, key_mask)
                return (ops.softmax(refined) * target).sum()

            params = {"scores": scores, **module.parameters()}

            # Act
            comparison = GradientComparison(loss, params)

        # Assert
        assert comparison.equal, comparison.differences.items
