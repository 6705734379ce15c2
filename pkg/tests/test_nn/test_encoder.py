""" Tests for comer/nn/encoder.py """
import numpy as np
import pytest
from comer.config import ArmConfig, EncoderConfig
from comer.errors import InputTooSmallError, ShapeError
from comer.nn.encoder import (
    DenseBlock,
    Encoder,
    Transition,
    dense_block,
    downsample_mask,
    transition,
)
from comer.tensor.core import Tensor, precision
from comer.tensor.gradcheck import GradientComparison
from comer.tensor.random import RandomStream

# ===== Fixtures ===========================================


@pytest.fixture(name="stream")
def _stream() -> RandomStream:
    """Fixture returning an initialization stream."""
    return RandomStream(0).child("encoder")


@pytest.fixture(name="toy_encoder")
def _toy_encoder(stream) -> Encoder:
    """Fixture returning the encoder of the toy preset in eval mode."""
    encoder = Encoder(EncoderConfig("toy"), ArmConfig("toy"), 64, stream)
    encoder.eval()
    return encoder


# ===== Dense blocks =======================================


class TestDenseBlock:
    """Tests for dense blocks."""

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("layers, growth, c_in, expected", [
        (1, 4, 8, 12),
        (16, 24, 48, 432),
        (3, 8, 16, 40),
    ])
    # fmt: on
    def test_channel_count(stream, layers, growth, c_in, expected):
        """A block adds ``D · k`` channels to its input."""
        # Arrange
        config = EncoderConfig("toy", layers_per_block=layers, growth_rate=growth)

        # Act
        block = DenseBlock(c_in, config, ArmConfig("toy"), stream)

        # Assert
        assert block.c_out == expected

    @staticmethod
    def test_output_shape(stream, rng):
        """The output keeps the spatial size and has ``c_in + D · k`` channels."""
        # Arrange
        config = EncoderConfig("toy", layers_per_block=1, growth_rate=4, dropout=0.0)
        block = DenseBlock(8, config, ArmConfig("toy"), stream)

        # Act
        out = dense_block(Tensor(rng.normal(size=(2, 5, 6, 8))), block)

        # Assert
        assert out.shape == (2, 5, 6, 12)

    @staticmethod
    def test_zero_layers_append_zeros(stream, rng):
        """Zero-weight layers emit zero channels after the untouched input."""
        # Arrange
        config = EncoderConfig("toy", layers_per_block=2, growth_rate=3, dropout=0.0)
        block = DenseBlock(4, config, ArmConfig("toy"), stream)
        for name, param in block.named_parameters():
            if name.endswith("weight"):
                param.data = np.zeros_like(param.data)
        x = Tensor(rng.normal(size=(1, 4, 4, 4)))

        # Act
        out = block(x)

        # Assert
        np.testing.assert_array_equal(out.data[..., :4], x.data)
        np.testing.assert_array_equal(out.data[..., 4:], 0)

    @staticmethod
    def test_wrong_channels_error(stream, rng):
        """An input with the wrong channel count is refused."""
        # Arrange
        config = EncoderConfig("toy", layers_per_block=1, growth_rate=4)
        block = DenseBlock(8, config, ArmConfig("toy"), stream)

        # Act & Assert
        with pytest.raises(ShapeError):
            block(Tensor(rng.normal(size=(1, 4, 4, 7))))

    @staticmethod
    def test_gradient(stream, rng):
        """Analytic gradients of a two-layer block match finite differences."""
        with precision("double"):
            # Arrange
            config = EncoderConfig(
                "toy", layers_per_block=2, growth_rate=2, bottleneck_factor=2, dropout=0.0
            )
            block = DenseBlock(3, config, ArmConfig("toy"), stream)
            x = Tensor(rng.normal(size=(2, 4, 4, 3)))
            weights = Tensor(rng.normal(size=(2, 4, 4, 7)))

            # Act
            comparison = GradientComparison(
                lambda: (block(x) * weights).sum(), block.parameters(), probes=60
            )

        # Assert
        assert comparison.equal, comparison.differences.items


# ===== Transitions ========================================


class TestTransition:
    """Tests for transition layers."""

    # fmt: off
    @staticmethod
    @pytest.mark.parametrize("shape, expected", [
        ((1, 16, 16, 100), (1, 8, 8, 50)),
        ((1, 7, 9, 10), (1, 4, 5, 5)),
        ((2, 2, 3, 3), (2, 1, 2, 1)),
    ])
    # fmt: on
    def test_shapes(stream, shape, expected):
        """Spatial sizes halve (after padding to even) and channels shrink by θ."""
        # Arrange
        layer = Transition(shape[-1], 0.5, ArmConfig("toy"), stream)

        # Act
        out = transition(Tensor(np.ones(shape)), layer)

        # Assert
        assert out.shape == expected

    @staticmethod
    def test_constant_input(stream):
        """An identity 1×1 convolution passes a constant through the average pool."""
        # Arrange
        layer = Transition(3, 1.0, ArmConfig("toy"), stream)
        layer.conv.weight.data = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
        layer.eval()

        # Act
        out = layer(Tensor(np.full((1, 6, 6, 3), 0.7)))

        # Assert
        np.testing.assert_allclose(out.data, 0.7, atol=1e-4)


# ===== Encoder ============================================


class TestEncoder:
    """Tests for the full encoder."""

    @staticmethod
    def test_toy_stride(toy_encoder):
        """The toy encoder maps a 64×128 image onto an 8×16 grid of d_model features."""
        # Act
        grid = toy_encoder.encode(np.zeros((1, 64, 128)))

        # Assert
        assert toy_encoder.total_stride == 8
        assert grid.features.shape == (1, 8, 16, 64)
        assert (grid.h_o, grid.w_o, grid.cells) == (8, 16, 128)
        assert grid.mask.all()

    @staticmethod
    def test_padding_columns_are_masked(toy_encoder):
        """Columns made entirely of padding pixels are invalid cells."""
        # Arrange
        mask = np.ones((1, 32, 64), dtype=bool)
        mask[:, :, 36:] = False

        # Act
        grid = toy_encoder.encode(np.zeros((1, 32, 64)), mask)

        # Assert
        assert grid.mask[:, :, :5].all()
        assert not grid.mask[:, :, 5:].any()
        assert grid.flat_mask().shape == (1, 32)

    @staticmethod
    def test_identical_images_identical_features(toy_encoder, rng):
        """Encoding is a deterministic function of the image."""
        # Arrange
        image = rng.uniform(size=(1, 24, 40))

        # Act
        grid = toy_encoder.encode(np.concatenate([image, image]))

        # Assert
        np.testing.assert_array_equal(grid.features.data[0], grid.features.data[1])

    @staticmethod
    def test_input_too_small(toy_encoder):
        """Images smaller than the total stride are refused."""
        with pytest.raises(InputTooSmallError):
            toy_encoder.encode(np.zeros((1, 4, 32)))

    @staticmethod
    def test_item_without_valid_cells(toy_encoder):
        """An image whose mask covers no pixel is refused, naming the batch item."""
        # Arrange
        mask = np.ones((2, 32, 64), dtype=bool)
        mask[1] = False

        # Act & Assert
        with pytest.raises(ShapeError, match=r"\[1\]"):
            toy_encoder.encode(np.zeros((2, 32, 64)), mask)

    @staticmethod
    def test_checkpoint_names(toy_encoder):
        """Parameters follow the ``block{i}.layer{j}`` naming."""
        # Act
        names = list(toy_encoder.state_dict())

        # Assert
        assert "block1.layer1.conv1.weight" in names
        assert "block2.layer3.conv2.weight" in names
        assert "transition1.conv.weight" in names
        assert "final.bias" in names


def test_downsample_mask():
    """A cell is valid when any pixel of its footprint is."""
    # Arrange
    mask = np.zeros((1, 4, 6), dtype=bool)
    mask[0, 1, 4] = True

    # Act
    cells = downsample_mask(mask, 2, 2, 3)

    # Assert
    np.testing.assert_array_equal(cells[0], [[False, False, True], [False, False, False]])
