""" Custom errors and warnings for the comer library. """
import re


class ComerWarning(UserWarning):
    """Custom UserWarning for the comer library."""


class ComerError(Exception):
    """Base class of every error raised deliberately by the comer library.

    The ``code`` property is a short, stable, machine-parseable identifier used by the
      command line interface when reporting failures, e.g. ``dimension-error``.
    """

    @property
    def code(self) -> str:
        """Kebab-cased class name."""
        return re.sub(r"(?<!^)(?=[A-Z])", "-", type(self).__name__).lower()


class DimensionError(ComerError, ValueError):
    """Operand shapes are incompatible."""


class ShapeError(ComerError, ValueError):
    """A tensor does not have the shape an operation was configured for."""


class DegenerateSliceError(ComerError, ValueError):
    """Every position of a softmax slice is masked."""


class NonFiniteError(ComerError, FloatingPointError):
    """A forward operation produced NaN or Inf."""


class PrecisionError(ComerError, TypeError):
    """Operands of a single computation graph have different precisions."""


class NormStateError(ComerError, RuntimeError):
    """Normalization was evaluated without running statistics."""


class UsageError(ComerError, ValueError):
    """An API or the command line was called incorrectly."""


class ConfigError(ComerError, ValueError):
    """A configuration value or key is invalid."""


class ConfigTypeError(ConfigError, TypeError):
    """A configuration value has the wrong type."""


class InputTooSmallError(ComerError, ValueError):
    """An image is smaller than the total stride of the encoder."""


class WiringError(ComerError, RuntimeError):
    """A decoder layer is missing the attention weights its coverage mode needs."""


class VocabularyError(ComerError, KeyError):
    """A token or token id is not part of the vocabulary."""

    def __str__(self) -> str:
        # KeyError quotes its message; keep single-line messages readable.
        return str(self.args[0]) if self.args else ""


class DecodeStateError(ComerError, RuntimeError):
    """A decoding cache is inconsistent with the requested step."""


class AtlasError(ComerError, KeyError):
    """A symbol has no glyph tile."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class DegenerateTargetError(ComerError, ValueError):
    """A target sequence contributes no tokens to the loss."""


class TrainingDivergedError(ComerError, FloatingPointError):
    """The training loss became NaN or Inf."""


class CheckpointError(ComerError, IOError):
    """A checkpoint is malformed or does not fit the model."""


class SearchError(ComerError, RuntimeError):
    """The decoding search produced no candidates."""
