""" A minimal deterministic tensor library with reverse-mode automatic differentiation. """
from .core import Precision, Tensor, get_precision, is_grad_enabled, no_grad, precision
from .ops import NormState
from .random import RandomStream

__all__ = [
    "NormState",
    "Precision",
    "RandomStream",
    "Tensor",
    "get_precision",
    "is_grad_enabled",
    "no_grad",
    "precision",
]
