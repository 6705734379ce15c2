""" Comparison of analytic gradients against central finite differences. """
from math import isclose
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from ..errors import PrecisionError
from .core import Tensor, no_grad

Probe = Tuple[str, Tuple[int, ...]]


class GradientComparison:
    """Class for comparing the gradients of a scalar function with finite differences.

    The analytic gradient comes from a single ``backward`` call. The numerical gradient
      of each probed element is ``(f(p + eps) - f(p - eps)) / (2 eps)``.

    Examples:
        >>> x = Tensor(np.ones(3), requires_grad=True)
        >>> comparison = GradientComparison(lambda: (x * x).sum(), {"x": x})
        >>> assert comparison.equal, comparison.differences.items
    """

    def __init__(
        self,
        loss_fn: Callable[[], Tensor],
        params: Dict[str, Tensor],
        eps: float = 1e-5,
        rel_tol: float = 1e-4,
        abs_tol: float = 1e-7,
        probes: Optional[int] = None,
        rng: Optional[np.random.Generator] = None,
    ):
        """
        Args:
            loss_fn: Deterministic function recomputing the scalar loss from ``params``.
            params: The tensors whose gradients are checked. Must be double precision.
            eps: Finite-difference perturbation.
            rel_tol: Relative tolerance of the comparison.
            abs_tol: Absolute tolerance, for gradients that vanish.
            probes: If given, the number of randomly chosen elements to check;
              otherwise every element of every parameter is checked.
            rng: Generator used to choose the probed elements.

        Raises:
            PrecisionError: If a parameter is not double precision.
        """
        for name, param in params.items():
            if param.dtype != np.float64:
                raise PrecisionError(
                    f"Gradient checks need double precision; {name} is {param.dtype}"
                )
        self.loss_fn = loss_fn
        self.params = params
        self.eps = eps
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.differences = _Differences()
        self.checked: List[Probe] = list()
        self.max_relative_error = 0.0
        self._compare(self._choose_probes(probes, rng or np.random.default_rng(0)))

    def __bool__(self) -> bool:
        """Returns True if no differences were detected."""
        return not bool(self.differences.items)

    @property
    def equal(self) -> bool:
        """Returns True if no differences were detected."""
        return bool(self)

    def _choose_probes(
        self, probes: Optional[int], rng: np.random.Generator
    ) -> List[Probe]:
        every = [
            (name, tuple(int(i) for i in index))
            for name, param in self.params.items()
            for index in np.ndindex(*param.shape)
        ]
        if probes is None or probes >= len(every):
            return every
        chosen = rng.choice(len(every), size=probes, replace=False)
        return [every[i] for i in sorted(chosen)]

    def _analytic(self) -> Dict[str, np.ndarray]:
        for param in self.params.values():
            param.zero_grad()
        self.loss_fn().backward()
        return {
            name: param.grad if param.grad is not None else np.zeros_like(param.data)
            for name, param in self.params.items()
        }

    def _numeric(self, name: str, index: Tuple[int, ...]) -> float:
        data = self.params[name].data
        original = data[index]
        try:
            with no_grad():
                data[index] = original + self.eps
                plus = self.loss_fn().item()
                data[index] = original - self.eps
                minus = self.loss_fn().item()
        finally:
            data[index] = original
        return (plus - minus) / (2 * self.eps)

    def _compare(self, probes: Iterable[Probe]) -> None:
        analytic = self._analytic()
        for name, index in probes:
            expected = self._numeric(name, index)
            value = float(analytic[name][index])
            self.checked.append((name, index))
            scale = max(abs(value), abs(expected))
            if scale > self.abs_tol:
                relative = abs(value - expected) / scale
                self.max_relative_error = max(self.max_relative_error, relative)
            if not isclose(value, expected, rel_tol=self.rel_tol, abs_tol=self.abs_tol):
                message = (
                    f"Gradients not almost equal (analytic {value} != numeric {expected}). "
                    f"Relative tolerance: {self.rel_tol} "
                    f"Absolute tolerance: {self.abs_tol} "
                )
                self.differences.add(name, index, message)


class _Differences:
    """Helper object logging mismatching gradient elements for GradientComparison."""

    def __init__(self) -> None:
        self.items: Dict[Probe, str] = dict()

    def add(self, name: str, index: Tuple[int, ...], message: str) -> None:
        """Add a difference to the log of differences.

        Args:
            name: The parameter name.
            index: The element of the parameter.
            message: An explanatory message.
        """
        self.items[(name, index)] = message
