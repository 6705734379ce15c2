""" Stochastic gradient descent with momentum and weight decay. """
from typing import Dict, Tuple

import numpy as np

from .core import Tensor


def sgd_step(
    param: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """One update of a single parameter buffer.

        v ← momentum·v + (grad + weight_decay·param)
        param ← param − lr·v

    Returns:
        The new parameter and the new velocity; the inputs are left untouched.
    """
    dtype = param.dtype.type
    velocity = dtype(momentum) * velocity + (grad + dtype(weight_decay) * param)
    return param - dtype(lr) * velocity, velocity.astype(param.dtype)


class SGD:
    """Applies ``sgd_step`` to a set of named parameters, one velocity slot each.

    Args:
        params: Parameter name mapped to its Tensor.
        lr: The learning rate.
        momentum: The momentum factor.
        weight_decay: The L2 penalty added to each gradient.
    """

    def __init__(
        self,
        params: Dict[str, Tensor],
        lr: float,
        momentum: float = 0.0,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(param.data) for name, param in params.items()}

    def step(self) -> None:
        """Update every parameter in place; parameters without a gradient see a zero one."""
        for name, param in self.params.items():
            grad = param.grad if param.grad is not None else np.zeros_like(param.data)
            param.data, self.velocity[name] = sgd_step(
                param.data,
                grad,
                self.velocity[name],
                self.lr,
                self.momentum,
                self.weight_decay,
            )

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        """The momentum buffers, keyed ``optim.<param>.velocity``."""
        return {f"optim.{name}.velocity": value for name, value in self.velocity.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        for name, param in self.params.items():
            key = f"optim.{name}.velocity"
            if key in state:
                velocity = np.asarray(state[key], dtype=param.dtype)
                self.velocity[name] = velocity.reshape(param.shape)
