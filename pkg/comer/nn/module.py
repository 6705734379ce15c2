""" Parameter containers and the basic layers every model component is built from. """
import math
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import CheckpointError
from ..tensor import ops
from ..tensor.core import Tensor
from ..tensor.random import RandomStream

# Checkpoint entries under these prefixes are not model state.
NON_MODEL_PREFIXES = ("optim.", "meta.")


class Module:
    """Base class of every layer.

    Attributes assigned a Module, a gradient-requiring Tensor, or a NormState are
      registered under the attribute name; names of nested entries are joined with
      dots (``decoder.layer1.cross_attn.query.weight``). A Module referenced from two
      places is registered only where ``add_module`` or attribute assignment happens
      first; use ``share`` to keep a reference without registering it again.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_params", dict())
        object.__setattr__(self, "_modules", dict())
        object.__setattr__(self, "_norms", dict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: object) -> None:
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, ops.NormState):
            self._norms[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        setattr(self, name, module)
        return module

    def share(self, name: str, module: "Module") -> None:
        """Hold a reference to a module registered elsewhere."""
        object.__setattr__(self, name, module)

    # ===== Traversal =============================================================

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, module in self._modules.items():
            yield from module.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for path, module in self.named_modules(prefix):
            for name, param in module._params.items():
                yield (f"{path}.{name}" if path else name), param

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def named_norm_states(self, prefix: str = "") -> Iterator[Tuple[str, ops.NormState]]:
        for path, module in self.named_modules(prefix):
            for name, state in module._norms.items():
                yield (path if name == "state" else f"{path}.{name}"), state

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for _, param in self.named_parameters():
            param.zero_grad()

    def set_epoch(self, epoch: int) -> None:
        """Re-derive every dropout generator for ``epoch``.

        Resumed runs replay the same masks.
        """
        for _, module in self.named_modules():
            if isinstance(module, Dropout):
                module.reseed(epoch)

    # ===== State =================================================================

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Parameters and running normalization statistics keyed by checkpoint name."""
        state = {name: param.data for name, param in self.named_parameters()}
        for name, norm in self.named_norm_states():
            state[f"{name}.running_mean"] = np.asarray(norm.running_mean)
            state[f"{name}.running_var"] = np.asarray(norm.running_var)
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        """Load parameters and running statistics.

        Raises:
            CheckpointError: Naming the first tensor that is missing, unexpected, or
              has a different shape than the model expects.
        """
        params = dict(self.named_parameters())
        norms = dict(self.named_norm_states())
        expected = self.state_dict()
        for name, current in expected.items():
            if name not in state:
                raise CheckpointError(f"Checkpoint is missing tensor {name}")
            if tuple(state[name].shape) != tuple(current.shape):
                raise CheckpointError(
                    f"Checkpoint tensor {name} has shape {tuple(state[name].shape)}; "
                    f"the model expects {tuple(current.shape)}"
                )
        unexpected = [
            name
            for name in state
            if name not in expected and not name.startswith(NON_MODEL_PREFIXES)
        ]
        if unexpected:
            raise CheckpointError(f"Checkpoint has unexpected tensor {unexpected[0]}")
        for name, param in params.items():
            param.data = np.array(state[name], dtype=param.dtype)
        for name, norm in norms.items():
            norm.running_mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
            norm.running_var = np.array(state[f"{name}.running_var"], dtype=np.float64)


def parameter(values: np.ndarray) -> Tensor:
    """A leaf tensor requiring gradients, in the current precision."""
    return Tensor(values, requires_grad=True)


class Linear(Module):
    """``x @ weight + bias`` with Glorot-uniform initialization."""

    def __init__(self, d_in: int, d_out: int, stream: RandomStream, bias: bool = True):
        super().__init__()
        limit = math.sqrt(6 / (d_in + d_out))
        weight = stream.generator().uniform(-limit, limit, size=(d_in, d_out))
        self.weight = parameter(weight)
        self.bias: Optional[Tensor] = parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """Channels-last convolution with "same" padding and He-normal initialization."""

    def __init__(
        self,
        c_in: int,
        c_out: int,
        size: int,
        stream: RandomStream,
        stride: int = 1,
        bias: bool = False,
    ):
        super().__init__()
        self.stride = stride
        std = math.sqrt(2 / (size * size * c_in))
        weight = stream.generator().normal(0, std, size=(size, size, c_in, c_out))
        self.weight = parameter(weight)
        self.bias: Optional[Tensor] = parameter(np.zeros(c_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride)


class BatchNorm(Module):
    """Batch normalization over the channel (last) axis with running statistics."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.state = ops.NormState(channels)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        return ops.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.state,
            self.training,
            self.momentum,
            self.eps,
            mask,
        )


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = parameter(np.ones(width))
        self.beta = parameter(np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    """Token embedding table initialized with standard deviation ``width ** -0.5``."""

    def __init__(self, count: int, width: int, stream: RandomStream):
        super().__init__()
        weight = stream.generator().normal(0, width ** -0.5, size=(count, width))
        self.weight = parameter(weight)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return ops.embedding(self.weight, ids)


class Dropout(Module):
    """Inverted dropout drawing its masks from a dedicated random stream."""

    def __init__(self, p: float, stream: RandomStream):
        super().__init__()
        self.p = p
        self.stream = stream
        self.rng = stream.generator()

    def reseed(self, epoch: int) -> None:
        self.rng = self.stream.child(f"epoch{epoch}").generator()

    def __call__(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.p, self.training, self.rng)


def count_parameters(module: Module) -> int:
    return sum(param.size for _, param in module.named_parameters())


def parameter_names(module: Module) -> List[str]:
    return [name for name, _ in module.named_parameters()]
