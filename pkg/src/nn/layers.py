"""
Parameterized layers built on the autodiff tensors: dense MLPs and 2-D convolutions.

Parameters are initialized uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) from a
caller-supplied numpy Generator, so a seeded generator gives identical networks.
"""

from collections import OrderedDict
from enum import Enum
from typing import Dict, Iterator, Sequence

import numpy as np

from src.core.errors import ShapeError
from src.nn import autodiff as ad
from src.nn.autodiff import Tensor


class Activation(str, Enum):
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    def __call__(self, x: Tensor) -> Tensor:
        if self is Activation.RELU:
            return ad.relu(x)
        if self is Activation.SIGMOID:
            return ad.sigmoid(x)
        return x


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return ad.parameter(rng.uniform(-bound, bound, size=shape))


class Module:
    """Container of named parameters and named sub-modules."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()

    def add_parameter(self, name: str, tensor: Tensor) -> Tensor:
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> "OrderedDict[str, Tensor]":
        named = OrderedDict((f"{prefix}{name}", p) for name, p in self._params.items())
        for name, module in self._modules.items():
            named.update(module.named_parameters(f"{prefix}{name}."))
        return named

    def parameters(self) -> Iterator[Tensor]:
        return iter(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters().items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        unexpected = set(state) - set(params)
        if missing or unexpected:
            raise ShapeError(f"state dict mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, p in params.items():
            if p.data.shape != state[name].shape:
                raise ShapeError(f"parameter {name}: expected shape {p.data.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=np.float64)


class Mlp(Module):
    """
    Dense network over row vectors ``(N, widths[0]) -> (N, widths[-1])``.

    The activation is applied after every layer except the last, which stays linear.
    """

    def __init__(self, widths: Sequence[int], activation: Activation, rng: np.random.Generator):
        super().__init__()
        if len(widths) < 2:
            raise ValueError(f"an MLP needs at least input and output widths, got {list(widths)}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = Activation(activation)
        self.layers = []
        for index, (fan_in, fan_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            weight = self.add_parameter(f"{index}.weight", _uniform(rng, (fan_in, fan_out), fan_in))
            bias = self.add_parameter(f"{index}.bias", _uniform(rng, (fan_out,), fan_in))
            self.layers.append((weight, bias))

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.shape[-1] != self.widths[0]:
            raise ShapeError(f"MLP expects {self.widths[0]} input features, got shape {x.shape}")
        last = len(self.layers) - 1
        for index, (weight, bias) in enumerate(self.layers):
            x = ad.add(ad.matmul(x, weight), bias)
            if index < last:
                x = self.activation(x)
        return x


class Conv2d(Module):
    """k x k convolution on ``(C, H, W)`` images with zero padding ``k // 2``."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = self.add_parameter("weight", _uniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = self.add_parameter("bias", _uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.padding = kernel_size // 2

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Upsampling by ``scale`` with a learned ``scale x scale`` transposed convolution."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, scale: int = 2):
        super().__init__()
        fan_in = in_channels
        self.weight = self.add_parameter("weight", _uniform(rng, (in_channels, out_channels, scale, scale), fan_in))
        self.bias = self.add_parameter("bias", _uniform(rng, (out_channels,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv_transpose2d(x, self.weight, self.bias)
