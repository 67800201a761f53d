"""Parameter containers: a small Module base plus the layers the model uses."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import ops
from .tensor import DEFAULT_DTYPE, Tensor


def parameter(data, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


class Module:
    """Discovers parameters from attributes: Tensors, Modules and lists of Modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(
                f"state mismatch; missing={sorted(missing)}, unexpected={sorted(unexpected)}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (d_in, d_out), d_in)
        self.bias = uniform_init(rng, (d_out,), d_in)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        kernel_size: int = 3,
        padding: str = "zeros",
    ):
        if kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        fan_in = c_in * kernel_size * kernel_size
        self.weight = uniform_init(rng, (kernel_size, kernel_size, c_in, c_out), fan_in)
        self.bias = uniform_init(rng, (c_out,), fan_in)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding)

    def set_identity(self) -> None:
        """Make the conv pass its input through (requires c_in == c_out)."""
        k, _, c_in, c_out = self.weight.shape
        if c_in != c_out:
            raise ValueError("identity conv needs equal in/out channels")
        w = np.zeros(self.weight.shape, dtype=self.weight.dtype)
        w[k // 2, k // 2] = np.eye(c_in, dtype=w.dtype)
        self.weight.data = w
        self.bias.data = np.zeros_like(self.bias.data)

    def set_zero(self) -> None:
        self.weight.data = np.zeros_like(self.weight.data)
        self.bias.data = np.zeros_like(self.bias.data)


class MLP(Module):
    """Stack of Linear layers with exact GELU between them."""

    def __init__(self, d_in: int, d_out: int, hidden: list[int], rng: np.random.Generator):
        dims = [d_in, *hidden, d_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = ops.gelu(layer(x))
        return self.layers[-1](x)
