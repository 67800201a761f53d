"""Numpy-backed tensors with tape-based reverse-mode differentiation."""

from . import ops
from .nn import MLP, Conv2d, Linear, Module, parameter
from .optim import Adam, AdamState, MultiStepLR
from .tensor import DEFAULT_DTYPE, GradientTape, Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "Conv2d",
    "DEFAULT_DTYPE",
    "GradientTape",
    "Linear",
    "MLP",
    "Module",
    "MultiStepLR",
    "Tensor",
    "as_tensor",
    "no_grad",
    "ops",
    "parameter",
]
