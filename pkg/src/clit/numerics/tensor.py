"""Tensor value type and the define-by-run gradient tape."""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _active_tape() -> "GradientTape | None":
    stack = getattr(_state, "tapes", None)
    if not stack:
        return None
    return stack[-1]


class Tensor:
    """Dense float array with an optional gradient slot.

    ``data`` is a plain numpy array; ``grad`` is filled in by
    :meth:`GradientTape.backward` for leaf tensors that require grad.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # Arithmetic sugar; the kernels live in ``ops``.
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def sum(self):
        from . import ops

        return ops.sum(self)

    def mean(self):
        from . import ops

        return ops.mean(self)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def backward(self) -> None:
        tape = _active_tape()
        if tape is None:
            raise RuntimeError("backward() called outside of a GradientTape")
        tape.backward(self)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class GradientTape:
    """Records differentiable ops in execution order.

    Use as a context manager; ops executed inside the block that touch a
    tensor with ``requires_grad`` are appended to :attr:`ops`. Calling
    :meth:`backward` walks the record once in reverse and leaves the
    accumulated gradient in ``.grad`` of every leaf that requires it.
    """

    def __init__(self):
        self.ops: list[_Node] = []

    def __enter__(self) -> "GradientTape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def record(self, output: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.ops.append(_Node(output, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.is_leaf and loss.requires_grad:
            _accumulate_leaf(loss, pending.pop(id(loss)))
        for node in reversed(self.ops):
            g_out = pending.pop(id(node.output), None)
            if g_out is None:
                continue
            grads = node.backward(g_out)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                if g.shape != inp.data.shape:
                    raise RuntimeError(
                        f"gradient shape {g.shape} does not match input shape {inp.data.shape}"
                    )
                if inp.is_leaf:
                    _accumulate_leaf(inp, g)
                else:
                    key = id(inp)
                    if key in pending:
                        pending[key] = pending[key] + g
                    else:
                        pending[key] = g
        self.ops.clear()


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = g.astype(t.data.dtype, copy=False)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad = t.grad + g


def make_result(data: np.ndarray, inputs: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap an op's output and, when a tape is listening, record the op."""
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(out, inputs, backward)
    return out


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording for the current thread."""
    saved = getattr(_state, "tapes", None)
    _state.tapes = []
    try:
        yield
    finally:
        _state.tapes = saved


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def check_finite(t: Tensor, where: str = "") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise FloatingPointError(f"non-finite values produced{' in ' + where if where else ''}")
    return t
