"""Tensor value with reverse-mode differentiation.

Every differentiable operation builds its output through :func:`make_result`,
passing the parent tensors and a closure that maps the output gradient to one
gradient per parent (``None`` where a parent receives nothing).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from lvnet.errors import ConfigError, NumericError, UsageError

_GRAD_ENABLED = True
_FINITE_CHECKS = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def _as_float_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_float_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        backward(self, grad)

    # arithmetic sugar; the implementations live in lvnet.numerics.ops
    def __add__(self, other):
        from lvnet.numerics import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from lvnet.numerics import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from lvnet.numerics import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from lvnet.numerics import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from lvnet.numerics import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from lvnet.numerics import ops
        return ops.div(other, self)

    def __neg__(self):
        from lvnet.numerics import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from lvnet.numerics import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from lvnet.numerics import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from lvnet.numerics import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from lvnet.numerics import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from lvnet.numerics import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from lvnet.numerics import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    arr = np.asarray(value, dtype=dtype if dtype is not None else None)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(dtype or np.float32)
    return Tensor(arr)


def check_finite(arr: np.ndarray, op: str) -> None:
    # the sum is cheap and any NaN/Inf propagates into it
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum(dtype=np.float64)
    if not np.isfinite(total) and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by {op}")


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    op: str,
) -> Tensor:
    if _FINITE_CHECKS:
        check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor, grad: np.ndarray) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Gradients of intermediate nodes are released once propagated.
    """
    if not root.requires_grad:
        raise UsageError("backward() called on a tensor that does not require grad")
    grad = np.asarray(grad, dtype=root.dtype)
    if grad.shape != root.shape:
        raise ConfigError(f"seed gradient shape {grad.shape} != output shape {root.shape}")
    root.grad = grad if root.grad is None else root.grad + grad
    for node in reversed(_topological_order(root)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                raise NumericError(
                    f"{node.op}: gradient shape {g.shape} != parent shape {parent.shape}"
                )
            if g.dtype != parent.dtype:
                g = g.astype(parent.dtype)
            parent.grad = g if parent.grad is None else parent.grad + g
        node.grad = None
        node._backward = None
        node._parents = ()
