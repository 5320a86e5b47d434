"""Differentiable elementwise, reduction and data-movement primitives."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from lvnet.errors import ConfigError
from lvnet.numerics import profiling
from lvnet.numerics.tensor import Tensor, as_tensor, make_result


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(x, dtype=dtype))


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def back(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)

    def back(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back, "mul")


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data

    def back(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), back, "div")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes."""
    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    out = a.data @ b.data
    profiling.record("matmul", out.size * a.shape[-1])
    return make_result(out, (a, b), back, "matmul")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return make_result(np.asarray(out, dtype=x.dtype), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[i] for i in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape

    def back(g):
        return (g.reshape(src),)

    return make_result(x.data.reshape(shape), (x,), back, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return make_result(np.ascontiguousarray(x.data.transpose(axes)), (x,), back, "transpose")


def getitem(x: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing; used for cropping."""
    def back(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return make_result(np.ascontiguousarray(x.data[index]), (x,), back, "getitem")


def pad(x: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero padding; ``widths`` has one (before, after) pair per axis."""
    widths = tuple((int(a), int(b)) for a, b in widths)
    if all(a == 0 and b == 0 for a, b in widths):
        return x
    crop = tuple(slice(a, n + a) for (a, _), n in zip(widths, x.shape))

    def back(g):
        return (np.ascontiguousarray(g[crop]),)

    return make_result(np.pad(x.data, widths), (x,), back, "pad")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors, back, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int) -> list[Tensor]:
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ConfigError(f"split sizes {list(sizes)} do not cover axis of length {x.shape[axis]}")
    out = []
    start = 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + n)
        out.append(getitem(x, tuple(index)))
        start += n
    return out


def roll(x: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts = tuple(int(s) for s in shifts)
    axes = tuple(axes)
    if not any(shifts):
        return x

    def back(g):
        return (np.roll(g, tuple(-s for s in shifts), axis=axes),)

    return make_result(np.roll(x.data, shifts, axis=axes), (x,), back, "roll")


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather ``table[index]`` along axis 0 (an embedding lookup)."""
    index = np.asarray(index, dtype=np.intp)
    n_rows = table.shape[0]

    def back(g):
        flat = g.reshape(-1, *table.shape[1:])
        rows = index.reshape(-1)
        if table.ndim == 1:
            return (np.bincount(rows, weights=flat, minlength=n_rows).astype(table.dtype),)
        flat = flat.reshape(rows.size, -1)
        cols = [np.bincount(rows, weights=flat[:, j], minlength=n_rows) for j in range(flat.shape[1])]
        return (np.stack(cols, axis=1).reshape(table.shape).astype(table.dtype),)

    return make_result(table.data[index], (table,), back, "take_rows")


def linear_along_axis(x: Tensor, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed (non-learned) matrix along one axis: y = M x along ``axis``."""
    matrix = np.asarray(matrix, dtype=x.dtype)
    axis = axis % x.ndim

    def apply(arr, mat):
        return np.moveaxis(np.tensordot(mat, arr, axes=(1, axis)), 0, axis)

    def back(g):
        return (np.ascontiguousarray(apply(g, matrix.T)),)

    return make_result(np.ascontiguousarray(apply(x.data, matrix)), (x,), back, "linear_along_axis")
