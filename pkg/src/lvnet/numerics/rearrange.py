"""Pure data-movement operations and their exact inverses.

All of them are compositions of reshape/transpose/roll/concat primitives, so
their gradients are the inverse movement by construction.
"""

from __future__ import annotations

from typing import Sequence

from lvnet.errors import ConfigError
from lvnet.numerics import ops
from lvnet.numerics.tensor import Tensor


def _check_divisible(size: int, factor: int, what: str) -> None:
    if factor <= 0 or size % factor:
        raise ConfigError(f"{what} of size {size} is not divisible by {factor}")


def space_to_channel(x: Tensor, r: int) -> Tensor:
    """(N, C, H, W) -> (N, C*r*r, H/r, W/r); channel index is c*r*r + dy*r + dx."""
    n, c, h, w = x.shape
    _check_divisible(h, r, "height")
    _check_divisible(w, r, "width")
    y = ops.reshape(x, (n, c, h // r, r, w // r, r))
    y = ops.transpose(y, (0, 1, 3, 5, 2, 4))
    return ops.reshape(y, (n, c * r * r, h // r, w // r))


def channel_to_space(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`space_to_channel`."""
    n, c, h, w = x.shape
    _check_divisible(c, r * r, "channel axis")
    y = ops.reshape(x, (n, c // (r * r), r, r, h, w))
    y = ops.transpose(y, (0, 1, 4, 2, 5, 3))
    return ops.reshape(y, (n, c // (r * r), h * r, w * r))


def merge_neighbors(x: Tensor) -> Tensor:
    """Channel-last (..., H, W, D) -> (..., H/2, W/2, 4D) concatenating each 2x2 cell.

    Feature index is dy*2D + dx*D + d.
    """
    *lead, h, w, d = x.shape
    _check_divisible(h, 2, "height")
    _check_divisible(w, 2, "width")
    nl = len(lead)
    y = ops.reshape(x, (*lead, h // 2, 2, w // 2, 2, d))
    axes = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    y = ops.transpose(y, axes)
    return ops.reshape(y, (*lead, h // 2, w // 2, 4 * d))


def expand_neighbors(x: Tensor) -> Tensor:
    """Inverse of :func:`merge_neighbors` (channel-last depth-to-space)."""
    *lead, h, w, d4 = x.shape
    _check_divisible(d4, 4, "feature axis")
    d = d4 // 4
    nl = len(lead)
    y = ops.reshape(x, (*lead, h, w, 2, 2, d))
    axes = tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4)
    y = ops.transpose(y, axes)
    return ops.reshape(y, (*lead, 2 * h, 2 * w, d))


def window_partition(x: Tensor, window: Sequence[int]) -> Tensor:
    """(N, T, H, W, D) -> (N*nT*nH*nW, wT*wH*wW, D), windows in row-major order."""
    n, t, h, w, d = x.shape
    wt, wh, ww = window
    _check_divisible(t, wt, "temporal axis")
    _check_divisible(h, wh, "height")
    _check_divisible(w, ww, "width")
    y = ops.reshape(x, (n, t // wt, wt, h // wh, wh, w // ww, ww, d))
    y = ops.transpose(y, (0, 1, 3, 5, 2, 4, 6, 7))
    return ops.reshape(y, (-1, wt * wh * ww, d))


def window_reverse(windows: Tensor, window: Sequence[int], grid: Sequence[int]) -> Tensor:
    """Inverse of :func:`window_partition`; ``grid`` is (N, T, H, W)."""
    n, t, h, w = grid
    wt, wh, ww = window
    d = windows.shape[-1]
    y = ops.reshape(windows, (n, t // wt, h // wh, w // ww, wt, wh, ww, d))
    y = ops.transpose(y, (0, 1, 4, 2, 5, 3, 6, 7))
    return ops.reshape(y, (n, t, h, w, d))


def rearrange(x: Tensor, kind: str, **kw):
    """Dispatch by name, mirroring the operation table of the engine."""
    if kind == "space_to_channel":
        return space_to_channel(x, kw["r"])
    if kind == "channel_to_space":
        return channel_to_space(x, kw["r"])
    if kind == "roll":
        return ops.roll(x, kw["shifts"], kw["axes"])
    if kind == "concat":
        return ops.concat(x, kw["axis"])
    if kind == "split":
        return ops.split(x, kw["sizes"], kw["axis"])
    if kind == "window_partition":
        return window_partition(x, kw["window"])
    if kind == "window_reverse":
        return window_reverse(x, kw["window"], kw["grid"])
    raise ConfigError(f"unknown rearrange kind {kind!r}")
