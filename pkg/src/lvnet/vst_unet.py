"""U-shaped video transformer with 3-D shifted-window attention.

Tokens are channel-last, shaped (N, T, H, W, D). The encoder halves the
spatial grid between stages (time is never merged); the decoder mirrors it
with expanding layers and concatenation skips.
"""

from __future__ import annotations

from functools import lru_cache
from math import ceil

import numpy as np

from lvnet.config import VSTConfig
from lvnet.errors import ConfigError
from lvnet.layers import Conv2d, LayerNorm, Linear, trunc_normal
from lvnet.numerics import (
    ParameterStore,
    Tensor,
    bilinear_matrix,
    conv2d,
    expand_neighbors,
    gelu,
    merge_neighbors,
    ops,
    softmax,
    window_partition,
    window_reverse,
)

MASK_VALUE = -1e4


def effective_window(grid, window, shifted: bool) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Per-axis window and shift; an axis no longer than its window uses one window, unshifted."""
    win, shift = [], []
    for g, w in zip(grid, window):
        if g <= w:
            win.append(g)
            shift.append(0)
        else:
            win.append(w)
            shift.append(w // 2 if shifted else 0)
    return tuple(win), tuple(shift)


def padded_grid(grid, win) -> tuple[int, ...]:
    return tuple(int(ceil(g / w)) * w for g, w in zip(grid, win))


def _partition_grid(arr: np.ndarray, win) -> np.ndarray:
    """(T, H, W) array -> (nWindows, wT*wH*wW), same order as window_partition."""
    t, h, w = arr.shape
    wt, wh, ww = win
    out = arr.reshape(t // wt, wt, h // wh, wh, w // ww, ww).transpose(0, 2, 4, 1, 3, 5)
    return out.reshape(-1, wt * wh * ww)


@lru_cache(maxsize=128)
def attention_mask(grid, padded, win, shift) -> np.ndarray | None:
    """Additive (nWindows, N, N) mask for the rolled, padded layout, or None when not needed.

    A pair is valid when both tokens come from the same region of the cyclic
    shift and the key is a real (non-padding) token.
    """
    if not any(shift) and tuple(grid) == tuple(padded):
        return None
    label = np.zeros(padded, dtype=np.int64)
    for axis in range(3):
        size, w, s = padded[axis], win[axis], shift[axis]
        lab = np.zeros(size, dtype=np.int64)
        if s:
            lab[size - w:size - s] = 1
            lab[size - s:] = 2
        shape = [1, 1, 1]
        shape[axis] = size
        label = label * 3 + lab.reshape(shape)
    real = np.zeros(padded, dtype=bool)
    real[:grid[0], :grid[1], :grid[2]] = True
    real = np.roll(real, tuple(-s for s in shift), axis=(0, 1, 2))
    lab_w = _partition_grid(label, win)
    real_w = _partition_grid(real, win)
    valid = (lab_w[:, :, None] == lab_w[:, None, :]) & real_w[:, None, :]
    return np.where(valid, 0.0, MASK_VALUE).astype(np.float32)


@lru_cache(maxsize=128)
def relative_index(win, table_window) -> np.ndarray:
    """(3, N, N) offsets of (dt, dy, dx) into tables sized 2*w-1 per axis."""
    coords = np.stack(np.meshgrid(*[np.arange(w) for w in win], indexing="ij")).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    return rel + (np.asarray(table_window) - 1)[:, None, None]


class RelPosBias:
    """Learned relative-position bias shared by all windows of a block.

    ``axial`` keeps one table per axis and adds the three lookups; ``full``
    keeps a joint (2wT-1)(2wH-1)(2wW-1) table.
    """

    def __init__(self, store: ParameterStore, name: str, window, heads: int, kind: str = "axial",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.window = tuple(window)
        self.kind = kind
        sizes = [2 * w - 1 for w in self.window]

        def init(rows):
            if rng is None:
                return np.zeros((rows, heads), dtype)
            return trunc_normal(rng, (rows, heads)).astype(dtype)

        if kind == "axial":
            self.tables = [store.add(f"{name}.{axis}", init(n)) for axis, n in zip(("t", "h", "w"), sizes)]
        else:
            self.tables = [store.add(f"{name}.table", init(int(np.prod(sizes))))]
        self.sizes = sizes

    def __call__(self, win) -> Tensor:
        """(heads, N, N) bias for a window of extent ``win``."""
        idx = relative_index(tuple(win), self.window)
        if self.kind == "axial":
            bias = ops.take_rows(self.tables[0], idx[0])
            bias = bias + ops.take_rows(self.tables[1], idx[1])
            bias = bias + ops.take_rows(self.tables[2], idx[2])
        else:
            _, sh, sw = self.sizes
            flat = (idx[0] * sh + idx[1]) * sw + idx[2]
            bias = ops.take_rows(self.tables[0], flat)
        return ops.transpose(bias, (2, 0, 1))


class WindowAttention:
    """Multi-head self-attention inside each window with relative-position bias."""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int, window,
                 rng: np.random.Generator, rel_pos: str = "axial"):
        if heads < 1 or dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.head_dim = dim // heads
        self.scale = self.head_dim ** -0.5
        self.qkv = Linear(store, f"{name}.qkv", dim, 3 * dim, rng)
        self.proj = Linear(store, f"{name}.proj", dim, dim, rng)
        self.rel_bias = RelPosBias(store, f"{name}.rel_pos", window, heads, rel_pos, rng)
        self.last_weights: np.ndarray | None = None
        self.keep_weights = False

    def __call__(self, windows: Tensor, win, mask: np.ndarray | None = None) -> Tensor:
        """(B*nW, N, D) window tokens -> same shape; ``mask`` is (nW, N, N) additive."""
        bw, n, d = windows.shape
        if d != self.dim:
            raise ConfigError(f"attention expects dim {self.dim}, got {d}")
        qkv = ops.reshape(self.qkv(windows), (bw, n, 3, self.heads, self.head_dim))
        qkv = ops.transpose(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = ops.matmul(q * self.scale, ops.transpose(k, (0, 1, 3, 2)))
        logits = logits + self.rel_bias(win)
        if mask is not None:
            nw = mask.shape[0]
            logits = ops.reshape(logits, (bw // nw, nw, self.heads, n, n))
            logits = logits + Tensor(mask.astype(logits.dtype)[None, :, None])
            logits = ops.reshape(logits, (bw, self.heads, n, n))
        weights = softmax(logits, axis=-1)
        if self.keep_weights:
            self.last_weights = weights.data.copy()
        out = ops.matmul(weights, v)
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (bw, n, d))
        return self.proj(out)


class VSTBlock:
    """Pre-norm windowed attention and MLP, each with a residual connection."""

    def __init__(self, store: ParameterStore, name: str, dim: int, heads: int, cfg: VSTConfig,
                 rng: np.random.Generator, shifted: bool):
        self.window = tuple(cfg.window)
        self.shifted = shifted
        self.norm1 = LayerNorm(store, f"{name}.norm1", dim)
        self.attn = WindowAttention(store, f"{name}.attn", dim, heads, self.window, rng, cfg.rel_pos)
        self.norm2 = LayerNorm(store, f"{name}.norm2", dim)
        hidden = int(dim * cfg.mlp_ratio)
        self.fc1 = Linear(store, f"{name}.mlp.fc1", dim, hidden, rng)
        self.fc2 = Linear(store, f"{name}.mlp.fc2", hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, t, h, w, _ = x.shape
        win, shift = effective_window((t, h, w), self.window, self.shifted)
        if t % win[0]:
            raise ConfigError(f"clip length {t} is not a multiple of temporal window {win[0]}")
        tp, hp, wp = padded_grid((t, h, w), win)
        y = self.norm1(x)
        y = ops.pad(y, ((0, 0), (0, tp - t), (0, hp - h), (0, wp - w), (0, 0)))
        y = ops.roll(y, tuple(-s for s in shift), axes=(1, 2, 3))
        mask = attention_mask((t, h, w), (tp, hp, wp), win, shift)
        y = self.attn(window_partition(y, win), win, mask)
        y = window_reverse(y, win, (n, tp, hp, wp))
        y = ops.roll(y, shift, axes=(1, 2, 3))
        if (tp, hp, wp) != (t, h, w):
            y = y[:, :t, :h, :w, :]
        x = x + y
        return x + self.fc2(gelu(self.fc1(self.norm2(x))))


class PatchMerging:
    """Concatenate 2x2 spatial neighbours, normalize, project 4D -> 2D."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(store, f"{name}.norm", 4 * dim)
        self.reduction = Linear(store, f"{name}.reduction", 4 * dim, 2 * dim, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ConfigError(f"patch merging needs even spatial dims, got {x.shape[2:4]}")
        return self.reduction(self.norm(merge_neighbors(x)))


class PatchExpand:
    """Project D -> 2D, spread over a 2x2 cell (D/2 each), normalize."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.expand = Linear(store, f"{name}.expand", dim, 2 * dim, rng, bias=False)
        self.norm = LayerNorm(store, f"{name}.norm", dim // 2)

    def __call__(self, x: Tensor) -> Tensor:
        return self.norm(expand_neighbors(self.expand(x)))


class BilinearUp:
    """Bilinear x2 spatial interpolation followed by a D -> D/2 projection."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.proj = Linear(store, f"{name}.proj", dim, dim // 2, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        h, w = x.shape[2], x.shape[3]
        x = ops.linear_along_axis(x, bilinear_matrix(h), axis=2)
        x = ops.linear_along_axis(x, bilinear_matrix(w), axis=3)
        return self.proj(x)


class TransConvUp:
    """2x2 stride-2 transposed convolution D -> D/2 (non-overlapping, so an affine map per cell)."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.kernel = Linear(store, f"{name}.kernel", dim, 2 * dim, rng, bias=False)
        self.bias = store.add(f"{name}.bias", np.zeros(dim // 2, np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return expand_neighbors(self.kernel(x)) + self.bias


UPSAMPLER_TYPES = {"patch_expand": PatchExpand, "bilinear": BilinearUp, "transconv": TransConvUp}


def _frames_first(x: Tensor) -> Tensor:
    n, t, h, w, d = x.shape
    return ops.reshape(ops.transpose(x, (0, 1, 4, 2, 3)), (n * t, d, h, w))


def _tokens_last(y: Tensor, n: int, t: int) -> Tensor:
    _, d, h, w = y.shape
    return ops.transpose(ops.reshape(y, (n, t, d, h, w)), (0, 1, 3, 4, 2))


class Conv2dDecoderBlock:
    """Per-frame 3x3 convolution with a residual connection (no temporal mixing)."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        self.conv = Conv2d(store, f"{name}.conv", dim, dim, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        n, t = x.shape[:2]
        return x + gelu(_tokens_last(self.conv(_frames_first(x)), n, t))


class Conv3dDecoderBlock:
    """3x3x3 spatio-temporal convolution with a residual connection."""

    def __init__(self, store: ParameterStore, name: str, dim: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(dim * 27)
        self.weight = store.add(f"{name}.conv.weight",
                                rng.uniform(-bound, bound, (dim, dim, 3, 3, 3)).astype(np.float32))
        self.bias = store.add(f"{name}.conv.bias", rng.uniform(-bound, bound, dim).astype(np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        n, t, h, w, d = x.shape
        y = ops.transpose(x, (0, 1, 4, 2, 3))
        y = ops.pad(y, ((0, 0), (1, 1), (0, 0), (0, 0), (0, 0)))
        out = None
        for dt in range(3):
            frames = ops.reshape(y[:, dt:dt + t], (n * t, d, h, w))
            term = conv2d(frames, self.weight[:, :, dt], self.bias if dt == 1 else None, pad=1)
            out = term if out is None else out + term
        return x + gelu(_tokens_last(out, n, t))


class VSTEncoder:
    def __init__(self, store: ParameterStore, cfg: VSTConfig, rng: np.random.Generator,
                 name: str = "vst.encoder"):
        self.cfg = cfg
        dims, heads = cfg.stage_dims, cfg.stage_heads
        self.stages = []
        self.merges = []
        for i, depth in enumerate(cfg.depths):
            self.stages.append([
                VSTBlock(store, f"{name}.stage{i}.block{j}", dims[i], heads[i], cfg, rng, shifted=j % 2 == 1)
                for j in range(depth)
            ])
            if i < len(cfg.depths) - 1:
                self.merges.append(PatchMerging(store, f"{name}.merge{i}", dims[i], rng))

    def __call__(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        """(N, T, h, w, C) -> bottleneck and the pre-merge output of every earlier stage."""
        skips = []
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            if i < len(self.merges):
                skips.append(x)
                x = self.merges[i](x)
        return x, skips


class VSTDecoder:
    def __init__(self, store: ParameterStore, cfg: VSTConfig, rng: np.random.Generator,
                 name: str = "vst.decoder"):
        self.cfg = cfg
        dims, heads = cfg.stage_dims, cfg.stage_heads
        up_type = UPSAMPLER_TYPES[cfg.upsampler]
        self.levels = []
        for i in reversed(range(len(cfg.depths) - 1)):
            prefix = f"{name}.stage{i}"
            up = up_type(store, f"{prefix}.up", dims[i + 1], rng)
            fuse = Linear(store, f"{prefix}.fuse", 2 * dims[i], dims[i], rng)
            if cfg.decoder_block == "vst":
                blocks = [VSTBlock(store, f"{prefix}.block{j}", dims[i], heads[i], cfg, rng,
                                   shifted=j % 2 == 1) for j in range(cfg.depths[i])]
            elif cfg.decoder_block == "conv2d":
                blocks = [Conv2dDecoderBlock(store, f"{prefix}.block{j}", dims[i], rng)
                          for j in range(cfg.depths[i])]
            else:
                blocks = [Conv3dDecoderBlock(store, f"{prefix}.block{j}", dims[i], rng)
                          for j in range(cfg.depths[i])]
            self.levels.append((up, fuse, blocks))
        self.norm = LayerNorm(store, f"{name}.norm", dims[0])

    def __call__(self, bottleneck: Tensor, skips: list[Tensor]) -> Tensor:
        x = bottleneck
        for (up, fuse, blocks), skip in zip(self.levels, reversed(skips)):
            x = up(x)
            if x.shape != skip.shape:
                raise ConfigError(f"decoder skip shape {skip.shape} does not match {x.shape}")
            x = fuse(ops.concat([x, skip], axis=-1))
            for block in blocks:
                x = block(x)
        return self.norm(x)
