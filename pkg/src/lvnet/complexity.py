"""Analytic FLOP counting from a configuration alone (no execution).

Convention: FLOPs = 2 x multiply-accumulates, summed over convolutions,
affine maps and the two attention products (QK^T and AV). Normalization,
activations, bias additions and fixed interpolation are not counted.
Attention is counted on padded windows, as executed.
"""

from __future__ import annotations

from collections import Counter

from lvnet.config import ConvUNetConfig, LVNetConfig, VSTConfig
from lvnet.vst_unet import effective_window, padded_grid


def _conv(pixels: int, cin: int, cout: int, k: int) -> int:
    return pixels * cin * cout * k * k


def conv_frontend_macs(cfg: ConvUNetConfig, frames: int, h: int, w: int) -> Counter:
    c0, c1 = cfg.stage_channels
    dim = cfg.embed_dim
    full, half, quarter = frames * h * w, frames * (h // 2) * (w // 2), frames * (h // 4) * (w // 4)
    macs: Counter = Counter()
    if not cfg.enabled:
        macs["patch_embed"] = _conv(quarter, 1, dim, 4)
        macs["patch_unembed"] = quarter * dim * 16 * c0
        return macs

    def feature_block(pixels, cin, cout):
        if cfg.msff_mode == "msff":
            total = sum(_conv(pixels, cin, cout, k) for k in cfg.msff_kernels)
            total += _conv(pixels, cout * len(cfg.msff_kernels), cout, 3)
        else:
            total = _conv(pixels, cin, cout, 3)
        if cin != cout:
            total += _conv(pixels, cin, cout, 1)
        return total

    macs["enc1"] = feature_block(full, 1, c0)
    macs["down1"] = downsample_macs(half, c0, c1)
    macs["enc2"] = feature_block(half, c1, c1)
    macs["down2"] = downsample_macs(quarter, c1, dim)
    macs["up2"] = _conv(quarter, dim, 4 * c1, 3)
    macs["fuse2"] = _conv(half, 2 * c1, c1, 3)
    macs["dec2"] = _conv(half, c1, c1, 3)
    macs["up1"] = _conv(half, c1, 4 * c0, 3)
    macs["fuse1"] = _conv(full, 2 * c0, c0, 3)
    macs["dec1"] = _conv(full, c0, c0, 3)
    return macs


def downsample_macs(out_pixels: int, cin: int, cout: int) -> int:
    """Space-to-channel moves data only; the 3x3 convolution does all the work."""
    return _conv(out_pixels, 4 * cin, cout, 3)


def vst_block_macs(grid, dim: int, cfg: VSTConfig, shifted: bool) -> int:
    t, h, w = grid
    win, _ = effective_window(grid, cfg.window, shifted)
    tp, hp, wp = padded_grid(grid, win)
    padded = tp * hp * wp
    real = t * h * w
    n = win[0] * win[1] * win[2]
    hidden = int(dim * cfg.mlp_ratio)
    qkv = padded * dim * 3 * dim
    attention = 2 * padded * n * dim
    proj = padded * dim * dim
    mlp = 2 * real * dim * hidden
    return qkv + attention + proj + mlp


def attention_product_macs(grid, dim: int, cfg: VSTConfig, shifted: bool) -> int:
    win, _ = effective_window(grid, cfg.window, shifted)
    tp, hp, wp = padded_grid(grid, win)
    return 2 * tp * hp * wp * win[0] * win[1] * win[2] * dim


def transformer_macs(cfg: VSTConfig, t: int, gh: int, gw: int) -> Counter:
    """Encoder and decoder MACs for a (t, gh, gw) token grid of one clip."""
    macs: Counter = Counter()
    m = 2 ** (len(cfg.depths) - 1)
    gh, gw = gh + (-gh % m), gw + (-gw % m)
    dims = cfg.stage_dims
    grids = [(t, gh // 2**i, gw // 2**i) for i in range(len(dims))]
    for i, depth in enumerate(cfg.depths):
        for j in range(depth):
            macs["encoder_blocks"] += vst_block_macs(grids[i], dims[i], cfg, shifted=j % 2 == 1)
            macs["attention_products"] += attention_product_macs(grids[i], dims[i], cfg, j % 2 == 1)
        if i < len(dims) - 1:
            out_tokens = t * grids[i + 1][1] * grids[i + 1][2]
            macs["merges"] += out_tokens * 4 * dims[i] * 2 * dims[i]
    for i in reversed(range(len(dims) - 1)):
        tokens_in = t * grids[i + 1][1] * grids[i + 1][2]
        tokens = t * grids[i][1] * grids[i][2]
        d_in, d = dims[i + 1], dims[i]
        if cfg.upsampler == "bilinear":
            macs["upsamplers"] += tokens * d_in * (d_in // 2)
        else:
            macs["upsamplers"] += tokens_in * d_in * 2 * d_in
        macs["skip_fusion"] += tokens * 2 * d * d
        for j in range(cfg.depths[i]):
            if cfg.decoder_block == "vst":
                macs["decoder_blocks"] += vst_block_macs(grids[i], d, cfg, shifted=j % 2 == 1)
                macs["attention_products"] += attention_product_macs(grids[i], d, cfg, j % 2 == 1)
            elif cfg.decoder_block == "conv2d":
                macs["decoder_blocks"] += tokens * d * d * 9
            else:
                macs["decoder_blocks"] += tokens * d * d * 27
    return macs


def macs_breakdown(cfg: LVNetConfig, height: int, width: int, batch: int = 1) -> Counter:
    """Multiply-accumulates per component for ``batch`` clips of cfg.clip_len frames.

    The ``attention_products`` entry is informational; it is already included
    in the block totals.
    """
    t = cfg.clip_len
    frames = batch * t
    macs = conv_frontend_macs(cfg.conv, frames, height, width)
    for key, value in transformer_macs(cfg.vst, t, height // 4, width // 4).items():
        macs[key] += batch * value
    macs["head"] = frames * height * width * cfg.conv.base_channels
    return macs


def count_macs(cfg: LVNetConfig, height: int, width: int, batch: int = 1) -> int:
    breakdown = macs_breakdown(cfg, height, width, batch)
    return sum(v for k, v in breakdown.items() if k != "attention_products")


def count_flops(cfg: LVNetConfig, height: int, width: int) -> int:
    """FLOPs (2 x MACs) of one forward pass on a single clip."""
    return 2 * count_macs(cfg, height, width)
