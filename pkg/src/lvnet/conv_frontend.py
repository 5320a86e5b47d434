"""Shallow convolutional U-Net wrapped around the video transformer.

The encoder turns each frame into patch embeddings on a 1/4-resolution grid;
the decoder restores full resolution from the transformer output using the
encoder's skip features. Both run per frame with weights shared over time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lvnet.config import ConvUNetConfig
from lvnet.errors import ConfigError
from lvnet.layers import Conv2d, Linear
from lvnet.numerics import (
    ParameterStore,
    Tensor,
    channel_to_space,
    ops,
    relu,
    space_to_channel,
)


@dataclass
class SkipBundle:
    full: Tensor  # (N*T, c0, H, W)
    half: Tensor  # (N*T, 2*c0, H/2, W/2)


class MSFFBlock:
    """Parallel multi-kernel convolutions fused by a 3x3 convolution, plus a residual path."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, kernels=(3, 5, 7)):
        self.branches = [Conv2d(store, f"{name}.branch{k}", cin, cout, k, rng) for k in kernels]
        self.fuse = Conv2d(store, f"{name}.fuse", cout * len(kernels), cout, 3, rng)
        self.proj = None if cin == cout else Conv2d(store, f"{name}.proj", cin, cout, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        multi = ops.concat([branch(x) for branch in self.branches], axis=1)
        residual = x if self.proj is None else self.proj(x)
        return relu(self.fuse(multi) + residual)


class ConvBlock:
    """A single 3x3 convolution with a residual connection."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(store, f"{name}.conv", cin, cout, 3, rng)
        self.proj = None if cin == cout else Conv2d(store, f"{name}.proj", cin, cout, 1, rng)

    def __call__(self, x: Tensor) -> Tensor:
        residual = x if self.proj is None else self.proj(x)
        return relu(self.conv(x) + residual)


class Downsample:
    """Space-to-channel (x2) followed by a 3x3 convolution."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(store, f"{name}.conv", 4 * cin, cout, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ConfigError(f"downsample needs even spatial dims, got {x.shape[2:]}")
        return self.conv(space_to_channel(x, 2))


class Upsample:
    """3x3 convolution to 4*cout channels followed by channel-to-space (x2)."""

    def __init__(self, store: ParameterStore, name: str, cin: int, cout: int, rng: np.random.Generator):
        self.conv = Conv2d(store, f"{name}.conv", cin, 4 * cout, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return channel_to_space(self.conv(x), 2)


class ConvUNet:
    def __init__(self, store: ParameterStore, cfg: ConvUNetConfig, rng: np.random.Generator,
                 name: str = "conv"):
        self.cfg = cfg
        c0, c1 = cfg.stage_channels
        dim = cfg.embed_dim
        if not cfg.enabled:
            # plain ViT-style patch embedding and its linear inverse
            self.patch_embed = Conv2d(store, f"{name}.patch_embed", 1, dim, 4, rng, stride=4, pad=0)
            self.patch_unembed = Linear(store, f"{name}.patch_unembed", dim, 16 * c0, rng)
            return

        def feature_block(block_name, cin, cout):
            if cfg.msff_mode == "msff":
                return MSFFBlock(store, block_name, cin, cout, rng, cfg.msff_kernels)
            return ConvBlock(store, block_name, cin, cout, rng)

        self.enc1 = feature_block(f"{name}.enc1", 1, c0)
        self.down1 = Downsample(store, f"{name}.down1", c0, c1, rng)
        self.enc2 = feature_block(f"{name}.enc2", c1, c1)
        self.down2 = Downsample(store, f"{name}.down2", c1, dim, rng)

        self.up2 = Upsample(store, f"{name}.up2", dim, c1, rng)
        self.fuse2 = Conv2d(store, f"{name}.fuse2", 2 * c1, c1, 3, rng)
        self.dec2 = ConvBlock(store, f"{name}.dec2", c1, c1, rng)
        self.up1 = Upsample(store, f"{name}.up1", c1, c0, rng)
        self.fuse1 = Conv2d(store, f"{name}.fuse1", 2 * c0, c0, 3, rng)
        self.dec1 = ConvBlock(store, f"{name}.dec1", c0, c0, rng)

    def encode(self, frames: Tensor) -> tuple[Tensor, SkipBundle | None]:
        """(N*T, 1, H, W) frames -> (N*T, C, H/4, W/4) embeddings and skip features."""
        _, _, h, w = frames.shape
        if h % 4 or w % 4:
            raise ConfigError(f"frame size {h}x{w} is not divisible by 4")
        if not self.cfg.enabled:
            return self.patch_embed(frames), None
        full = self.enc1(frames)
        half = self.enc2(self.down1(full))
        return self.down2(half), SkipBundle(full=full, half=half)

    def decode(self, features: Tensor, skips: SkipBundle | None) -> Tensor:
        """(N*T, C, H/4, W/4) -> (N*T, c0, H, W)."""
        if not self.cfg.enabled:
            tokens = ops.transpose(features, (0, 2, 3, 1))
            return channel_to_space(ops.transpose(self.patch_unembed(tokens), (0, 3, 1, 2)), 4)
        x = self.up2(features)
        if x.shape != skips.half.shape:
            raise ConfigError(f"half-resolution skip {skips.half.shape} does not match {x.shape}")
        x = self.dec2(self.fuse2(ops.concat([x, skips.half], axis=1)))
        x = self.up1(x)
        if x.shape != skips.full.shape:
            raise ConfigError(f"full-resolution skip {skips.full.shape} does not match {x.shape}")
        return self.dec1(self.fuse1(ops.concat([x, skips.full], axis=1)))
