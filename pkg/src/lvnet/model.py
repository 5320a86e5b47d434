"""LVNet assembly: conv front-end, video transformer U-Net, segmentation head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lvnet.config import LVNetConfig
from lvnet.conv_frontend import ConvUNet
from lvnet.errors import ConfigError, ValidationError
from lvnet.layers import Conv2d
from lvnet.numerics import ParameterStore, Tensor, as_tensor, ops, sigmoid
from lvnet.numerics.functional import bce_with_logits
from lvnet.vst_unet import VSTDecoder, VSTEncoder


@dataclass
class ModelOutput:
    logits: Tensor  # (N, T, H, W)
    probabilities: Tensor


class LVNet:
    """Forward pass over clips shaped (N, 1, T, H, W) with values in [0, 1]."""

    def __init__(self, cfg: LVNetConfig, store: ParameterStore, rng: np.random.Generator):
        self.cfg = cfg
        self.store = store
        self.conv = ConvUNet(store, cfg.conv, rng)
        self.encoder = VSTEncoder(store, cfg.vst, rng)
        self.decoder = VSTDecoder(store, cfg.vst, rng)
        self.head = Conv2d(store, "head", cfg.conv.base_channels, 1, 1, rng)
        self.grid_multiple = 2 ** (len(cfg.vst.depths) - 1)

    @property
    def dtype(self):
        return self.head.weight.dtype

    def __call__(self, clip) -> ModelOutput:
        return self.forward(clip)

    def forward(self, clip) -> ModelOutput:
        x = as_tensor(clip)
        if x.dtype != self.dtype and not x.requires_grad:
            x = Tensor(x.data.astype(self.dtype))
        if x.ndim != 5 or x.shape[1] != 1:
            raise ValidationError(f"expected a clip shaped (N, 1, T, H, W), got {x.shape}")
        lo, hi = float(x.data.min()), float(x.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValidationError(f"clip values must lie in [0, 1], got range [{lo:.4g}, {hi:.4g}]")
        n, _, t, h, w = x.shape
        if t % self.cfg.vst.window[0]:
            raise ConfigError(f"clip length {t} is not a multiple of temporal window {self.cfg.vst.window[0]}")

        frames = ops.reshape(ops.transpose(x, (0, 2, 1, 3, 4)), (n * t, 1, h, w))
        emb, skips = self.conv.encode(frames)
        c, gh, gw = emb.shape[1:]
        tokens = ops.transpose(ops.reshape(emb, (n, t, c, gh, gw)), (0, 1, 3, 4, 2))

        m = self.grid_multiple
        ph, pw = -gh % m, -gw % m
        tokens = ops.pad(tokens, ((0, 0), (0, 0), (0, ph), (0, pw), (0, 0)))
        bottleneck, stage_skips = self.encoder(tokens)
        tokens = self.decoder(bottleneck, stage_skips)
        if ph or pw:
            tokens = tokens[:, :, :gh, :gw, :]

        feats = ops.reshape(ops.transpose(tokens, (0, 1, 4, 2, 3)), (n * t, c, gh, gw))
        logits = ops.reshape(self.head(self.conv.decode(feats, skips)), (n, t, h, w))
        return ModelOutput(logits=logits, probabilities=sigmoid(logits))


def build(cfg: LVNetConfig, seed: int = 0) -> tuple[ParameterStore, LVNet]:
    """Construct and deterministically initialize a model."""
    cfg.validate()
    store = ParameterStore()
    model = LVNet(cfg, store, np.random.default_rng(seed))
    return store, model


def forward(model: LVNet, clip) -> ModelOutput:
    return model.forward(clip)


def count_params(model: LVNet | ParameterStore) -> int:
    store = model.store if isinstance(model, LVNet) else model
    return store.count()


def soft_iou_loss(probabilities: Tensor, target, eps: float = 1.0) -> Tensor:
    """1 - (sum p*g + eps) / (sum p + sum g - sum p*g + eps) over the whole batch."""
    g = as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target,
                             dtype=probabilities.dtype))
    if g.shape != probabilities.shape:
        raise ConfigError(f"target shape {g.shape} != prediction shape {probabilities.shape}")
    inter = ops.sum(probabilities * g)
    union = ops.sum(probabilities) + float(g.data.sum()) - inter
    return 1.0 - (inter + eps) / (union + eps)


def bce_dice_loss(output: ModelOutput, target, eps: float = 1.0) -> Tensor:
    g = as_tensor(np.asarray(target.data if isinstance(target, Tensor) else target,
                             dtype=output.logits.dtype))
    p = output.probabilities
    dice = 1.0 - (2.0 * ops.sum(p * g) + eps) / (ops.sum(p) + float(g.data.sum()) + eps)
    return bce_with_logits(output.logits, g) + dice


def loss_fn(cfg: LVNetConfig, output: ModelOutput, target) -> Tensor:
    if cfg.loss == "bce_dice":
        return bce_dice_loss(output, target)
    return soft_iou_loss(output.probabilities, target)
