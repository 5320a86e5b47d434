"""Architecture configuration records and their JSON form."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from lvnet.errors import ConfigError

MSFF_MODES = ("msff", "res_block")
DECODER_BLOCKS = ("vst", "conv2d", "conv3d")
UPSAMPLERS = ("patch_expand", "bilinear", "transconv")
REL_POS_KINDS = ("axial", "full")
LOSSES = ("soft_iou", "bce_dice")


@dataclass
class ConvUNetConfig:
    base_channels: int = 6
    embed_dim: int = 24
    msff_kernels: tuple[int, ...] = (3, 5, 7)
    enabled: bool = True
    msff_mode: str = "msff"

    @property
    def stage_channels(self) -> tuple[int, int]:
        return (self.base_channels, 2 * self.base_channels)


@dataclass
class VSTConfig:
    embed_dim: int = 24
    depths: tuple[int, ...] = (2, 2, 2, 1)
    window: tuple[int, int, int] = (2, 7, 7)
    head_dim: int = 8
    mlp_ratio: float = 4.0
    decoder_block: str = "vst"
    upsampler: str = "patch_expand"
    rel_pos: str = "axial"

    @property
    def stage_dims(self) -> list[int]:
        return [self.embed_dim * 2**i for i in range(len(self.depths))]

    @property
    def stage_heads(self) -> list[int]:
        return [d // self.head_dim for d in self.stage_dims]


@dataclass
class LVNetConfig:
    conv: ConvUNetConfig = field(default_factory=ConvUNetConfig)
    vst: VSTConfig = field(default_factory=VSTConfig)
    clip_len: int = 2
    input_channels: int = 1
    threshold: float = 0.5
    loss: str = "soft_iou"

    def validate(self) -> LVNetConfig:
        c, v = self.conv, self.vst
        if c.embed_dim != v.embed_dim:
            raise ConfigError(f"conv embed_dim {c.embed_dim} != transformer embed_dim {v.embed_dim}")
        if v.embed_dim <= 0 or v.head_dim <= 0 or v.embed_dim % v.head_dim:
            raise ConfigError(
                f"embed_dim {v.embed_dim} is not divisible by head_dim {v.head_dim}"
            )
        if len(v.depths) < 2 or any(d < 1 for d in v.depths):
            raise ConfigError(f"depths must list at least two positive stage depths, got {v.depths}")
        if len(v.window) != 3 or any(w < 1 for w in v.window):
            raise ConfigError(f"window must be three positive extents, got {v.window}")
        if self.clip_len < 1 or self.clip_len % v.window[0]:
            raise ConfigError(
                f"clip length {self.clip_len} is not a multiple of temporal window {v.window[0]}"
            )
        if c.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if c.msff_mode not in MSFF_MODES:
            raise ConfigError(f"msff_mode must be one of {MSFF_MODES}")
        if any(k % 2 == 0 for k in c.msff_kernels):
            raise ConfigError("MSFF kernels must be odd")
        if v.decoder_block not in DECODER_BLOCKS:
            raise ConfigError(f"decoder_block must be one of {DECODER_BLOCKS}")
        if v.upsampler not in UPSAMPLERS:
            raise ConfigError(f"upsampler must be one of {UPSAMPLERS}")
        if v.rel_pos not in REL_POS_KINDS:
            raise ConfigError(f"rel_pos must be one of {REL_POS_KINDS}")
        if self.input_channels != 1:
            raise ConfigError("only single-channel input is supported")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        return self

    # ablation helpers -------------------------------------------------
    def replace(self, **changes) -> LVNetConfig:
        """Copy with top-level, ``conv.*`` or ``vst.*`` fields changed."""
        top, conv, vst = {}, {}, {}
        for key, value in changes.items():
            if key.startswith("conv."):
                conv[key[5:]] = value
            elif key.startswith("vst."):
                vst[key[4:]] = value
            else:
                top[key] = value
        return dataclasses.replace(
            self,
            conv=dataclasses.replace(self.conv, **conv),
            vst=dataclasses.replace(self.vst, **vst),
            **top,
        )

    def with_embed_dim(self, dim: int) -> LVNetConfig:
        """Scale the whole network width.

        Head counts per stage stay fixed (head_dim scales with C) and the conv
        front-end keeps a C/4 base width.
        """
        heads = max(1, self.vst.embed_dim // self.vst.head_dim)
        if dim % heads:
            raise ConfigError(f"embed_dim {dim} cannot be split over {heads} heads")
        return self.replace(**{
            "conv.embed_dim": dim,
            "conv.base_channels": max(1, dim // 4),
            "vst.embed_dim": dim,
            "vst.head_dim": dim // heads,
        }).validate()

    def with_clip(self, clip_len: int, window_t: int | None = None) -> LVNetConfig:
        wt = clip_len if window_t is None else window_t
        return self.replace(clip_len=clip_len, **{"vst.window": (wt, *self.vst.window[1:])})

    # serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> LVNetConfig:
        try:
            data = dict(data)
            conv = dict(data.pop("conv", {}))
            vst = dict(data.pop("vst", {}))
            if "msff_kernels" in conv:
                conv["msff_kernels"] = tuple(conv["msff_kernels"])
            for key in ("depths", "window"):
                if key in vst:
                    vst[key] = tuple(vst[key])
            cfg = cls(conv=ConvUNetConfig(**conv), vst=VSTConfig(**vst), **data)
        except TypeError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc
        return cfg.validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


def load_config(path: str | Path | None) -> LVNetConfig:
    if path is None:
        return LVNetConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        from lvnet.errors import DataIOError
        raise DataIOError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return LVNetConfig.from_dict(data)
