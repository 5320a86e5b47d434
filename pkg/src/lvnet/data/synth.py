"""Synthetic infrared clips: smooth clutter, sensor noise, small moving Gaussian targets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from lvnet.errors import ConfigError

BACKGROUND_BLUR = 8.0
BACKGROUND_MEAN = 0.3
BACKGROUND_STD = 0.05
LOCAL_WINDOW = 15


class GenerationError(ConfigError):
    """The spec cannot produce a valid sequence (e.g. targets would leave the frame)."""


@dataclass
class SynthSpec:
    frames_per_seq: int = 20
    height: int = 128
    width: int = 128
    n_targets: tuple[int, int] = (1, 3)
    target_sigma: tuple[float, float] = (0.7, 1.5)
    velocity: tuple[float, float] = (0.2, 1.0)
    scr: tuple[float, float] = (2.0, 8.0)
    background_drift: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.02
    seed: int = 0

    def validate(self) -> SynthSpec:
        if self.frames_per_seq < 1 or self.height < 8 or self.width < 8:
            raise ConfigError("synthetic sequences need >= 1 frame and >= 8x8 pixels")
        for name in ("n_targets", "target_sigma", "velocity", "scr"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is empty: {lo} > {hi}")
        if self.n_targets[0] < 0:
            raise ConfigError("n_targets must be non-negative")
        if self.scr[0] <= 0:
            raise ConfigError("scr must be positive")
        if self.target_sigma[0] <= 0 or self.velocity[0] < 0 or self.noise_sigma < 0:
            raise ConfigError("sigma, velocity and noise must be non-negative (sigma positive)")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> SynthSpec:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown synth spec fields: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw).validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SequenceSample:
    seq_id: str
    frames: np.ndarray  # (T, 1, H, W) float32 in [0, 1], multiples of 1/255
    masks: np.ndarray   # (T, H, W) uint8 in {0, 1}
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def make_background(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    field_ = ndimage.gaussian_filter(rng.standard_normal((height, width)), BACKGROUND_BLUR, mode="wrap")
    field_ = (field_ - field_.mean()) / field_.std()
    return BACKGROUND_MEAN + BACKGROUND_STD * field_


def local_stats(image: np.ndarray, cy: int, cx: int, exclude: np.ndarray | None = None,
                size: int = LOCAL_WINDOW) -> tuple[float, float]:
    """Mean and std of ``image`` in a size x size window (clipped at borders)."""
    r = size // 2
    y0, y1 = max(cy - r, 0), min(cy + r + 1, image.shape[0])
    x0, x1 = max(cx - r, 0), min(cx + r + 1, image.shape[1])
    patch = image[y0:y1, x0:x1]
    if exclude is not None:
        patch = patch[~exclude[y0:y1, x0:x1]]
    return float(patch.mean()), float(patch.std())


def _start_range(margin: float, size: int, travel: float) -> tuple[float, float]:
    lo = margin - min(0.0, travel)
    hi = size - 1 - margin - max(0.0, travel)
    return lo, hi


def synth_sequence(spec: SynthSpec, seq_id: str = "seq000") -> SequenceSample:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_frames, h, w = spec.frames_per_seq, spec.height, spec.width
    background = make_background(rng, h, w)
    dy, dx = spec.background_drift

    clutter = np.empty((n_frames, h, w))
    for t in range(n_frames):
        bg = background if (dy, dx) == (0.0, 0.0) else ndimage.shift(
            background, (dy * t, dx * t), order=1, mode="grid-wrap")
        clutter[t] = bg + rng.normal(0.0, spec.noise_sigma, (h, w))

    n_targets = int(rng.integers(spec.n_targets[0], spec.n_targets[1] + 1))
    targets = []
    for _ in range(n_targets):
        sigma = float(rng.uniform(*spec.target_sigma))
        speed = float(rng.uniform(*spec.velocity))
        angle = float(rng.uniform(0.0, 2.0 * np.pi))
        scr = float(rng.uniform(*spec.scr))
        vy, vx = speed * np.sin(angle), speed * np.cos(angle)
        margin = np.ceil(3.0 * sigma) + 1.0
        ylo, yhi = _start_range(margin, h, vy * (n_frames - 1))
        xlo, xhi = _start_range(margin, w, vx * (n_frames - 1))
        if ylo > yhi or xlo > xhi:
            raise GenerationError(
                f"a target moving {speed:.2f} px/frame cannot stay inside {h}x{w} for {n_frames} frames"
            )
        start = (float(rng.uniform(ylo, yhi)), float(rng.uniform(xlo, xhi)))
        targets.append({"sigma": sigma, "velocity": (vy, vx), "scr": scr, "start": start})

    frames = clutter.copy()
    masks = np.zeros((n_frames, h, w), dtype=np.uint8)
    yy, xx = np.mgrid[0:h, 0:w]
    for target in targets:
        sigma = target["sigma"]
        centers, peaks, amplitudes = [], [], []
        for t in range(n_frames):
            cy = target["start"][0] + target["velocity"][0] * t
            cx = target["start"][1] + target["velocity"][1] * t
            _, sigma_local = local_stats(clutter[t], int(round(cy)), int(round(cx)))
            amplitude = target["scr"] * sigma_local
            r = int(np.ceil(4.0 * sigma)) + 1
            iy, ix = int(round(cy)), int(round(cx))
            sl = (slice(max(iy - r, 0), min(iy + r + 1, h)), slice(max(ix - r, 0), min(ix + r + 1, w)))
            blob = np.exp(-((yy[sl] - cy) ** 2 + (xx[sl] - cx) ** 2) / (2.0 * sigma**2))
            blob /= blob.max()
            frames[t][sl] += amplitude * blob
            masks[t][sl] |= (blob >= 0.5).astype(np.uint8)
            py, px = np.unravel_index(int(np.argmax(blob)), blob.shape)
            centers.append((cy, cx))
            peaks.append((int(py + sl[0].start), int(px + sl[1].start)))
            amplitudes.append(amplitude)
        target.update(centers=centers, peak_pixels=peaks, amplitudes=amplitudes)

    quantized = np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)
    meta = {
        "spec": spec.to_dict(),
        "targets": [
            {
                "sigma": tg["sigma"],
                "scr": tg["scr"],
                "velocity": list(tg["velocity"]),
                "centers": [list(c) for c in tg["centers"]],
                "peak_pixels": [list(p) for p in tg["peak_pixels"]],
                "amplitudes": tg["amplitudes"],
            }
            for tg in targets
        ],
    }
    return SequenceSample(seq_id=seq_id, frames=to_unit(quantized)[:, None], masks=masks, meta=meta)


def to_unit(pixels: np.ndarray) -> np.ndarray:
    """8-bit pixels -> float32 in [0, 1] by dividing by 255."""
    return (pixels.astype(np.float32) / np.float32(255.0)).astype(np.float32)


def to_pixels(frames: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(frames, dtype=np.float64) * 255.0).astype(np.uint8)


def synth_dataset(spec: SynthSpec, n_sequences: int, prefix: str = "seq") -> list[SequenceSample]:
    """Independent sequences whose seeds are spawned from ``spec.seed``."""
    seeds = np.random.SeedSequence(spec.seed).spawn(n_sequences)
    samples = []
    for i, ss in enumerate(seeds):
        sub = dataclasses.replace(spec, seed=int(ss.generate_state(1)[0]))
        samples.append(synth_sequence(sub, seq_id=f"{prefix}{i:03d}"))
    return samples
