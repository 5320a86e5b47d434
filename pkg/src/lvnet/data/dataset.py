"""On-disk dataset layout, manifest handling and clip batching."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from lvnet.data.pgm import read_pgm, write_pgm
from lvnet.data.synth import SequenceSample, to_pixels, to_unit
from lvnet.errors import DataIOError, UsageError

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
SPLITS = ("train", "val")


@dataclass
class SequenceEntry:
    id: str
    n_frames: int
    split: str = "train"


@dataclass
class Manifest:
    root: str  # sequence directories, relative to the manifest's own directory
    split: str
    sequences: list[SequenceEntry] = field(default_factory=list)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "split": self.split,
            "sequences": [{"id": s.id, "n_frames": s.n_frames, "split": s.split} for s in self.sequences],
        }

    @classmethod
    def from_dict(cls, data: dict, path="manifest") -> Manifest:
        try:
            seqs = [SequenceEntry(str(s["id"]), int(s["n_frames"]), str(s.get("split", data["split"])))
                    for s in data["sequences"]]
            manifest = cls(root=str(data["root"]), split=str(data["split"]), sequences=seqs)
        except (KeyError, TypeError, ValueError) as exc:
            raise DataIOError(f"{path}: malformed manifest ({exc})") from exc
        if len(set(manifest.ids)) != len(manifest.ids):
            raise DataIOError(f"{path}: duplicate sequence ids")
        return manifest


def _frame_name(i: int) -> str:
    return f"{i:03d}.pgm"


def _split_label(splits: list[str]) -> str:
    uniq = sorted(set(splits))
    return uniq[0] if len(uniq) == 1 else "mixed"


def write_dataset(samples: list[SequenceSample], root: str | os.PathLike,
                  splits: list[str] | str = "train") -> Manifest:
    """Write frames and {0,255} masks as PGM files, then the manifest (atomically, last)."""
    root = Path(root)
    if isinstance(splits, str):
        splits = [splits] * len(samples)
    if len(splits) != len(samples):
        raise UsageError("one split tag per sample is required")
    for tag in splits:
        if tag not in SPLITS:
            raise UsageError(f"split must be one of {SPLITS}, got {tag!r}")
    ids = [s.seq_id for s in samples]
    if len(set(ids)) != len(ids):
        raise DataIOError(f"{root}: duplicate sequence ids")

    try:
        root.mkdir(parents=True, exist_ok=True)
        for sample in samples:
            frames_dir = root / sample.seq_id / "frames"
            masks_dir = root / sample.seq_id / "masks"
            frames_dir.mkdir(parents=True, exist_ok=True)
            masks_dir.mkdir(parents=True, exist_ok=True)
            pixels = to_pixels(sample.frames[:, 0])
            for i in range(sample.n_frames):
                write_pgm(frames_dir / _frame_name(i), pixels[i])
                write_pgm(masks_dir / _frame_name(i), (sample.masks[i] > 0).astype(np.uint8) * 255)
    except OSError as exc:
        raise DataIOError(f"{root}: cannot write dataset ({exc.strerror or exc})") from exc

    manifest = Manifest(
        root=".",
        split=_split_label(splits),
        sequences=[SequenceEntry(s.seq_id, s.n_frames, tag) for s, tag in zip(samples, splits)],
    )
    _write_manifest_atomic(root / MANIFEST, manifest)
    return manifest


def _write_manifest_atomic(path: Path, manifest: Manifest) -> None:
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write manifest ({exc.strerror or exc})") from exc


def read_manifest(root: str | os.PathLike) -> Manifest:
    path = Path(root) / MANIFEST
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: manifest not found") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"{path}: cannot parse manifest ({exc})") from exc
    return Manifest.from_dict(data, path)


def read_mask(path) -> np.ndarray:
    raw = read_pgm(path)
    bad = (raw != 0) & (raw != 255)
    if bad.any():
        raise DataIOError(f"{path}: mask contains values other than 0 and 255")
    return (raw == 255).astype(np.uint8)


def read_sequence(root: str | os.PathLike, entry: SequenceEntry) -> SequenceSample:
    base = Path(root) / entry.id
    frames, masks = [], []
    for i in range(entry.n_frames):
        frames.append(read_pgm(base / "frames" / _frame_name(i)))
        masks.append(read_mask(base / "masks" / _frame_name(i)))
    shapes = {f.shape for f in frames} | {m.shape for m in masks}
    if len(shapes) != 1:
        raise DataIOError(f"{base}: frames and masks differ in size {sorted(shapes)}")
    return SequenceSample(
        seq_id=entry.id,
        frames=to_unit(np.stack(frames))[:, None],
        masks=np.stack(masks),
        meta={"split": entry.split},
    )


def read_dataset(root: str | os.PathLike, split: str | None = None) -> Iterator[SequenceSample]:
    """Yield the manifest's sequences in order, optionally restricted to one split."""
    manifest = read_manifest(root)
    for entry in manifest.sequences:
        if split is None or entry.split == split:
            yield read_sequence(root, entry)


@dataclass
class Clip:
    frames: np.ndarray  # (1, T, H, W) float32 in [0, 1]
    masks: np.ndarray   # (T, H, W) uint8
    seq_id: str
    start: int

    def batch(self) -> np.ndarray:
        """Model input shaped (1, 1, T, H, W)."""
        return self.frames[None]


def clip_batches(seq: SequenceSample, clip_len: int) -> list[Clip]:
    """Non-overlapping clips of ``clip_len`` consecutive frames; the remainder is dropped."""
    if clip_len < 1:
        raise UsageError(f"clip length must be positive, got {clip_len}")
    if clip_len > seq.n_frames:
        raise UsageError(f"clip length {clip_len} exceeds sequence length {seq.n_frames} ({seq.seq_id})")
    n_clips, dropped = divmod(seq.n_frames, clip_len)
    if dropped:
        log.warning("%s: dropping %d trailing frame(s) for clip length %d", seq.seq_id, dropped, clip_len)
    clips = []
    for k in range(n_clips):
        sl = slice(k * clip_len, (k + 1) * clip_len)
        frames = np.ascontiguousarray(seq.frames[sl, 0][None], dtype=np.float32)
        clips.append(Clip(frames=frames, masks=seq.masks[sl], seq_id=seq.seq_id, start=sl.start))
    return clips


def dataset_clips(samples, clip_len: int) -> list[Clip]:
    return [clip for seq in samples for clip in clip_batches(seq, clip_len)]
