"""Training loop, plateau learning-rate schedule, evaluation and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from lvnet.data.dataset import Clip
from lvnet.errors import ConfigError, DataIOError, TrainingError, UsageError
from lvnet.metrics import MetricAccumulator, MetricReport, binarize
from lvnet.model import LVNet, loss_fn
from lvnet.numerics import AdamState, adam_step, no_grad

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
LOG_NAME = "train_log.csv"


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    plateau_factor: float = 0.9
    plateau_patience: int = 5
    min_lr: float = 1e-8
    max_epochs: int = 200
    batch_size: int = 1
    rel_improvement: float = 1e-4
    seed: int = 0

    def validate(self) -> TrainConfig:
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        if not 0.0 < self.min_lr <= self.lr0:
            raise ConfigError(f"need 0 < min_lr <= lr0, got {self.min_lr} and {self.lr0}")
        if self.plateau_patience < 1 or self.max_epochs < 0:
            raise ConfigError("plateau_patience must be >= 1 and max_epochs >= 0")
        if self.batch_size != 1:
            raise ConfigError("only batch_size 1 is supported")
        return self


@dataclass
class PlateauState:
    lr: float
    best: float = math.inf
    bad_epochs: int = 0
    reductions: int = 0
    floor_epochs: int = 0

    @classmethod
    def initial(cls, cfg: TrainConfig) -> PlateauState:
        return cls(lr=cfg.lr0)


def reduce_on_plateau(history: Sequence[float], state: PlateauState, cfg: TrainConfig) -> float:
    """Update ``state`` with the newest epoch loss and return the learning rate to use next.

    An epoch improves when its loss is below best * (1 - rel_improvement). After
    ``plateau_patience`` epochs without improvement the rate becomes
    max(lr0 * factor**k, min_lr) and the counter restarts.
    """
    if not history:
        return state.lr
    loss = float(history[-1])
    improved = math.isinf(state.best) or loss < state.best - cfg.rel_improvement * abs(state.best)
    if improved:
        state.best = loss
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= cfg.plateau_patience:
            state.reductions += 1
            state.lr = max(cfg.lr0 * cfg.plateau_factor**state.reductions, cfg.min_lr)
            state.bad_epochs = 0
    state.floor_epochs = state.floor_epochs + 1 if (state.lr <= cfg.min_lr and not improved) else 0
    return state.lr


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.history]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss", "lr"])
        for r in self.history:
            writer.writerow([r.epoch, repr(r.mean_loss), repr(r.lr)])
        return buf.getvalue()


# checkpoint container -------------------------------------------------

MAGIC = b"LVNETCKP"
VERSION = 1


@dataclass
class Checkpoint:
    config_hash: str
    epoch: int
    params: dict[str, np.ndarray]
    adam: AdamState
    plateau: PlateauState
    rng_state: dict
    history: list[EpochRecord]


def _write_blob(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(fh, n: int, path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataIOError(f"{path}: truncated checkpoint")
    return data


def _read_blob(fh, path) -> tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read_exact(fh, 2, path))
    name = _read_exact(fh, n, path).decode("utf-8")
    (rank,) = struct.unpack("<B", _read_exact(fh, 1, path))
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, path))
    count = int(np.prod(shape, dtype=np.int64))
    arr = np.frombuffer(_read_exact(fh, 4 * count, path), dtype="<f4").reshape(shape)
    return name, arr.astype(np.float32)


def save_checkpoint(path: str | os.PathLike, ckpt: Checkpoint) -> None:
    """Write atomically: header, parameter blobs, optimizer blobs, JSON trailer."""
    path = Path(path)
    best = ckpt.plateau.best
    trailer = {
        "epoch": ckpt.epoch,
        "lr": ckpt.plateau.lr,
        "best_loss": None if math.isinf(best) else best,
        "bad_epochs": ckpt.plateau.bad_epochs,
        "reductions": ckpt.plateau.reductions,
        "floor_epochs": ckpt.plateau.floor_epochs,
        "rng_state": ckpt.rng_state,
        "history": [asdict(r) for r in ckpt.history],
    }
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", VERSION))
            h = ckpt.config_hash.encode("ascii")
            fh.write(struct.pack("<H", len(h)))
            fh.write(h)
            fh.write(struct.pack("<I", len(ckpt.params)))
            for name in sorted(ckpt.params):
                _write_blob(fh, name, ckpt.params[name])
            fh.write(struct.pack("<Q", ckpt.adam.t))
            fh.write(struct.pack("<I", len(ckpt.adam.m)))
            for name in sorted(ckpt.adam.m):
                _write_blob(fh, "m/" + name, ckpt.adam.m[name])
                _write_blob(fh, "v/" + name, ckpt.adam.v[name])
            raw = json.dumps(trailer, sort_keys=True).encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write checkpoint ({exc.strerror or exc})") from exc


def load_checkpoint(path: str | os.PathLike, expect_hash: str | None = None) -> Checkpoint:
    path = Path(path)
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise DataIOError(f"{path}: cannot open checkpoint ({exc.strerror})") from exc
    with fh:
        if _read_exact(fh, len(MAGIC), path) != MAGIC:
            raise DataIOError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != VERSION:
            raise DataIOError(f"{path}: unsupported checkpoint version {version}")
        (n,) = struct.unpack("<H", _read_exact(fh, 2, path))
        config_hash = _read_exact(fh, n, path).decode("ascii")
        if expect_hash is not None and expect_hash != config_hash:
            raise ConfigError(f"{path}: checkpoint config hash {config_hash} != {expect_hash}")
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, path))
        params = dict(_read_blob(fh, path) for _ in range(n_params))
        (t,) = struct.unpack("<Q", _read_exact(fh, 8, path))
        (n_moments,) = struct.unpack("<I", _read_exact(fh, 4, path))
        adam = AdamState(t=int(t))
        for _ in range(n_moments):
            mname, m = _read_blob(fh, path)
            vname, v = _read_blob(fh, path)
            adam.m[mname[2:]] = m
            adam.v[vname[2:]] = v
        (n,) = struct.unpack("<I", _read_exact(fh, 4, path))
        try:
            trailer = json.loads(_read_exact(fh, n, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataIOError(f"{path}: corrupt checkpoint trailer") from exc
    best = trailer["best_loss"]
    plateau = PlateauState(
        lr=trailer["lr"],
        best=math.inf if best is None else best,
        bad_epochs=trailer["bad_epochs"],
        reductions=trailer["reductions"],
        floor_epochs=trailer["floor_epochs"],
    )
    return Checkpoint(
        config_hash=config_hash,
        epoch=trailer["epoch"],
        params=params,
        adam=adam,
        plateau=plateau,
        rng_state=trailer["rng_state"],
        history=[EpochRecord(**r) for r in trailer["history"]],
    )


# training -------------------------------------------------------------

def _clip_loss(model: LVNet, clip: Clip):
    out = model(clip.batch())
    return loss_fn(model.cfg, out, clip.masks[None].astype(np.float32))


def train(
    model: LVNet,
    clips: Sequence[Clip],
    cfg: TrainConfig,
    checkpoint_dir: str | os.PathLike | None = None,
    resume: bool = False,
) -> TrainResult:
    """Adam with batch size 1 over shuffled clips; the scheduler watches the epoch mean loss."""
    cfg.validate()
    if not clips:
        raise UsageError("training set is empty")
    t_model = model.cfg.clip_len
    for clip in clips:
        if clip.frames.shape[1] != t_model:
            raise ConfigError(f"clip of {clip.frames.shape[1]} frames does not match model clip length {t_model}")
    if model.dtype != np.float32:
        raise ConfigError("training requires float32 parameters")

    config_hash = model.cfg.config_hash()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        try:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataIOError(f"{ckpt_dir}: cannot create checkpoint directory ({exc.strerror})") from exc

    rng = np.random.default_rng(cfg.seed)
    adam = AdamState()
    plateau = PlateauState.initial(cfg)
    result = TrainResult()
    start_epoch = 0
    if resume:
        if ckpt_dir is None:
            raise UsageError("resume requires a checkpoint directory")
        ckpt = load_checkpoint(ckpt_dir / CHECKPOINT_NAME, expect_hash=config_hash)
        model.store.load_state_dict(ckpt.params)
        adam, plateau = ckpt.adam, ckpt.plateau
        rng.bit_generator.state = ckpt.rng_state
        result.history = list(ckpt.history)
        start_epoch = ckpt.epoch
        if plateau.floor_epochs >= cfg.plateau_patience:
            result.stopped_early = True
            return result

    for epoch in range(start_epoch + 1, cfg.max_epochs + 1):
        lr = plateau.lr
        losses = []
        for idx in rng.permutation(len(clips)):
            model.store.zero_grad()
            loss = _clip_loss(model, clips[idx])
            value = float(loss.item())
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch} on clip {clips[idx].seq_id}:{clips[idx].start}"
                    + (f"; last good checkpoint kept in {ckpt_dir}" if ckpt_dir is not None else "")
                )
            loss.backward()
            adam_step(model.store, adam, lr)
            losses.append(value)
        mean_loss = float(np.mean(losses))
        result.history.append(EpochRecord(epoch, mean_loss, lr))
        log.info("epoch %d loss %.6f lr %.3g", epoch, mean_loss, lr)
        reduce_on_plateau(result.losses, plateau, cfg)

        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / CHECKPOINT_NAME, Checkpoint(
                config_hash=config_hash,
                epoch=epoch,
                params=model.store.state_dict(),
                adam=adam,
                plateau=plateau,
                rng_state=rng.bit_generator.state,
                history=result.history,
            ))
            write_text(ckpt_dir / LOG_NAME, result.to_csv())
        if plateau.floor_epochs >= cfg.plateau_patience:
            result.stopped_early = True
            break
    return result


def write_text(path: Path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"{path}: cannot write ({exc.strerror})") from exc


def predict(model: LVNet, clip: Clip) -> np.ndarray:
    """Probability maps (T, H, W) for one clip."""
    with no_grad():
        return model(clip.batch()).probabilities.data[0]


def evaluate(model: LVNet, clips: Sequence[Clip], threshold: float = 0.5) -> MetricReport:
    acc = MetricAccumulator()
    for clip in clips:
        acc.update(binarize(predict(model, clip), threshold), clip.masks.astype(bool))
    return acc.report()


def restore(model: LVNet, path: str | os.PathLike) -> Checkpoint:
    """Load parameters from a checkpoint file or directory into ``model``."""
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    ckpt = load_checkpoint(path, expect_hash=model.cfg.config_hash())
    model.store.load_state_dict(ckpt.params)
    return ckpt
