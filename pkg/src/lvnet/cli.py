"""Command-line entry point: lvnet {synth, train, eval, roc, params, flops, ablate}."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from lvnet.complexity import count_flops
from lvnet.config import LVNetConfig, load_config
from lvnet.data import SynthSpec, dataset_clips, read_dataset, synth_dataset, write_dataset
from lvnet.errors import ConfigError, DataIOError, LVNetError, NumericError, UsageError
from lvnet.metrics import DEFAULT_THRESHOLDS, roc, roc_csv
from lvnet.model import build, count_params
from lvnet.trainer import TrainConfig, evaluate, predict, restore, train, write_text

ABLATION_AXES = ("T", "window", "dims", "layers", "conv_unet", "decoder_block", "upsampler")


class _Parser(argparse.ArgumentParser):
    """Argument errors become UsageError (exit 1) instead of argparse's exit 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _shared() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--config", type=Path, default=None, help="architecture config JSON (default: built-in)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared()
    parser = _Parser(prog="lvnet", description="Multi-frame infrared small-target detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic dataset")
    p.add_argument("--spec", type=Path, default=None, help="SynthSpec JSON overrides")
    p.add_argument("--n-train", type=int, default=8)
    p.add_argument("--n-val", type=int, default=4)

    p = sub.add_parser("train", parents=[shared], help="train on the train split")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    for name, helptext in (("eval", "report IoU/nIoU/Pd/Fa as JSON"), ("roc", "Pd/Fa sweep as CSV")):
        p = sub.add_parser(name, parents=[shared], help=helptext)
        p.add_argument("--data", type=Path, required=True)
        p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint file or directory")
        p.add_argument("--split", choices=("train", "val", "all"), default="val")
        if name == "eval":
            p.add_argument("--threshold", type=float, default=None)

    for name in ("params", "flops"):
        p = sub.add_parser(name, parents=[shared], help=f"print the {name} count")
        p.add_argument("--height", type=int, default=256)
        p.add_argument("--width", type=int, default=256)
        p.add_argument("--clip-len", type=int, default=None, help="override T (temporal window follows T)")

    p = sub.add_parser("ablate", parents=[shared], help="ablation table (params/FLOPs, metrics with --data)")
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    return parser


def _emit(text: str, args, filename: str) -> None:
    """Print and, when --out is given, also write to out/filename."""
    sys.stdout.write(text if text.endswith("\n") else text + "\n")
    if args.out is not None:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise DataIOError(f"{args.out}: cannot create output directory ({exc.strerror})") from exc
        write_text(args.out / filename, text if text.endswith("\n") else text + "\n")


def _split(split: str) -> str | None:
    return None if split == "all" else split


def _load_clips(root: Path, split: str | None, clip_len: int):
    samples = list(read_dataset(root, split))
    if not samples:
        raise UsageError(f"{root}: no sequences in split {split or 'all'}")
    return dataset_clips(samples, clip_len)


# commands -------------------------------------------------------------

def cmd_synth(args) -> None:
    if args.out is None:
        raise UsageError("synth requires --out")
    if args.n_train < 0 or args.n_val < 0 or args.n_train + args.n_val == 0:
        raise UsageError("need a positive total of --n-train and --n-val")
    overrides = {}
    if args.spec is not None:
        try:
            overrides = json.loads(args.spec.read_text(encoding="utf-8"))
        except OSError as exc:
            raise DataIOError(f"{args.spec}: cannot read spec ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.spec}: malformed JSON ({exc})") from exc
    overrides["seed"] = args.seed
    spec = SynthSpec.from_dict(overrides)
    samples = synth_dataset(spec, args.n_train + args.n_val)
    splits = ["train"] * args.n_train + ["val"] * args.n_val
    manifest = write_dataset(samples, args.out, splits)
    n_frames = sum(s.n_frames for s in manifest.sequences)
    print(f"wrote {len(manifest.sequences)} sequences ({args.n_train} train, {args.n_val} val, "
          f"{n_frames} frames) to {args.out}")


def cmd_train(args, cfg: LVNetConfig) -> None:
    if args.out is None:
        raise UsageError("train requires --out for checkpoints")
    clips = _load_clips(args.data, "train", cfg.clip_len)
    store, model = build(cfg, args.seed)
    tcfg = TrainConfig(lr0=args.lr, max_epochs=args.epochs, seed=args.seed, min_lr=min(1e-8, args.lr))
    result = train(model, clips, tcfg, checkpoint_dir=args.out, resume=args.resume)
    report = evaluate(model, clips, cfg.threshold)
    last = result.history[-1] if result.history else None
    summary = json.loads(report.to_json())
    summary.update(config_hash=cfg.config_hash(), split="train", epochs=len(result.history),
                   final_loss=last.mean_loss if last else None, stopped_early=result.stopped_early)
    _emit(json.dumps(summary, indent=2, sort_keys=True), args, "train_report.json")


def cmd_eval(args, cfg: LVNetConfig) -> None:
    store, model = build(cfg, args.seed)
    restore(model, args.checkpoint)
    clips = _load_clips(args.data, _split(args.split), cfg.clip_len)
    threshold = cfg.threshold if args.threshold is None else args.threshold
    report = evaluate(model, clips, threshold)
    _emit(report.to_json(config_hash=cfg.config_hash(), threshold=threshold, split=args.split),
          args, "report.json")


def cmd_roc(args, cfg: LVNetConfig) -> None:
    import numpy as np

    store, model = build(cfg, args.seed)
    restore(model, args.checkpoint)
    clips = _load_clips(args.data, _split(args.split), cfg.clip_len)
    probs = np.concatenate([predict(model, c) for c in clips])
    masks = np.concatenate([c.masks for c in clips])
    rows = roc(probs, masks, DEFAULT_THRESHOLDS)
    _emit(roc_csv(rows, cfg.config_hash()), args, "roc.csv")


def _sized_config(cfg: LVNetConfig, clip_len: int | None) -> LVNetConfig:
    return cfg if clip_len is None else cfg.with_clip(clip_len).validate()


def cmd_params(args, cfg: LVNetConfig) -> None:
    cfg = _sized_config(cfg, args.clip_len)
    store, _ = build(cfg, args.seed)
    _emit(f"Params: {count_params(store) / 1e6:.2f} M\nconfig_hash: {cfg.config_hash()}", args, "params.txt")


def cmd_flops(args, cfg: LVNetConfig) -> None:
    cfg = _sized_config(cfg, args.clip_len)
    if args.height % 4 or args.width % 4 or args.height <= 0 or args.width <= 0:
        raise ConfigError(f"input size {args.height}x{args.width} must be positive multiples of 4")
    flops = count_flops(cfg, args.height, args.width)
    _emit(f"FLOPs: {flops / 1e9:.2f} G ({args.height}x{args.width}, T={cfg.clip_len})\n"
          f"config_hash: {cfg.config_hash()}", args, "flops.txt")


def ablation_rows(base: LVNetConfig, axis: str) -> list[tuple[str, LVNetConfig]]:
    if axis == "T":
        return [(f"T={t}", base.with_clip(t).validate()) for t in (2, 4, 8)]
    if axis == "window":
        return [(f"{w}x7x7", base.with_clip(8, w).validate()) for w in (8, 4, 2)]
    if axis == "dims":
        return [(f"C={c}", base.with_embed_dim(c)) for c in (12, 24, 48)]
    if axis == "layers":
        return [("{%s}" % ",".join(map(str, d)), base.replace(**{"vst.depths": d}).validate())
                for d in ((1, 1, 1, 1), (2, 2, 2, 1), (3, 3, 3, 1))]
    if axis == "conv_unet":
        return [("w/o Conv U-Net", base.replace(**{"conv.enabled": False}).validate()),
                ("with Conv U-Net", base.replace(**{"conv.enabled": True}).validate())]
    if axis == "decoder_block":
        return [(k, base.replace(**{"vst.decoder_block": k}).validate()) for k in ("conv2d", "conv3d", "vst")]
    if axis == "upsampler":
        return [(k, base.replace(**{"vst.upsampler": k}).validate())
                for k in ("bilinear", "transconv", "patch_expand")]
    raise UsageError(f"unknown ablation axis {axis!r}")


def cmd_ablate(args, cfg: LVNetConfig) -> None:
    header = ["setting", "params_M", "GFLOPs", "config_hash"]
    metric_cols = ["IoU", "nIoU", "Pd", "Fa_1e-6"]
    if args.data is not None:
        header += metric_cols
    rows = []
    for label, row_cfg in ablation_rows(cfg, args.axis):
        store, model = build(row_cfg, args.seed)
        row = [label, f"{count_params(store) / 1e6:.2f}",
               f"{count_flops(row_cfg, args.height, args.width) / 1e9:.2f}", row_cfg.config_hash()]
        if args.data is not None:
            train_clips = _load_clips(args.data, "train", row_cfg.clip_len)
            try:
                eval_clips = _load_clips(args.data, "val", row_cfg.clip_len)
            except UsageError:
                eval_clips = train_clips
            ckpt = None if args.out is None else args.out / f"row_{len(rows)}"
            train(model, train_clips, TrainConfig(max_epochs=args.epochs, seed=args.seed), checkpoint_dir=ckpt)
            rep = evaluate(model, eval_clips, row_cfg.threshold)
            row += [f"{rep.iou:.4f}", f"{rep.niou:.4f}", f"{rep.pd:.4f}", f"{rep.fa:.2f}"]
        rows.append(row)

    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        text = buf.getvalue()
    else:
        lines = [f"Ablation on {args.axis} ({args.height}x{args.width}, base config {cfg.config_hash()})", "",
                 "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in rows]
        text = "\n".join(lines) + "\n"
    _emit(text, args, f"ablate_{args.axis}.{'csv' if args.format == 'csv' else 'md'}")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "roc": cmd_roc,
    "params": cmd_params,
    "flops": cmd_flops,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.command == "synth":
            cmd_synth(args)
        else:
            COMMANDS[args.command](args, load_config(args.config))
    except LVNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataIOError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
