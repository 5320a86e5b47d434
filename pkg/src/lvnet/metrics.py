"""Pixel-level (IoU, nIoU) and target-level (Pd, Fa) detection metrics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from lvnet.errors import ValidationError

MATCH_DISTANCE = 3.0
FA_SCALE = 1e6
# descending: 0.999, 0.99, 0.95, 0.90, ..., 0.05
DEFAULT_THRESHOLDS = (0.999, 0.99) + tuple(round(0.05 * k, 2) for k in range(19, 0, -1))

_EIGHT = np.ones((3, 3), dtype=bool)


def _as_binary(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValidationError(f"{name} must be binary (0/1 or bool)")
    return arr.astype(bool)


@dataclass
class ConfusionTotals:
    tp: int = 0
    gt: int = 0
    pred: int = 0

    def add(self, other: ConfusionTotals) -> None:
        self.tp += other.tp
        self.gt += other.gt
        self.pred += other.pred

    @property
    def union(self) -> int:
        return self.gt + self.pred - self.tp

    def iou(self) -> float:
        return 1.0 if self.union == 0 else self.tp / self.union


def confusion(pred, gt) -> ConfusionTotals:
    p, g = _as_binary(pred, "prediction"), _as_binary(gt, "ground truth")
    if p.shape != g.shape:
        raise ValidationError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    return ConfusionTotals(tp=int(np.count_nonzero(p & g)), gt=int(np.count_nonzero(g)),
                           pred=int(np.count_nonzero(p)))


def pixel_iou(pred_masks, gt_masks) -> tuple[float, float]:
    """Global IoU over all pixels and nIoU averaged over frames ((N, H, W) or (H, W))."""
    p = _as_binary(pred_masks, "prediction")
    g = _as_binary(gt_masks, "ground truth")
    if p.shape != g.shape:
        raise ValidationError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    if p.ndim == 2:
        p, g = p[None], g[None]
    total = ConfusionTotals()
    per_frame = []
    for pf, gf in zip(p, g):
        c = confusion(pf, gf)
        total.add(c)
        per_frame.append(c.iou())
    return total.iou(), float(np.mean(per_frame))


@dataclass
class Component:
    pixels: np.ndarray  # (k, 2) row/col coordinates
    centroid: tuple[float, float]

    @property
    def area(self) -> int:
        return len(self.pixels)


def extract_targets(mask) -> list[Component]:
    """8-connected components ordered by their first pixel in raster order."""
    m = _as_binary(mask)
    labels, n = ndimage.label(m, structure=_EIGHT)
    comps = []
    for k in range(1, n + 1):
        pix = np.argwhere(labels == k)
        cy, cx = pix.mean(axis=0)
        comps.append(Component(pixels=pix, centroid=(float(cy), float(cx))))
    return comps


@dataclass
class TargetMatchResult:
    n_true: int = 0
    n_gt: int = 0
    n_false_pixels: int = 0
    n_all: int = 0
    pairs: list[tuple[int, int, float]] = field(default_factory=list)

    def add(self, other: TargetMatchResult) -> None:
        self.n_true += other.n_true
        self.n_gt += other.n_gt
        self.n_false_pixels += other.n_false_pixels
        self.n_all += other.n_all

    @property
    def pd(self) -> float:
        return 0.0 if self.n_gt == 0 else self.n_true / self.n_gt

    @property
    def fa(self) -> float:
        """False-alarm pixel ratio (not scaled)."""
        return 0.0 if self.n_all == 0 else self.n_false_pixels / self.n_all


def match_and_count(pred_mask, gt_mask) -> TargetMatchResult:
    """Greedy nearest-first one-to-one matching; a pair matches iff distance < 3 px."""
    p = _as_binary(pred_mask, "prediction")
    g = _as_binary(gt_mask, "ground truth")
    if p.shape != g.shape or p.ndim != 2:
        raise ValidationError(f"expected two equal 2-D masks, got {p.shape} and {g.shape}")
    preds, gts = extract_targets(p), extract_targets(g)
    candidates = []
    for i, gc in enumerate(gts):
        for j, pc in enumerate(preds):
            d = float(np.hypot(gc.centroid[0] - pc.centroid[0], gc.centroid[1] - pc.centroid[1]))
            if d < MATCH_DISTANCE:
                candidates.append((d, i, j))
    candidates.sort()
    used_g, used_p, pairs = set(), set(), []
    for d, i, j in candidates:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        pairs.append((i, j, d))
    false_pixels = sum(pc.area for j, pc in enumerate(preds) if j not in used_p)
    return TargetMatchResult(n_true=len(pairs), n_gt=len(gts), n_false_pixels=false_pixels,
                             n_all=int(p.size), pairs=pairs)


@dataclass
class MetricReport:
    iou: float
    niou: float
    pd: float
    fa: float  # in units of 1e-6
    n_frames: int
    totals: dict

    @classmethod
    def from_totals(cls, conf: ConfusionTotals, frame_ious: list[float], match: TargetMatchResult) -> MetricReport:
        return cls(
            iou=conf.iou(),
            niou=float(np.mean(frame_ious)) if frame_ious else 0.0,
            pd=match.pd,
            fa=match.fa * FA_SCALE,
            n_frames=len(frame_ious),
            totals={
                "tp": conf.tp, "gt_pixels": conf.gt, "pred_pixels": conf.pred,
                "n_true": match.n_true, "n_gt": match.n_gt,
                "n_false_pixels": match.n_false_pixels, "n_all": match.n_all,
                "frame_iou_sum": float(np.sum(frame_ious)),
            },
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


class MetricAccumulator:
    """Streams frames and produces a MetricReport."""

    def __init__(self):
        self.conf = ConfusionTotals()
        self.match = TargetMatchResult()
        self.frame_ious: list[float] = []

    def update(self, pred_masks, gt_masks) -> None:
        p = _as_binary(pred_masks, "prediction")
        g = _as_binary(gt_masks, "ground truth")
        if p.ndim == 2:
            p, g = p[None], g[None]
        for pf, gf in zip(p, g):
            c = confusion(pf, gf)
            self.conf.add(c)
            self.frame_ious.append(c.iou())
            self.match.add(match_and_count(pf, gf))

    def report(self) -> MetricReport:
        return MetricReport.from_totals(self.conf, self.frame_ious, self.match)


def evaluate_masks(pred_masks, gt_masks) -> MetricReport:
    acc = MetricAccumulator()
    acc.update(pred_masks, gt_masks)
    return acc.report()


def binarize(prob, threshold: float) -> np.ndarray:
    """p > threshold; threshold <= 0 selects every pixel and >= 1 selects none."""
    prob = np.asarray(prob)
    if threshold <= 0.0:
        return np.ones(prob.shape, dtype=bool)
    if threshold >= 1.0:
        return np.zeros(prob.shape, dtype=bool)
    return prob > threshold


def roc(prob_maps, gt_masks, thresholds=DEFAULT_THRESHOLDS) -> list[tuple[float, float, float]]:
    """(threshold, Pd, Fa x 1e6) rows in the given (descending) threshold order."""
    probs = np.asarray(prob_maps, dtype=np.float64)
    gts = _as_binary(gt_masks, "ground truth")
    if probs.ndim == 2:
        probs, gts = probs[None], gts[None]
    if probs.shape != gts.shape:
        raise ValidationError(f"probability shape {probs.shape} != ground truth shape {gts.shape}")
    if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValidationError("probabilities must lie in [0, 1]")
    rows = []
    for thr in thresholds:
        total = TargetMatchResult()
        for pf, gf in zip(probs, gts):
            total.add(match_and_count(binarize(pf, thr), gf))
        rows.append((float(thr), total.pd, total.fa * FA_SCALE))
    return rows


def roc_csv(rows, config_hash: str | None = None) -> str:
    buf = io.StringIO()
    if config_hash:
        buf.write(f"# config_hash={config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["threshold", "Pd", "Fa"])
    for thr, pd, fa in rows:
        writer.writerow([f"{thr:g}", repr(pd), repr(fa)])
    return buf.getvalue()
