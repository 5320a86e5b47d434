"""Detection metrics against brute-force pixel and component counting."""

from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lvnet.errors import ValidationError
from lvnet.metrics import (
    DEFAULT_THRESHOLDS,
    MetricAccumulator,
    binarize,
    evaluate_masks,
    extract_targets,
    match_and_count,
    pixel_iou,
    roc,
    roc_csv,
)


def flood_fill_components(mask):
    """8-connected components by explicit breadth-first search."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if not mask[y, x] or seen[y, x]:
                continue
            queue, pixels = deque([(y, x)]), []
            seen[y, x] = True
            while queue:
                cy, cx = queue.popleft()
                pixels.append((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            comps.append(frozenset(pixels))
    return comps


def oracle_frame(pred, gt):
    """(tp, gt, pred, n_true, n_gt, false_pixels) by loops and exhaustive pair sorting."""
    tp = sum(1 for y in range(pred.shape[0]) for x in range(pred.shape[1]) if pred[y, x] and gt[y, x])
    pc, gc = flood_fill_components(pred), flood_fill_components(gt)

    def centroid(c):
        return (sum(p[0] for p in c) / len(c), sum(p[1] for p in c) / len(c))

    pairs = sorted(
        (((centroid(g)[0] - centroid(p)[0]) ** 2 + (centroid(g)[1] - centroid(p)[1]) ** 2) ** 0.5, i, j)
        for i, g in enumerate(gc) for j, p in enumerate(pc)
    )
    used_g, used_p = set(), set()
    for d, i, j in pairs:
        if d < 3.0 and i not in used_g and j not in used_p:
            used_g.add(i)
            used_p.add(j)
    false_pixels = sum(len(p) for j, p in enumerate(pc) if j not in used_p)
    return tp, int(gt.sum()), int(pred.sum()), len(used_g), len(gc), false_pixels


def random_masks(seed, n=3, size=None):
    rng = np.random.default_rng(seed)
    h, w = size or rng.integers(4, 33, 2)
    density = rng.uniform(0.02, 0.3)
    gt = rng.random((n, h, w)) < density
    pred = gt.copy()
    flip = rng.random((n, h, w)) < rng.uniform(0.0, 0.2)
    pred ^= flip
    return pred, gt


class TestExtractTargets:
    def test_single_pixel(self):
        m = np.zeros((10, 10), np.uint8)
        m[5, 7] = 1
        (c,) = extract_targets(m)
        assert c.centroid == (5.0, 7.0) and c.area == 1

    def test_diagonal_pair_is_one_component(self):
        m = np.zeros((4, 4), bool)
        m[1, 1] = m[2, 2] = True
        assert len(extract_targets(m)) == 1

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_flood_fill(self, seed):
        m = np.random.default_rng(seed).random((16, 16)) < 0.35
        got = {frozenset(map(tuple, c.pixels)) for c in extract_targets(m)}
        assert got == set(flood_fill_components(m))

    def test_non_binary_rejected(self):
        with pytest.raises(ValidationError):
            extract_targets(np.array([[0, 2]]))


class TestPixelIoU:
    def test_identical(self):
        m = np.zeros((2, 8, 8), bool)
        m[:, 2:4, 2:4] = True
        assert pixel_iou(m, m) == (1.0, 1.0)

    def test_one_frame_arithmetic(self):
        g = np.zeros((4, 4), bool)
        g[0, :] = True
        p = np.zeros((4, 4), bool)
        p[0, :2] = p[1, :2] = True
        assert pixel_iou(p, g)[0] == pytest.approx(2 / 6)

    def test_niou_averages_frames(self):
        g = np.zeros((2, 4, 4), bool)
        g[0, 0, :2] = True
        g[1, 0, :] = True
        p = g.copy()
        p[1, 0, 2:] = False
        iou, niou = pixel_iou(p, g)
        assert niou == pytest.approx(0.75)
        assert iou == pytest.approx(4 / 6)

    def test_empty_frames_count_as_one(self):
        z = np.zeros((3, 5, 5), bool)
        assert pixel_iou(z, z) == (1.0, 1.0)

    def test_validation(self):
        with pytest.raises(ValidationError):
            pixel_iou(np.full((2, 2), 0.5), np.zeros((2, 2)))
        with pytest.raises(ValidationError):
            pixel_iou(np.zeros((2, 2)), np.zeros((2, 3)))


class TestMatching:
    def test_distance_three_does_not_match(self):
        gt = np.zeros((20, 20), bool)
        gt[10, 10] = True
        pred = np.zeros((20, 20), bool)
        pred[10, 13] = True
        assert match_and_count(pred, gt).n_true == 0

    def test_distance_2_9_matches(self):
        gt = np.zeros((40, 40), bool)
        gt[20, 20] = True
        pred = np.zeros((40, 40), bool)
        # ten pixels: nine in column 23, one in column 22 -> centroid column 22.9, row 20
        rows = [16, 17, 18, 19, 20, 21, 22, 23, 24]
        for r in rows:
            pred[r, 23] = True
        pred[20, 22] = True
        (c,) = extract_targets(pred)
        assert c.centroid == pytest.approx((20.0, 22.9))
        res = match_and_count(pred, gt)
        assert res.n_true == 1 and res.pairs[0][2] == pytest.approx(2.9)

    def test_pd_two_of_three(self):
        gt = np.zeros((30, 30), bool)
        for y, x in ((3, 3), (15, 15), (25, 25)):
            gt[y, x] = True
        pred = np.zeros_like(gt)
        pred[3, 4] = pred[15, 16] = True
        assert match_and_count(pred, gt).pd == pytest.approx(2 / 3)

    def test_fa_five_pixels(self):
        gt = np.zeros((100, 100), bool)
        pred = np.zeros_like(gt)
        pred[50, 50:55] = True
        res = match_and_count(pred, gt)
        assert res.n_false_pixels == 5
        assert evaluate_masks(pred, gt).fa == pytest.approx(500.0)

    def test_one_to_one(self):
        gt = np.zeros((10, 10), bool)
        gt[5, 5] = True
        pred = np.zeros_like(gt)
        pred[5, 3] = pred[5, 7] = True  # two components, both within range
        res = match_and_count(pred, gt)
        assert res.n_true == 1 and res.n_false_pixels == 1

    @pytest.mark.parametrize("seed", range(100))
    def test_against_brute_force(self, seed):
        pred, gt = random_masks(seed)
        rep = evaluate_masks(pred, gt)
        sums = np.array([oracle_frame(p, g) for p, g in zip(pred, gt)]).sum(0)
        tp, ng, npred, n_true, n_gt, false_pixels = (int(v) for v in sums)
        union = ng + npred - tp
        assert rep.iou == pytest.approx(1.0 if union == 0 else tp / union, abs=1e-12)
        frame_ious = []
        for p, g in zip(pred, gt):
            t, a, b = oracle_frame(p, g)[:3]
            frame_ious.append(1.0 if a + b - t == 0 else t / (a + b - t))
        assert rep.niou == pytest.approx(np.mean(frame_ious), abs=1e-12)
        assert rep.pd == pytest.approx(0.0 if n_gt == 0 else n_true / n_gt, abs=1e-12)
        assert rep.totals["n_false_pixels"] == false_pixels
        assert rep.fa == pytest.approx(false_pixels / pred[0].size / len(pred) * 1e6, rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.permutations(range(4)))
    def test_frame_order_invariance(self, seed, perm):
        pred, gt = random_masks(seed, n=4)
        a = evaluate_masks(pred, gt).to_dict()
        b = evaluate_masks(pred[list(perm)], gt[list(perm)]).to_dict()
        for key in ("iou", "pd", "fa"):
            assert a[key] == b[key]
        assert a["niou"] == pytest.approx(b["niou"], abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_report_invariants(self, seed):
        pred, gt = random_masks(seed)
        rep = evaluate_masks(pred, gt)
        t = rep.totals
        assert 0 <= rep.pd <= 1 and 0 <= rep.iou <= 1 and 0 <= rep.niou <= 1
        assert t["tp"] <= min(t["gt_pixels"], t["pred_pixels"])
        assert t["n_true"] <= t["n_gt"] and t["n_false_pixels"] <= t["pred_pixels"]
        assert rep.fa * 1e-6 * t["n_all"] == pytest.approx(t["n_false_pixels"])
        # recomputable from raw totals
        union = t["gt_pixels"] + t["pred_pixels"] - t["tp"]
        assert rep.iou == (1.0 if union == 0 else t["tp"] / union)
        assert rep.niou == pytest.approx(t["frame_iou_sum"] / rep.n_frames)

    def test_accumulator_matches_batch(self):
        pred, gt = random_masks(3, n=6)
        acc = MetricAccumulator()
        acc.update(pred[:2], gt[:2])
        acc.update(pred[2:], gt[2:])
        assert acc.report() == evaluate_masks(pred, gt)


class TestROC:
    def test_default_thresholds(self):
        assert DEFAULT_THRESHOLDS[:3] == (0.999, 0.99, 0.95)
        assert len(DEFAULT_THRESHOLDS) == 21 and DEFAULT_THRESHOLDS[-1] == 0.05
        assert list(DEFAULT_THRESHOLDS) == sorted(DEFAULT_THRESHOLDS, reverse=True)

    def test_extremes(self, rng):
        probs = rng.random((2, 16, 16))
        gt = np.zeros((2, 16, 16), bool)
        gt[:, 4, 4] = True
        (t0, pd0, fa0), (t1, pd1, fa1) = roc(probs, gt, [0.0, 1.0])
        assert pd1 == 0.0 and fa1 == 0.0
        # threshold 0 predicts every pixel: one frame-wide component centred at (7.5, 7.5), unmatched
        assert fa0 == 1e6 and pd0 == 0.0
        assert binarize(probs, 0.0).all() and not binarize(probs, 1.0).any()

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pixel_sets_nested(self, seed):
        probs = np.random.default_rng(seed).random((12, 12))
        previous = np.zeros_like(probs, bool)
        for thr in DEFAULT_THRESHOLDS:
            current = binarize(probs, thr)
            assert (current | previous == current).all()
            previous = current

    def test_validation(self):
        with pytest.raises(ValidationError):
            roc(np.full((2, 2), 1.5), np.zeros((2, 2)))

    def test_csv(self, rng):
        rows = roc(rng.random((2, 8, 8)), np.zeros((2, 8, 8), bool), [0.9, 0.5])
        text = roc_csv(rows, "abc123")
        lines = text.splitlines()
        assert lines[0] == "# config_hash=abc123" and lines[1] == "threshold,Pd,Fa"
        assert len(lines) == 4 and lines[2].startswith("0.9,")
