"""Seed quality metrics: IoU/mIoU, trimap mIoU and boundary F-measure."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ArgumentError, UndefinedBandError

DEFAULT_WIDTHS = (1, 2, 3, 5, 8, 10, 15, 20)


@dataclass
class MetricReport:
    per_class_iou: dict = field(default_factory=dict)
    miou: float = 0.0
    trimap: dict = field(default_factory=dict)
    boundary_f: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("per_class_iou", "trimap", "boundary_f"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def write_curves(self, out_dir) -> list[Path]:
        paths = []
        for name in ("trimap", "boundary_f"):
            p = Path(out_dir) / f"{name}_curve.csv"
            with open(p, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["width", "value"])
                for wdt in sorted(getattr(self, name)):
                    writer.writerow([wdt, repr(float(getattr(self, name)[wdt]))])
            paths.append(p)
        return paths


class ConfusionCounter:
    """Accumulates per-class intersections and unions over many label maps."""

    def __init__(self, num_labels: int):
        self.num_labels = num_labels
        self.inter = np.zeros(num_labels + 1, dtype=np.int64)
        self.union = np.zeros(num_labels + 1, dtype=np.int64)

    def update(self, pred: np.ndarray, gt: np.ndarray) -> None:
        p = np.asarray(pred).reshape(-1)
        g = np.asarray(gt).reshape(-1)
        n = self.num_labels + 1
        hit = p == g
        self.inter += np.bincount(g[hit], minlength=n)[:n]
        self.union += np.bincount(p, minlength=n)[:n] + np.bincount(g, minlength=n)[:n]
        self.union -= np.bincount(g[hit], minlength=n)[:n]

    def per_class(self) -> dict[int, float]:
        return {c: float(self.inter[c] / self.union[c])
                for c in range(1, self.num_labels + 1) if self.union[c] > 0}

    def miou(self) -> float:
        vals = list(self.per_class().values())
        return float(np.mean(vals)) if vals else 0.0


def _check(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = np.asarray(pred), np.asarray(gt)
    if p.shape != g.shape:
        raise ArgumentError(f"shape mismatch: {p.shape} vs {g.shape}")
    return p, g


def miou(pred, gt, num_classes: int) -> MetricReport:
    """IoU per label (background is ``num_classes + 1``) and their mean over defined labels."""
    p, g = _check(pred, gt)
    counter = ConfusionCounter(num_classes + 1)
    counter.update(p, g)
    return MetricReport(per_class_iou=counter.per_class(), miou=counter.miou())


def boundary(labels) -> np.ndarray:
    """Pixels with at least one 4-neighbour carrying a different label."""
    a = np.asarray(labels)
    b = np.zeros(a.shape, dtype=bool)
    diff_v = a[1:, :] != a[:-1, :]
    diff_h = a[:, 1:] != a[:, :-1]
    b[1:, :] |= diff_v
    b[:-1, :] |= diff_v
    b[:, 1:] |= diff_h
    b[:, :-1] |= diff_h
    return b


def _dilate(mask: np.ndarray, width: int) -> np.ndarray:
    if width <= 0:
        return mask.copy()
    return ndimage.maximum_filter(mask.astype(np.uint8), size=2 * width + 1, mode="constant") > 0


def trimap_band(gt, width: int) -> np.ndarray:
    if width < 1:
        raise ArgumentError("trimap width must be >= 1")
    b = boundary(gt)
    if not b.any():
        raise UndefinedBandError("ground truth has no inter-class boundary")
    return _dilate(b, width)


def trimap_miou(pred, gt, width: int, num_classes: int) -> float:
    """mIoU over pixels within Chebyshev distance ``width`` of a ground-truth boundary."""
    p, g = _check(pred, gt)
    band = trimap_band(g, width)
    counter = ConfusionCounter(num_classes + 1)
    counter.update(p[band], g[band])
    return counter.miou()


def _match_counts(pred_b: np.ndarray, gt_b: np.ndarray, width: int) -> tuple[int, int, int, int]:
    hit_p = int((pred_b & _dilate(gt_b, width)).sum())
    hit_g = int((gt_b & _dilate(pred_b, width)).sum())
    return hit_p, int(pred_b.sum()), hit_g, int(gt_b.sum())


def _f_from_counts(hit_p: int, n_p: int, hit_g: int, n_g: int) -> float:
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    precision, recall = hit_p / n_p, hit_g / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def boundary_fmeasure_masks(pred_boundary, gt_boundary, width: int) -> float:
    """F-measure between two boundary masks with a ``width`` pixel matching tolerance."""
    if width < 0:
        raise ArgumentError("width must be >= 0")
    pb, gb = _check(np.asarray(pred_boundary, bool), np.asarray(gt_boundary, bool))
    return _f_from_counts(*_match_counts(pb, gb, width))


def boundary_fmeasure(pred, gt, width: int) -> float:
    p, g = _check(pred, gt)
    return boundary_fmeasure_masks(boundary(p), boundary(g), width)


def evaluate_dataset(preds, gts, num_classes: int, widths=DEFAULT_WIDTHS) -> MetricReport:
    """Dataset-level metrics with counts pooled over images.

    Images whose ground truth has no boundary are left out of the trimap
    counts but still take part in the boundary F-measure.
    """
    overall = ConfusionCounter(num_classes + 1)
    bands = {w: ConfusionCounter(num_classes + 1) for w in widths}
    fcounts = {w: np.zeros(4, dtype=np.int64) for w in widths}
    for p, g in zip(preds, gts):
        p, g = _check(p, g)
        overall.update(p, g)
        gb, pb = boundary(g), boundary(p)
        for w in widths:
            if gb.any():
                band = _dilate(gb, w)
                bands[w].update(p[band], g[band])
            fcounts[w] += np.array(_match_counts(pb, gb, w))
    return MetricReport(
        per_class_iou=overall.per_class(),
        miou=overall.miou(),
        trimap={w: bands[w].miou() for w in widths},
        boundary_f={w: _f_from_counts(*map(int, fcounts[w])) for w in widths},
    )


def cooccurrence_fpr(preds, samples, config) -> float:
    """Share of background pixels on a present class's co-occurring texture predicted as foreground."""
    bg = config.num_classes + 1
    hits = total = 0
    for p, s in zip(preds, samples):
        if s.texture not in {config.cooccurring_texture(c) for c in s.classes}:
            continue
        region = s.gt_mask == bg
        total += int(region.sum())
        hits += int((np.asarray(p)[region] != bg).sum())
    return hits / total if total else 0.0
