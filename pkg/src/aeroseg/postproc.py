"""From probability maps to building counts.

threshold -> erode -> 8-connected blobs -> match blobs against reference boxes.

Counting report accounting (a reconstruction, the credit rule is a choice):

* a blob whose box reaches IoU >= 0.3 with two or more reference boxes is a
  residential hit and covers all of them;
* the remaining blobs and references are matched one-to-one, highest IoU
  first, IoU >= 0.3 -> true positives;
* leftover blobs are false positives, leftover references false negatives;
* a residential hit is credited as ``multiplier`` houses (default 2):

    precision = (TP + m*R) / (TP + FP + m*R)
    recall    = min(1, (TP + m*R) / human)
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data.imageio import save_image
from .eval import best_row, sweep, threshold_grid


def select_threshold(val_set, rho=3, grid=None):
    """Mean over images of each image's best-F threshold (ties go low)."""
    val_set = list(val_set)
    if not val_set:
        raise ValueError("empty validation set")
    grid = threshold_grid() if grid is None else grid
    best = [best_row(sweep(p, g, grid, rho)).threshold for p, g in val_set]
    return float(np.mean(best))


def erode(mask, radius=1):
    """Binary erosion by a (2r+1) x (2r+1) square; pixels beyond the border count as 0."""
    if radius < 0:
        raise ValueError("erosion radius must be >= 0")
    mask = np.asarray(mask, bool)
    if radius == 0:
        return mask.copy()
    se = np.ones((2 * radius + 1, 2 * radius + 1), bool)
    return ndimage.binary_erosion(mask, se, border_value=0)


@dataclass
class Blob:
    label: int
    area: int
    box: tuple  # (rmin, cmin, rmax, cmax), inclusive

    @property
    def center(self):
        return (self.box[0] + self.box[2]) / 2, (self.box[1] + self.box[3]) / 2


def label_map(mask):
    """8-connected labels (0 = background) and the number of components."""
    return ndimage.label(np.asarray(mask, bool), structure=np.ones((3, 3), int))


def components(mask, min_area=4):
    lab, n = label_map(mask)
    if n == 0:
        return []
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    out = []
    for k, sl in enumerate(ndimage.find_objects(lab), 1):
        if areas[k] < min_area:
            continue
        box = (sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1)
        out.append(Blob(k, int(areas[k]), tuple(int(v) for v in box)))
    return out


def box_iou(a, b):
    """IoU of inclusive pixel boxes (rmin, cmin, rmax, cmax)."""
    h = min(a[2], b[2]) - max(a[0], b[0]) + 1
    w = min(a[3], b[3]) - max(a[1], b[1]) + 1
    if h <= 0 or w <= 0:
        return 0.0
    inter = h * w
    area = lambda r: (r[2] - r[0] + 1) * (r[3] - r[1] + 1)
    return inter / (area(a) + area(b) - inter)


@dataclass
class CountReport:
    human_count: int
    detected_count: int
    true_positives: int
    false_positives: int
    false_negatives: int
    residential_hits: int
    precision: float
    recall: float
    f1: float

    FIELDS = ("human_count", "detected_count", "true_positives", "false_positives",
              "false_negatives", "residential_hits", "precision", "recall", "f1")


def count_report(blobs, reference_boxes, iou=0.3, multiplier=2):
    boxes = [b.box if isinstance(b, Blob) else tuple(b) for b in blobs]
    refs = [tuple(r) for r in reference_boxes]
    m = np.array([[box_iou(b, r) for r in refs] for b in boxes]).reshape(len(boxes), len(refs))
    hit = m >= iou

    residential = [i for i in range(len(boxes)) if hit[i].sum() >= 2]
    blob_left = set(range(len(boxes))) - set(residential)
    ref_left = set(range(len(refs)))
    for i in residential:
        ref_left -= set(np.flatnonzero(hit[i]).tolist())

    # greedy one-to-one on what is left, highest IoU first, stable on index
    pairs = sorted(((m[i, j], i, j) for i in blob_left for j in ref_left if hit[i, j]),
                   key=lambda x: (-x[0], x[1], x[2]))
    tp = 0
    for _, i, j in pairs:
        if i in blob_left and j in ref_left:
            blob_left.discard(i)
            ref_left.discard(j)
            tp += 1

    fp, fn, res = len(blob_left), len(ref_left), len(residential)
    credit = tp + multiplier * res
    precision = credit / (tp + fp + multiplier * res) if boxes else 1.0
    recall = min(1.0, credit / len(refs)) if refs else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return CountReport(len(refs), len(boxes), tp, fp, fn, res, precision, recall, f1)


def count_buildings(prob, threshold, erode_radius=1, min_area=4):
    """Blobs of the eroded binary map; NaN (no-data) pixels are background."""
    with np.errstate(invalid="ignore"):
        binary = np.asarray(prob) >= threshold
    return components(erode(binary, erode_radius), min_area)


def write_count_csv(path, rows):
    """rows: list of (image_id, CountReport)."""
    with open(path, "w", newline="") as f:
        f.write("# precision=(TP+m*R)/(TP+FP+m*R); recall=min(1,(TP+m*R)/human); "
                "R=residential hits, m=credit per hit\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("image",) + CountReport.FIELDS)
        for name, r in rows:
            vals = [getattr(r, k) for k in CountReport.FIELDS]
            w.writerow([name] + [f"{v:.6f}" if isinstance(v, float) else v for v in vals])


def draw_boxes(image, boxes, color=(1.0, 0.0, 0.0)):
    """Copy of an H x W x 3 image with 1-pixel box outlines burned in."""
    out = np.array(image, np.float64, copy=True)
    h, w = out.shape[:2]
    for r0, c0, r1, c1 in boxes:
        r0, c0 = max(r0, 0), max(c0, 0)
        r1, c1 = min(r1, h - 1), min(c1, w - 1)
        out[r0, c0:c1 + 1] = color
        out[r1, c0:c1 + 1] = color
        out[r0:r1 + 1, c0] = color
        out[r0:r1 + 1, c1] = color
    return out


def save_overlay(path, image, blobs):
    save_image(path, draw_boxes(image, [b.box for b in blobs]))
