"""Relaxed correctness / completeness, F-measure and threshold sweeps.

A predicted pixel is correct when a reference pixel lies within Euclidean
distance rho of it; completeness swaps the roles.  Both are computed from one
Euclidean distance transform per mask, which is the same as dilating the
reference by a disk of radius rho.
"""
import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

CSV_HEADER = ("threshold", "correctness", "completeness", "f_measure")


@dataclass(frozen=True)
class RelaxedParams:
    rho: int = 3

    def __post_init__(self):
        if int(self.rho) != self.rho or self.rho < 0:
            raise ValueError(f"rho must be a nonnegative integer, got {self.rho}")


def _rho(params):
    return params.rho if isinstance(params, RelaxedParams) else RelaxedParams(params).rho


@dataclass
class ScoreRow:
    threshold: float
    correctness: float
    completeness: float
    f_measure: float


def f_measure(correctness, completeness):
    s = correctness + completeness
    return 2 * correctness * completeness / s if s > 0 else 0.0


def threshold_grid(step=0.01, start=None, stop=1.0):
    """step, 2*step, ..., stop, rounded to kill float drift (0.01:0.01:1 by default)."""
    start = step if start is None else start
    n = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 10) for k in range(n)]


def _check(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def distance_to(mask):
    """Euclidean distance of every pixel to the nearest set pixel (inf if none)."""
    mask = np.asarray(mask, bool)
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask)


def _near_fraction(src, dist_to_ref, rho):
    n = int(src.sum())
    if n == 0:
        return 1.0, 0, 0
    hits = int((dist_to_ref[src] <= rho).sum())
    return hits / n, hits, n


def relaxed_counts(pred, gt, rho, gt_dist=None):
    """(correct predicted, predicted, matched reference, reference) pixel counts."""
    rho = _rho(rho)
    pred, gt = _check(pred, gt)
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    gd = distance_to(gt) if gt_dist is None else gt_dist
    _, hp, n_pred = _near_fraction(pred, gd, rho)
    _, hg, n_gt = _near_fraction(gt, distance_to(pred), rho)
    return hp, n_pred, hg, n_gt


def relaxed_scores(pred, gt, rho=3):
    """(correctness, completeness); 1.0 for an empty denominator."""
    hp, n_pred, hg, n_gt = relaxed_counts(pred, gt, rho)
    return (hp / n_pred if n_pred else 1.0), (hg / n_gt if n_gt else 1.0)


def valid_slice(prob):
    """Slices of the finite (predicted) rectangle of a probability map."""
    ok = np.isfinite(prob)
    if not ok.any():
        raise ValueError("probability map has no valid pixels")
    rows = np.flatnonzero(ok.any(axis=1))
    cols = np.flatnonzero(ok.any(axis=0))
    sl = (slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1))
    if not ok[sl].all():
        raise ValueError("valid region of the probability map is not a rectangle")
    return sl


def crop_valid(prob, gt):
    """Crop both maps to the bounding box of the finite part of ``prob``."""
    prob, gt = _check(prob, gt)
    sl = valid_slice(prob)
    return prob[sl], gt[sl]


def sweep(prob, gt, thresholds, rho=3):
    """One ScoreRow per threshold; pixels with prob >= threshold are positive."""
    prob, gt = crop_valid(prob, gt)
    thresholds = list(thresholds)
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be sorted ascending")
    gt = gt.astype(bool)
    gd = distance_to(gt)
    rho = _rho(rho)
    rows = []
    for t in thresholds:
        hp, n_pred, hg, n_gt = relaxed_counts(prob >= t, gt, rho, gd)
        c = hp / n_pred if n_pred else 1.0
        m = hg / n_gt if n_gt else 1.0
        rows.append(ScoreRow(float(t), c, m, f_measure(c, m)))
    return rows


def sweep_many(maps, thresholds, rho=3, pooled=False):
    """Aggregate sweep over (prob, gt) pairs.

    Default: per-threshold means of the per-image correctness, completeness
    and F.  ``pooled=True`` instead sums pixel counts over all images and
    scores the totals.
    """
    maps = list(maps)
    if not maps:
        raise ValueError("need at least one image")
    thresholds = list(thresholds)
    if not pooled:
        per = [sweep(p, g, thresholds, rho) for p, g in maps]
        out = []
        for k, t in enumerate(thresholds):
            rs = [rows[k] for rows in per]
            out.append(ScoreRow(t, float(np.mean([r.correctness for r in rs])),
                                float(np.mean([r.completeness for r in rs])),
                                float(np.mean([r.f_measure for r in rs]))))
        return out
    tot = np.zeros((len(thresholds), 4), np.int64)
    for p, g in maps:
        p, g = crop_valid(p, g)
        g = g.astype(bool)
        gd = distance_to(g)
        for k, t in enumerate(thresholds):
            tot[k] += relaxed_counts(p >= t, g, rho, gd)
    out = []
    for t, (hp, n_pred, hg, n_gt) in zip(thresholds, tot):
        c = hp / n_pred if n_pred else 1.0
        m = hg / n_gt if n_gt else 1.0
        out.append(ScoreRow(t, c, m, f_measure(c, m)))
    return out


def mean_f(maps, threshold, rho=3, pooled=False):
    """Unweighted mean of per-image F at one threshold (or pooled F)."""
    return sweep_many(maps, [threshold], rho, pooled)[0].f_measure


def best_row(rows):
    """Row with the highest F; ties go to the lowest threshold."""
    if not rows:
        raise ValueError("no rows")
    best = rows[0]
    for r in rows[1:]:
        if r.f_measure > best.f_measure:
            best = r
    return best


def best_mean_f(maps, thresholds=None, rho=3):
    rows = sweep_many(maps, threshold_grid() if thresholds is None else thresholds, rho)
    r = best_row(rows)
    return r.f_measure, r.threshold


def write_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([f"{r.threshold:.6f}", f"{r.correctness:.6f}",
                        f"{r.completeness:.6f}", f"{r.f_measure:.6f}"])


def read_csv(path):
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [ScoreRow(*(float(x) for x in row)) for row in rd]
