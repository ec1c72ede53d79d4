"""Two-level classifier tree over RA-Seg and L-Seg maps, and the threshold search.

The residential classifier gates which L-Seg threshold applies:

    R   = RA >= L1
    out = (L >= L2) on R,  (L >= L3) elsewhere

``optimize_triplet`` runs cyclic coordinate descent over a threshold grid,
sweeping L3, L1, L2 in turn and moving only on a strict gain in mean F.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .eval import crop_valid, distance_to, f_measure, relaxed_counts, valid_slice

COORDS = ("L3", "L1", "L2")
TRACE_HEADER = ("step", "coordinate", "L1", "L2", "L3", "mean_f")


@dataclass(frozen=True)
class ThresholdTriplet:
    L1: float  # RA gate
    L2: float  # L-Seg threshold inside residential areas
    L3: float  # L-Seg threshold outside

    def replace(self, coord, value):
        d = {"L1": self.L1, "L2": self.L2, "L3": self.L3}
        d[coord] = value
        return ThresholdTriplet(**d)


@dataclass
class TreeInputs:
    ra: np.ndarray    # per-pixel RA probability (tiles expanded)
    lseg: np.ndarray  # L-Seg probability, NaN outside the predicted interior
    gt: np.ndarray


@dataclass
class TraceRow:
    step: int
    coordinate: str
    triplet: ThresholdTriplet
    mean_f: float


def expand_tiles(values, centers, shape, tile=16):
    """Nearest expansion: each tile value fills its tile x tile footprint; NaN elsewhere."""
    out = np.full(shape, np.nan, np.float32)
    h = tile // 2
    for v, (i, j) in zip(np.asarray(values, np.float32).ravel(), centers):
        out[i - h:i + h, j - h:j + h] = v
    return out


def apply_tree(ra, lseg, triplet):
    ra = np.asarray(ra)
    lseg = np.asarray(lseg)
    if ra.shape != lseg.shape:
        raise ValueError(f"RA map {ra.shape} and L-Seg map {lseg.shape} differ in shape")
    with np.errstate(invalid="ignore"):
        res = ra >= triplet.L1
        return np.where(res, lseg >= triplet.L2, lseg >= triplet.L3)


class _Scorer:
    """Mean relaxed F of the tree output over a dataset, memoized per triplet."""

    def __init__(self, dataset, rho):
        if not dataset:
            raise ValueError("empty dataset")
        self.items = []
        for d in dataset:
            if d.ra.shape != d.lseg.shape:
                raise ValueError("RA and L-Seg maps must be aligned")
            lseg, gt = crop_valid(d.lseg, d.gt)
            ra = np.nan_to_num(np.asarray(d.ra)[valid_slice(d.lseg)], nan=0.0)
            gt = gt.astype(bool)
            self.items.append((ra, lseg, gt, distance_to(gt)))
        self.rho = rho
        self.memo = {}

    def __call__(self, t):
        key = (t.L1, t.L2, t.L3)
        if key not in self.memo:
            fs = []
            for ra, lseg, gt, gd in self.items:
                hp, n_pred, hg, n_gt = relaxed_counts(apply_tree(ra, lseg, t), gt, self.rho, gd)
                c = hp / n_pred if n_pred else 1.0
                m = hg / n_gt if n_gt else 1.0
                fs.append(f_measure(c, m))
            self.memo[key] = float(np.mean(fs))
        return self.memo[key]


def tree_mean_f(dataset, triplet, rho=3):
    return _Scorer(dataset, rho)(triplet)


def _sweep_coord(score, t, coord, values):
    """Best value for one coordinate; the first grid value wins ties."""
    best_v, best_f = None, -1.0
    for v in values:
        f = score(t.replace(coord, v))
        if f > best_f:
            best_v, best_f = v, f
    return best_v, best_f


def optimize_triplet(dataset, grid, init, rho=3, refine=False, max_steps=1000):
    """Coordinate descent from ``init`` = (L1, L2); L3 starts equal to L2.

    Returns (triplet, trace).  The trace holds the start point and every
    accepted move.  With ``refine`` a second pass tries half-grid-step
    neighbours of each coordinate until none helps.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty threshold grid")
    score = _Scorer(dataset, rho)
    t = ThresholdTriplet(float(init[0]), float(init[1]), float(init[1]))
    f = score(t)
    trace = [TraceRow(0, "init", t, f)]
    idle = 0
    k = 0
    while idle < len(COORDS) and k < max_steps:
        coord = COORDS[k % len(COORDS)]
        k += 1
        v, fv = _sweep_coord(score, t, coord, grid)
        if fv > f:
            t, f = t.replace(coord, v), fv
            trace.append(TraceRow(len(trace), coord, t, f))
            idle = 0
        else:
            idle += 1

    if refine and len(grid) > 1:
        half = min(b - a for a, b in zip(grid, grid[1:])) / 2
        improved = True
        while improved:
            improved = False
            for coord in COORDS:
                cur = getattr(t, coord)
                cands = [round(cur - half, 10), round(cur + half, 10)]
                v, fv = _sweep_coord(score, t, coord, [c for c in cands if 0 <= c <= 1])
                if v is not None and fv > f:
                    t, f = t.replace(coord, v), fv
                    trace.append(TraceRow(len(trace), coord + "+half", t, f))
                    improved = True
    return t, trace


def is_coordinatewise_optimal(dataset, grid, triplet, rho=3):
    score = _Scorer(dataset, rho)
    f = score(triplet)
    return all(score(triplet.replace(c, float(v))) <= f for c in COORDS for v in grid)


def write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace:
            t = r.triplet
            w.writerow([r.step, r.coordinate, f"{t.L1:.6f}", f"{t.L2:.6f}", f"{t.L3:.6f}",
                        f"{r.mean_f:.6f}"])
