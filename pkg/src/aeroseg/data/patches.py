"""Co-centred patch triples, inference grids and residential categories.

A window W(A, p, w) of even width w centred at p = (i, j) covers rows
i - w/2 .. i + w/2 - 1 (same for columns).  No padding is ever applied: only
centres whose 256-pixel global window fits inside the scene are used.
"""
from dataclasses import dataclass

import numpy as np

LOCAL = 64
GLOBAL = 256
OUT = 16
BORDER = 120  # grid border so every tile's global window fits


class SamplingError(ValueError):
    pass


def window(a, p, w):
    i, j = p
    h = w // 2
    if i - h < 0 or j - h < 0 or i + h > a.shape[0] or j + h > a.shape[1]:
        raise SamplingError(f"window {w} at {p} leaves the {a.shape[0]}x{a.shape[1]} scene")
    return a[i - h:i + h, j - h:j + h]


@dataclass
class PatchTriple:
    local: np.ndarray    # 64 x 64 x 3
    global_: np.ndarray  # 256 x 256 x 3
    label: np.ndarray    # 16 x 16
    center: tuple


def triple_at(scene, p, target=None, local=LOCAL, global_=GLOBAL, out=OUT):
    target = scene.mask if target is None else target
    return PatchTriple(window(scene.image, p, local), window(scene.image, p, global_),
                       window(target, p, out), tuple(int(v) for v in p))


def valid_centers(shape, global_=GLOBAL):
    """Boolean map of centres whose global window fits."""
    h = global_ // 2
    ok = np.zeros(shape, bool)
    ok[h:shape[0] - h + 1, h:shape[1] - h + 1] = True
    return ok


def _window_any(mask, w):
    """any() over the w x w label window centred at every pixel."""
    h = w // 2
    m = np.pad(mask.astype(np.int32), ((h, h), (h, h)))
    c = m.cumsum(0).cumsum(1)
    c = np.pad(c, ((1, 0), (1, 0)))
    rows, cols = mask.shape
    # window rows i-h .. i+h-1 -> padded rows i .. i+2h-1
    s = c[2 * h:2 * h + rows, 2 * h:2 * h + cols] - c[:rows, 2 * h:2 * h + cols] \
        - c[2 * h:2 * h + rows, :cols] + c[:rows, :cols]
    return s > 0


def positive_centers(target, out=OUT):
    """Centres whose label window holds at least one target pixel."""
    return _window_any(target, out)


def sample_centers(scene, n, positive_fraction, rng, target=None, hard_negatives=0.0,
                   global_=GLOBAL, out=OUT):
    """Exactly round(n * positive_fraction) positive centres, the rest negative.

    A centre is positive when its label window holds any target pixel.  With
    ``hard_negatives`` > 0, that share of the negatives is centred on decoys.
    Centres are drawn without replacement and returned shuffled, shape (n, 2).
    """
    target = scene.mask if target is None else target
    n_pos = int(np.floor(n * positive_fraction + 0.5))
    n_neg = n - n_pos
    n_hard = int(np.floor(n_neg * hard_negatives + 0.5))
    valid = valid_centers(target.shape, global_)
    pos = positive_centers(target, out) & valid
    neg = ~positive_centers(target, out) & valid
    hard = neg & _window_any(scene.decoy_mask, out) if n_hard else np.zeros_like(neg)
    plain = neg & ~hard

    picks = []
    for pool_, k, what in ((pos, n_pos, "positive"), (hard, n_hard, "decoy"),
                           (plain, n_neg - n_hard, "negative")):
        cand = np.argwhere(pool_)
        if len(cand) < k:
            raise SamplingError(f"need {k} {what} centres, scene offers {len(cand)}")
        if k:
            picks.append(cand[rng.choice(len(cand), k, replace=False)])
    if not picks:
        return np.zeros((0, 2), int)
    centers = np.concatenate(picks)
    return centers[rng.permutation(len(centers))]


def sample_triples(scene, n, positive_fraction, rng, target=None, hard_negatives=0.0,
                   local=LOCAL, global_=GLOBAL, out=OUT):
    """Patch triples at :func:`sample_centers` positions."""
    target = scene.mask if target is None else target
    centers = sample_centers(scene, n, positive_fraction, rng, target, hard_negatives, global_, out)
    return [triple_at(scene, p, target, local, global_, out) for p in centers]


class CenterPool:
    """Candidate centres of one scene, split into positive / decoy / plain.

    Built once so that drawing mini-batches costs no more than an index draw.
    """

    def __init__(self, scene, target=None, global_=GLOBAL, out=OUT):
        target = scene.mask if target is None else target
        valid = valid_centers(target.shape, global_)
        hit = positive_centers(target, out)
        near_decoy = _window_any(scene.decoy_mask, out)
        self.positive = np.argwhere(hit & valid)
        self.decoy = np.argwhere(~hit & near_decoy & valid)
        self.plain = np.argwhere(~hit & ~near_decoy & valid)

    def draw(self, kind, rng):
        cand = getattr(self, kind)
        if len(cand) == 0:
            raise SamplingError(f"scene has no {kind} centres")
        return tuple(int(v) for v in cand[rng.integers(len(cand))])


def grid_centers(shape, border=BORDER, step=OUT):
    """Centres of disjoint step x step output tiles covering the interior.

    Returns (centres, (r0, r1, c0, c1)) where the second item is the tiled
    region; everything outside it is border that the grid does not reach.
    """
    h, w = shape[:2]
    ny = max(0, (h - 2 * border) // step)
    nx = max(0, (w - 2 * border) // step)
    ys = border + step * np.arange(ny) + step // 2
    xs = border + step * np.arange(nx) + step // 2
    centers = [(int(y), int(x)) for y in ys for x in xs]
    return centers, (border, border + ny * step, border, border + nx * step)


def residential_category(scene, p, size=GLOBAL):
    """none / I / II / III from the number of buildings touching the window."""
    return category_for_count(buildings_in_window(scene, p, size))


def buildings_in_window(scene, p, size=GLOBAL):
    i, j = p
    h = size // 2
    r0, r1, c0, c1 = i - h, i + h, j - h, j + h
    count = 0
    for r in scene.rects("building"):
        fp, (q0, q1, d0, d1) = r.raster(scene.shape)
        a0, a1 = max(q0, r0), min(q1, r1)
        b0, b1 = max(d0, c0), min(d1, c1)
        if a0 < a1 and b0 < b1 and fp[a0 - q0:a1 - q0, b0 - d0:b1 - d0].any():
            count += 1
    return count


def category_for_count(count):
    if count <= 0:
        return "none"
    if count <= 5:
        return "I"
    if count <= 15:
        return "II"
    return "III"


def to_nchw(patches):
    """Stack H x W x 3 patches into a float32 (B, 3, H, W) batch."""
    return np.ascontiguousarray(np.stack(patches).transpose(0, 3, 1, 2), dtype=np.float32)
