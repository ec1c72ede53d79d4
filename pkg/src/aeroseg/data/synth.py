"""Seedable synthetic aerial scenes.

A scene is plain ground with a few residential clusters (buildings on a loose
grid, sharing one orientation per cluster), crossed by roads, with textured
rural land (meadow, forest, water) away from the clusters.  Decoys are squares
drawn from exactly the same roof texture as buildings but placed alone, in
small plain-ground clearings inside the rural land, and labelled 0.

The layout is chosen so that a 64-pixel window around a lone building and one
around a decoy look alike (roof on plain ground), while a 256-pixel window
tells them apart (neighbouring houses vs. fields and forest).
"""
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import ndimage

CLASSES = ("building", "decoy", "road", "meadow", "water", "forest", "ground")


class PlacementError(RuntimeError):
    """The requested layout could not be placed within the retry budget."""


@dataclass
class Rect:
    """Rotated rectangle: centre (cy, cx), extents (h, w), angle in radians."""

    cls: str
    cy: float
    cx: float
    h: float
    w: float
    angle: float = 0.0

    def half_extents(self):
        c, s = abs(math.cos(self.angle)), abs(math.sin(self.angle))
        return (self.h * c + self.w * s) / 2, (self.h * s + self.w * c) / 2

    def window(self, shape):
        ey, ex = self.half_extents()
        r0 = max(0, int(math.floor(self.cy - ey)))
        r1 = min(shape[0], int(math.ceil(self.cy + ey)) + 1)
        c0 = max(0, int(math.floor(self.cx - ex)))
        c1 = min(shape[1], int(math.ceil(self.cx + ex)) + 1)
        return r0, r1, c0, c1

    def raster(self, shape):
        """Boolean footprint inside ``window(shape)``: pixel centres inside the rectangle."""
        r0, r1, c0, c1 = self.window(shape)
        dy = np.arange(r0, r1)[:, None] - self.cy
        dx = np.arange(c0, c1)[None, :] - self.cx
        c, s = math.cos(self.angle), math.sin(self.angle)
        u = dy * c + dx * s
        v = -dy * s + dx * c
        return (np.abs(u) <= self.h / 2) & (np.abs(v) <= self.w / 2), (r0, r1, c0, c1)

    def paint(self, mask, value=True):
        fp, (r0, r1, c0, c1) = self.raster(mask.shape)
        mask[r0:r1, c0:c1][fp] = value

    def bbox(self, shape):
        """Tight (rmin, cmin, rmax, cmax) of the rasterized pixels, inclusive."""
        fp, (r0, r1, c0, c1) = self.raster(shape)
        rows = np.flatnonzero(fp.any(axis=1))
        cols = np.flatnonzero(fp.any(axis=0))
        if len(rows) == 0:
            return None
        return r0 + rows[0], c0 + cols[0], r0 + rows[-1], c0 + cols[-1]


@dataclass
class SynthParams:
    seed: int = 0
    size: int = 768
    squares: int = 30              # building-textured squares (buildings + decoys)
    decoy_fraction: float = 0.3
    clusters: int = 2
    cluster_spacing: float = 60.0  # grid pitch inside a cluster
    spacing_jitter: float = 4.0
    building_size: tuple = (9, 14)
    orientation_jitter: float = 0.06  # radians around the cluster angle
    roads: int = 2
    road_width: tuple = (6, 9)
    rural_patches: int = 16        # meadow / forest / water rectangles
    clearing_radius: float = 48.0  # plain ground around each decoy
    decoy_min_dist: float = 110.0  # from any building centre
    decoy_spacing: float = 80.0    # between decoy centres
    min_gap: float = 3.0           # minimum pixel gap between squares
    core_margin: float = 128.0     # squares stay this far inside the scene edge
    noise: float = 0.025
    retries: int = 4000

    def validate(self):
        if self.size < 256 + 16:
            raise ValueError(f"scene size must be at least 272, got {self.size}")
        if not 0 <= self.decoy_fraction <= 1:
            raise ValueError("decoy_fraction must lie in [0, 1]")
        if self.squares < 0 or self.clusters < 0 or self.roads < 0:
            raise ValueError("counts must be non-negative")
        if not 0 <= self.core_margin < self.size / 2:
            raise ValueError("core_margin must lie in [0, size/2)")
        return self

    @property
    def n_decoys(self):
        return int(math.floor(self.squares * self.decoy_fraction + 0.5))

    @property
    def n_buildings(self):
        return self.squares - self.n_decoys


def params_to_text(p):
    lines = []
    for f in fields(p):
        v = getattr(p, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def params_from_text(text):
    from ..architectures import parse_kv

    kv = parse_kv(text)
    base = SynthParams()
    out = {}
    for f in fields(SynthParams):
        if f.name not in kv:
            continue
        default = getattr(base, f.name)
        raw = kv.pop(f.name)
        if isinstance(default, tuple):
            out[f.name] = tuple(type(default[0])(x) for x in raw.split(","))
        else:
            out[f.name] = type(default)(raw)
    if kv:
        raise ValueError(f"unknown synth keys: {sorted(kv)}")
    return SynthParams(**out).validate()


@dataclass
class Scene:
    image: np.ndarray          # H x W x 3 in [0, 1], multiples of 1/255
    mask: np.ndarray           # H x W uint8, building pixels
    meta: list = field(default_factory=list)
    params: SynthParams = None

    @property
    def shape(self):
        return self.mask.shape

    def rects(self, cls):
        return [r for r in self.meta if r.cls == cls]

    def class_mask(self, cls):
        return class_mask(self.meta, cls, self.shape)

    @property
    def decoy_mask(self):
        return class_mask(self.meta, "decoy", self.shape)


def class_mask(meta, cls, shape):
    """Rasterize ``cls`` from metadata; later rectangles occlude earlier ones."""
    if cls not in CLASSES:
        raise ValueError(f"unknown class {cls!r}; known: {CLASSES}")
    out = np.zeros(shape, dtype=bool)
    for r in meta:
        fp, (r0, r1, c0, c1) = r.raster(shape)
        out[r0:r1, c0:c1][fp] = r.cls == cls
    return out.astype(np.uint8)


def meta_to_text(meta):
    """One rectangle per line: cls cy cx h w angle (tab separated, exact floats)."""
    return "".join("\t".join([r.cls] + [repr(float(v)) for v in (r.cy, r.cx, r.h, r.w, r.angle)]) + "\n"
                   for r in meta)


def meta_from_text(text):
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 6 or parts[0] not in CLASSES:
            raise ValueError(f"metadata line {n}: expected cls and 5 numbers, got {line!r}")
        out.append(Rect(parts[0], *(float(x) for x in parts[1:])))
    return out


# -- textures -----------------------------------------------------------------

GROUND = np.array([0.74, 0.70, 0.62])
ROAD = np.array([0.42, 0.42, 0.44])
ROOFS = np.array([[0.62, 0.30, 0.24], [0.55, 0.36, 0.30], [0.48, 0.48, 0.50],
                  [0.70, 0.42, 0.30], [0.40, 0.38, 0.42]])
RURAL = {"meadow": np.array([0.52, 0.66, 0.36]),
         "forest": np.array([0.18, 0.34, 0.18]),
         "water": np.array([0.20, 0.34, 0.56])}


def _smooth_noise(rng, shape, sigma, amp):
    n = ndimage.gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")
    return amp * n / (n.std() + 1e-12)


def _paint(img, rect, color_fn):
    fp, (r0, r1, c0, c1) = rect.raster(img.shape[:2])
    if fp.any():
        patch = img[r0:r1, c0:c1]
        patch[fp] = color_fn(fp.shape, r0, c0)[fp]


def _roof(rng, rect):
    base = ROOFS[rng.integers(len(ROOFS))] + rng.normal(0, 0.03, 3)
    shade = rng.uniform(0.75, 0.9)

    def color(shape, r0, c0):
        # two roof halves split along the long axis, like a gabled roof
        dy = np.arange(shape[0])[:, None] + r0 - rect.cy
        dx = np.arange(shape[1])[None, :] + c0 - rect.cx
        c, s = math.cos(rect.angle), math.sin(rect.angle)
        side = (-dy * s + dx * c) if rect.h >= rect.w else (dy * c + dx * s)
        out = np.broadcast_to(base, shape + (3,)).copy()
        out[side < 0] *= shade
        return out

    return color


def _flat(base, rng, jitter=0.02):
    col = base + rng.normal(0, jitter, 3)
    return lambda shape, r0, c0: np.broadcast_to(col, shape + (3,)).copy()


def _rural_color(kind, rng):
    base = RURAL[kind] + rng.normal(0, 0.02, 3)

    def color(shape, r0, c0):
        tex = {"meadow": 0.05, "forest": 0.09, "water": 0.02}[kind]
        sig = {"meadow": 3.0, "forest": 1.2, "water": 6.0}[kind]
        n = _smooth_noise(rng, shape, sig, tex)
        out = base + n[..., None]
        if kind == "meadow":
            # ploughed-field stripes
            out += 0.04 * np.sin(np.arange(shape[1]) * rng.uniform(0.5, 0.9))[None, :, None]
        return out

    return color


# -- layout -------------------------------------------------------------------

def _copy_from(layer):
    # clearings show the untouched ground layer, so they match open ground exactly
    def color(shape, r0, c0):
        return layer[r0:r0 + shape[0], c0:c0 + shape[1]]
    return color


def _inside_any(c, rects):
    for r in rects:
        dy, dx = c[0] - r.cy, c[1] - r.cx
        u = dy * math.cos(r.angle) + dx * math.sin(r.angle)
        v = -dy * math.sin(r.angle) + dx * math.cos(r.angle)
        if abs(u) <= r.h / 2 and abs(v) <= r.w / 2:
            return True
    return False


def _far_from(p, pts, d):
    return all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= d * d for q in pts)


def _rects_clear(rect, others, gap, shape):
    """No pixel of ``rect`` within ``gap`` pixels (Chebyshev) of any other."""
    ey, ex = rect.half_extents()
    g = int(math.ceil(gap))
    fp, (r0, r1, c0, c1) = rect.raster(shape)
    grown = ndimage.binary_dilation(np.pad(fp, g), np.ones((2 * g + 1, 2 * g + 1), bool))
    for o in others:
        oy, ox = o.half_extents()
        if abs(rect.cy - o.cy) > ey + oy + gap + 2 or abs(rect.cx - o.cx) > ex + ox + gap + 2:
            continue
        ofp, (q0, q1, d0, d1) = o.raster(shape)
        canvas = np.zeros((r1 - r0 + 2 * g, c1 - c0 + 2 * g), bool)
        # other's footprint, shifted into the grown window's frame
        ys, xs = np.nonzero(ofp)
        ys = ys + q0 - r0 + g
        xs = xs + d0 - c0 + g
        keep = (ys >= 0) & (ys < canvas.shape[0]) & (xs >= 0) & (xs < canvas.shape[1])
        canvas[ys[keep], xs[keep]] = True
        if (canvas & grown).any():
            return False
    return True


def _building(rng, p, cy, cx, angle):
    lo, hi = p.building_size
    h, w = rng.uniform(lo, hi), rng.uniform(lo, hi)
    return Rect("building", cy, cx, h, w, angle)


def generate_scene(p: SynthParams) -> Scene:
    """Draw a scene; bit-identical for equal parameters."""
    p.validate()
    rng = np.random.default_rng(p.seed)
    n = p.size
    shape = (n, n)
    margin = p.core_margin
    meta = []

    # residential clusters: centres first, then a jittered grid around each
    centres = []
    for _ in range(p.clusters):
        for _ in range(p.retries):
            lo = min(margin + p.cluster_spacing, n / 2)
            c = rng.uniform(lo, n - lo, 2)
            if _far_from(c, centres, 2.2 * p.cluster_spacing):
                centres.append(c)
                break
        else:
            raise PlacementError(f"could not place {p.clusters} cluster centres "
                                 f"{2.2 * p.cluster_spacing:.0f} px apart in a {n}px scene")
    angles = rng.uniform(0, math.pi / 2, len(centres))

    buildings = []
    if p.n_buildings and not centres:
        raise PlacementError("buildings requested but clusters=0")
    # each cluster fills its grid nodes nearest-first, so clusters stay compact
    queues = []
    for _ in centres:
        g = np.array([(y, x) for y in range(-8, 9) for x in range(-8, 9)], float)
        order = np.argsort(np.hypot(g[:, 0], g[:, 1]) + rng.uniform(0, 0.5, len(g)), kind="stable")
        queues.append(list(g[order]))
    for k in range(p.n_buildings):
        ci = k % len(centres)
        cy, cx = centres[ci]
        a = angles[ci]
        ca, sa = math.cos(a), math.sin(a)
        placed = False
        while queues[ci] and not placed:
            gy, gx = queues[ci].pop(0)
            for _ in range(8):
                ry = gy * p.cluster_spacing + rng.normal(0, p.spacing_jitter)
                rx = gx * p.cluster_spacing + rng.normal(0, p.spacing_jitter)
                by, bx = cy + ry * ca - rx * sa, cx + ry * sa + rx * ca
                if not (margin <= by < n - margin and margin <= bx < n - margin):
                    break
                b = _building(rng, p, by, bx, a + rng.normal(0, p.orientation_jitter))
                if _rects_clear(b, buildings, p.min_gap, shape):
                    buildings.append(b)
                    placed = True
                    break
        if not placed:
            raise PlacementError(f"could not place building {k + 1} of {p.n_buildings} "
                                 f"(spacing {p.cluster_spacing}, min_gap {p.min_gap})")

    # rural land: rectangles kept off the residential clusters (best effort:
    # a crowded scene simply gets less of it)
    rural = []
    kinds = ("meadow", "forest", "water")
    res_zone = [(b.cy, b.cx) for b in buildings]
    for k in range(p.rural_patches):
        kind = kinds[rng.choice(3, p=(0.5, 0.35, 0.15))]
        for _ in range(p.retries):
            h, w = rng.uniform(0.1 * n, 0.3 * n, 2)
            cy, cx = rng.uniform(0, n, 2)
            r = Rect(kind, cy, cx, h, w, rng.uniform(0, math.pi / 2))
            ey, ex = r.half_extents()
            pad = 0.6 * p.cluster_spacing
            if all(abs(y - cy) > ey + pad or abs(x - cx) > ex + pad for y, x in res_zone):
                rural.append(r)
                break

    # decoys: alone, far from every building, apart from each other
    decoys = []
    bpts = [(b.cy, b.cx) for b in buildings]
    for k in range(p.n_decoys):
        for attempt in range(p.retries):
            c = rng.uniform(margin, n - margin, 2)
            # prefer rural land; fall back to any open ground late in the budget
            if attempt < p.retries // 2 and rural and not _inside_any(c, rural):
                continue
            if not _far_from(c, bpts, p.decoy_min_dist):
                continue
            if not _far_from(c, [(d.cy, d.cx) for d in decoys], p.decoy_spacing):
                continue
            d = _building(rng, p, c[0], c[1], rng.uniform(0, math.pi))
            d.cls = "decoy"
            decoys.append(d)
            break
        else:
            raise PlacementError(f"could not place decoy {k + 1} of {p.n_decoys} "
                                 f"{p.decoy_min_dist:.0f} px from buildings in a {n}px scene")

    roads = []
    for _ in range(p.roads):
        w = rng.uniform(*p.road_width)
        horizontal = rng.random() < 0.5
        for _ in range(p.retries):
            off = rng.uniform(0.1 * n, 0.9 * n)
            r = Rect("road", off, n / 2, w, 2 * n, rng.normal(0, 0.05)) if horizontal else \
                Rect("road", n / 2, off, 2 * n, w, rng.normal(0, 0.05))
            if _rects_clear(r, buildings + decoys, p.min_gap + 2, shape):
                roads.append(r)
                break
        else:
            raise PlacementError("could not route a road clear of every building")

    # paint: ground, rural, clearings, roads, squares
    ground = GROUND + _smooth_noise(rng, shape, 2.0, 0.02)[..., None]
    ground = ground + rng.normal(0, 0.01, 3)
    img = ground.copy()
    for r in rural:
        _paint(img, r, _rural_color(r.cls, rng))
        meta.append(r)
    for d in decoys:
        side = 2 * p.clearing_radius
        clearing = Rect("ground", d.cy, d.cx, side, side, 0.0)
        _paint(img, clearing, _copy_from(ground))
        meta.append(clearing)
    for r in roads:
        _paint(img, r, _flat(ROAD, rng))
        meta.append(r)
    for b in buildings + decoys:
        _paint(img, b, _roof(rng, b))
        meta.append(b)

    img = img + rng.normal(0, p.noise, img.shape)
    img = np.round(np.clip(img, 0, 1) * 255) / 255

    mask = class_mask(meta, "building", shape)
    return Scene(image=img, mask=mask, meta=meta, params=p)


def generate_scenes(base: SynthParams, seeds):
    out = []
    for s in seeds:
        d = asdict(base)
        d["seed"] = int(s)
        out.append(generate_scene(SynthParams(**d)))
    return out
