import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aeroseg import postproc as pp
from aeroseg.data import SynthParams, decode_pnm, generate_scene
from aeroseg.eval import threshold_grid
from oracles import f_measure, f_with_matrix, flood_fill_count, near_matrix


# -- threshold selection ------------------------------------------------------------

def separable(best, shape=(10, 10), seed=0):
    """Map whose F is perfect exactly for thresholds in (best - 0.01, best]."""
    rng = np.random.default_rng(seed)
    gt = rng.random(shape) < 0.3
    return np.where(gt, best, round(best - 0.01, 2)), gt


def test_single_image_best():
    assert pp.select_threshold([separable(0.30)], rho=0) == pytest.approx(0.30, abs=1e-12)


def test_two_images_average():
    th = pp.select_threshold([separable(0.2), separable(0.4, seed=1)], rho=0)
    assert th == pytest.approx(0.3, abs=1e-12)


def test_select_matches_independent_sweep():
    rng = np.random.default_rng(3)
    near = near_matrix((12, 12), 1)
    grid = threshold_grid(0.05)
    val, expect = [], []
    for _ in range(4):
        gt = rng.random((12, 12)) < 0.25
        p = np.clip(np.where(gt, 0.6, 0.3) + rng.normal(0, 0.2, gt.shape), 0, 1)
        val.append((p, gt))
        fs = [f_with_matrix(p >= t, gt, near) for t in grid]
        expect.append(grid[int(np.argmax(fs))])  # argmax takes the first, i.e. lowest
    assert pp.select_threshold(val, rho=1, grid=grid) == pytest.approx(np.mean(expect), abs=1e-12)


def test_select_empty():
    with pytest.raises(ValueError):
        pp.select_threshold([])


# -- erosion -------------------------------------------------------------------------

def test_erode_identity_and_square():
    m = np.random.default_rng(0).random((7, 7)) < 0.5
    np.testing.assert_array_equal(pp.erode(m, 0), m)
    sq = np.zeros((5, 5), bool)
    sq[1:4, 1:4] = True
    out = pp.erode(sq, 1)
    assert out.sum() == 1 and out[2, 2]
    with pytest.raises(ValueError):
        pp.erode(m, -1)


def test_erode_border_counts_as_background():
    assert not pp.erode(np.ones((4, 4), bool), 1)[0].any()
    assert pp.erode(np.ones((4, 4), bool), 1)[1:3, 1:3].all()


def dilate_oracle(m, r):
    h, w = m.shape
    p = np.pad(m, r)
    out = np.zeros_like(m)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            out |= p[r + dy:r + dy + h, r + dx:r + dx + w]
    return out


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 3))
def test_erosion_duality(seed, r):
    rng = np.random.default_rng(seed)
    m = rng.random((int(rng.integers(3, 20)), int(rng.integers(3, 20)))) < rng.uniform(0.3, 0.95)
    e = pp.erode(m, r)
    assert not (e & ~m).any()
    # outside the image is background, so the complement is padded with ones
    comp = ~np.pad(m, r)
    dual = ~dilate_oracle(comp, r)[r:-r or None, r:-r or None] if r else m
    np.testing.assert_array_equal(e, dual)


# -- components ---------------------------------------------------------------------------

def test_diagonal_touch_is_one_blob():
    m = np.zeros((6, 6), bool)
    m[0:2, 0:2] = True
    m[2:4, 2:4] = True
    assert len(pp.components(m, min_area=1)) == 1


def rect_scene(rng, gap, shape=(96, 96)):
    """Axis-aligned rectangles on a jittered grid, at least ``gap`` pixels apart."""
    m = np.zeros(shape, bool)
    boxes = []
    y = int(rng.integers(0, 3))
    while y < shape[0] - 4:
        hgt = int(rng.integers(3, 9))
        x = int(rng.integers(0, 3))
        while x < shape[1] - 4:
            wid = int(rng.integers(3, 9))
            if rng.random() < 0.8 and y + hgt <= shape[0] and x + wid <= shape[1]:
                m[y:y + hgt, x:x + wid] = True
                boxes.append((y, x, y + hgt - 1, x + wid - 1))
            x += wid + gap + int(rng.integers(0, 3))
        y += hgt + gap + int(rng.integers(0, 3))
    return m, boxes


@pytest.mark.parametrize("seed", range(5))
def test_separated_rectangles_exact_boxes(seed):
    m, boxes = rect_scene(np.random.default_rng(seed), gap=2)
    blobs = pp.components(m, min_area=1)
    assert sorted(b.box for b in blobs) == sorted(boxes)
    for b in blobs:
        r0, c0, r1, c1 = b.box
        assert b.area == (r1 - r0 + 1) * (c1 - c0 + 1)


def test_flood_fill_oracle_500_masks():
    rng = np.random.default_rng(7)
    for k in range(500):
        h, w = rng.integers(1, 24, size=2)
        m = rng.random((h, w)) < rng.uniform(0.1, 0.7)
        min_area = 1 if k % 2 else 4
        assert len(pp.components(m, min_area)) == flood_fill_count(m, min_area), k


def test_blobs_partition_positive_pixels():
    rng = np.random.default_rng(8)
    m = rng.random((30, 30)) < 0.4
    lab, n = pp.label_map(m)
    blobs = pp.components(m, min_area=1)
    assert sum(b.area for b in blobs) == m.sum() and len(blobs) == n
    for b in blobs:
        ys, xs = np.nonzero(lab == b.label)
        assert b.box == (ys.min(), xs.min(), ys.max(), xs.max())


@pytest.mark.parametrize("seed", range(20))
def test_counting_exact_on_rectangle_scenes(seed):
    m, boxes = rect_scene(np.random.default_rng(100 + seed), gap=3)
    blobs = pp.components(pp.erode(m, 1), min_area=1)
    assert len(blobs) == len(boxes)


@pytest.mark.parametrize("seed", range(20))
def test_counting_exact_on_synthetic_scenes(seed):
    s = generate_scene(SynthParams(seed=seed))
    blobs = pp.count_buildings(s.mask.astype(float), 0.5, erode_radius=1)
    assert len(blobs) == len(s.rects("building"))
    rep = pp.count_report(blobs, [b.bbox(s.shape) for b in s.rects("building")])
    assert rep.true_positives == rep.human_count and rep.false_positives == 0


@pytest.mark.parametrize("seed", range(10))
def test_count_never_grows_with_erosion(seed):
    m, _ = rect_scene(np.random.default_rng(200 + seed), gap=1)
    counts = [len(pp.components(pp.erode(m, r), min_area=1)) for r in range(5)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_count_buildings_treats_nan_as_background():
    p = np.full((12, 12), np.nan)
    p[2:8, 2:8] = 0.9
    assert len(pp.count_buildings(p, 0.5, 1)) == 1


# -- counting report ------------------------------------------------------------------------

def test_perfect_matching():
    boxes = [(0, 0, 4, 4), (10, 10, 14, 15), (20, 0, 25, 6)]
    rep = pp.count_report(boxes, boxes)
    assert (rep.true_positives, rep.false_positives, rep.false_negatives) == (3, 0, 0)
    assert rep.precision == rep.recall == 1.0


def test_blob_over_two_houses_is_residential():
    refs = [(0, 0, 9, 9), (0, 12, 9, 21)]
    rep = pp.count_report([(0, 0, 9, 21)], refs)
    assert rep.residential_hits == 1 and rep.false_negatives == 0
    assert rep.true_positives == 0 and rep.false_positives == 0
    assert rep.precision == 1.0 and rep.recall == 1.0


def test_report_mixed_case():
    refs = [(0, 0, 9, 9), (0, 12, 9, 21), (40, 40, 49, 49), (60, 60, 65, 65)]
    blobs = [(0, 0, 9, 21), (40, 41, 49, 49), (80, 80, 85, 85)]
    rep = pp.count_report(blobs, refs)
    assert (rep.human_count, rep.detected_count) == (4, 3)
    assert (rep.true_positives, rep.false_positives, rep.false_negatives, rep.residential_hits) == (1, 1, 1, 1)
    assert rep.precision == pytest.approx(3 / 4)
    assert rep.recall == pytest.approx(3 / 4)
    assert rep.f1 == pytest.approx(f_measure(0.75, 0.75))


box = st.tuples(st.integers(0, 40), st.integers(0, 40), st.integers(1, 12), st.integers(1, 12)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=300, deadline=None)
@given(st.lists(box, max_size=12), st.lists(box, max_size=12), st.integers(1, 4))
def test_report_identities(blobs, refs, mult):
    rep = pp.count_report(blobs, refs, multiplier=mult)
    assert rep.detected_count == rep.true_positives + rep.false_positives + rep.residential_hits
    assert rep.detected_count == len(blobs) and rep.human_count == len(refs)
    assert rep.true_positives + rep.false_negatives <= rep.human_count
    assert 0 <= rep.precision <= 1 and 0 <= rep.recall <= 1 and 0 <= rep.f1 <= 1


def test_box_iou():
    assert pp.box_iou((0, 0, 1, 1), (0, 0, 1, 1)) == 1.0
    assert pp.box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert pp.box_iou((0, 0, 1, 3), (0, 2, 1, 5)) == pytest.approx(4 / 12)


def test_csv_and_overlay(tmp_path):
    rep = pp.count_report([(0, 0, 4, 4)], [(0, 0, 4, 4), (9, 9, 12, 12)])
    pp.write_count_csv(tmp_path / "c.csv", [("scene0", rep)])
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0].startswith("# precision=")
    assert lines[1] == "image,human_count,detected_count,true_positives,false_positives," \
                       "false_negatives,residential_hits,precision,recall,f1"
    assert lines[2].startswith("scene0,2,1,1,0,1,0,1.000000,0.500000,")
    img = np.full((10, 12, 3), 0.5)
    pp.save_overlay(tmp_path / "o.ppm", img, [pp.Blob(1, 9, (2, 3, 4, 5))])
    arr = decode_pnm((tmp_path / "o.ppm").read_bytes())
    assert arr[2, 3].tolist() == [255, 0, 0] and arr[3, 4].tolist() == [128, 128, 128]
    assert arr[4, 5].tolist() == [255, 0, 0] and arr[0, 0].tolist() == [128, 128, 128]
