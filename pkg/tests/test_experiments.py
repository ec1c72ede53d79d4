import numpy as np
import pytest

from aeroseg import experiments as ex
from aeroseg.architectures import Network
from aeroseg.data import SynthParams, buildings_in_window, generate_scene, generate_scenes, grid_centers
from aeroseg.nn import load_checkpoint


def small_scene(seed=300):
    return generate_scene(SynthParams(seed=seed, size=320, squares=4, decoy_fraction=0.0, clusters=1,
                                      core_margin=100, cluster_spacing=30))


@pytest.fixture(scope="module")
def scenes():
    return generate_scenes(SynthParams(), [100, 101]), [small_scene()]


def quick(**kw):
    base = dict(epochs=1, iters_per_epoch=6, mode="local-only", seed=0)
    base.update(kw)
    return ex.TrainConfig(**base)


# -- config ------------------------------------------------------------------------

def test_config_defaults():
    c = ex.TrainConfig()
    assert (c.batch_size, c.momentum, c.lr, c.weight_decay) == (10, 0.9, 1e-4, 5e-4)
    assert c.patience == 3 and c.lr_decay == 1.0


def test_config_text_round_trip_and_errors():
    c = ex.TrainConfig(seed=4, mode="ra-classifier", lr=3e-5, positive_fraction=0.125)
    assert ex.TrainConfig.from_text(c.to_text()) == c
    assert c.digest() == ex.TrainConfig.from_text(c.to_text()).digest()
    assert c.digest() != ex.TrainConfig().digest()
    for bad in (dict(batch_size=0), dict(lr=-1.0), dict(target="sky"), dict(positive_fraction=1.5),
                dict(profile="huge"), dict(lr_decay=0.0)):
        with pytest.raises(ValueError):
            ex.TrainConfig(**bad).validate()
    with pytest.raises(ValueError):
        ex.TrainConfig.from_text("seed=1\nwhatever=2\n")


# -- training -------------------------------------------------------------------------

def test_zero_lr_leaves_parameters(scenes):
    tr, va = scenes
    res = ex.train(quick(lr=0.0), tr, va)
    fresh = Network("desk", "local-only", seed=0)
    for k, v in fresh.state().items():
        assert res.net.state()[k].tobytes() == v.tobytes()
    assert len(res.log.losses) == 6


def test_identical_seeds_identical_runs(scenes, tmp_path):
    tr, va = scenes
    a = ex.train(quick(mode="dual", seed=3), tr, va)
    b = ex.train(quick(mode="dual", seed=3), tr, va)
    assert a.log.digest() == b.log.digest()
    ex.save_model(tmp_path / "a.bin", a.net)
    ex.save_model(tmp_path / "b.bin", b.net)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    c = ex.train(quick(mode="dual", seed=4), tr, va)
    assert c.log.digest() != a.log.digest()


def test_divergence_keeps_last_good_state(scenes, monkeypatch):
    tr, va = scenes
    real = ex.cross_entropy_loss
    calls = {"n": 0}
    seen = {}

    def flaky(pred, target):
        calls["n"] += 1
        rep = real(pred, target)
        if calls["n"] == 4:
            rep.value = float("nan")
        return rep

    orig_step = ex.sgd_momentum_step

    def spy(params, grads, lr, m, wd):
        orig_step(params, grads, lr, m, wd)
        seen["after"] = params.state()

    monkeypatch.setattr(ex, "cross_entropy_loss", flaky)
    monkeypatch.setattr(ex, "sgd_momentum_step", spy)
    with pytest.raises(ex.DivergenceError) as e:
        ex.train(quick(), tr, va)
    assert len(e.value.log.losses) == 3
    for k, v in seen["after"].items():  # state after the third (last finite) step
        np.testing.assert_array_equal(e.value.state[k], v)


def test_early_stopping_restores_best(scenes, monkeypatch):
    tr, va = scenes
    scores = iter([0.5, 0.7, 0.6, 0.65, 0.69, 0.9])
    states = []

    def fake_score(net, scenes_, cfg):
        states.append(net.state())
        return next(scores), 0.5

    monkeypatch.setattr(ex, "validation_score", fake_score)
    res = ex.train(quick(epochs=6, iters_per_epoch=2, patience=3), tr, va)
    assert res.log.val_f == [0.5, 0.7, 0.6, 0.65, 0.69]
    assert res.log.best_epoch == 1 and res.log.stopped_early
    for k, v in states[1].items():
        np.testing.assert_array_equal(res.net.state()[k], v)


def test_lr_decay_changes_run(scenes):
    tr, va = scenes
    a = ex.train(quick(epochs=2, iters_per_epoch=3), tr, va)
    b = ex.train(quick(epochs=2, iters_per_epoch=3, lr_decay=0.5), tr, va)
    assert a.log.losses[:4] == b.log.losses[:4]
    assert a.log.losses[4:] != b.log.losses[4:]


def test_batches_follow_the_mix(scenes):
    tr, _ = scenes
    cfg = ex.TrainConfig(batch_size=400, positive_fraction=0.5, hard_negatives=0.5)
    s = ex.BatchSampler(tr, cfg, np.random.default_rng(0))
    picks = s.draw()
    pos = sum(ex.window(s.targets[k], p, 16).any() for k, p in picks)
    dec = sum(ex.window(tr[k].decoy_mask, p, 16).any() and not ex.window(s.targets[k], p, 16).any()
              for k, p in picks)
    assert abs(pos - 200) < 40 and abs(dec - 100) < 35


def test_ra_labels_match_window_counts(scenes):
    sc = scenes[0][0]
    res = ex.residential_map(sc, 2)
    rng = np.random.default_rng(0)
    for _ in range(25):
        p = tuple(int(v) for v in rng.integers(128, 768 - 128, 2))
        assert res[p] == (buildings_in_window(sc, p) >= 2)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(3))
def test_200_iterations_halve_the_loss(seed):
    tr = generate_scenes(SynthParams(), [100, 101, 102])
    res = ex.train(ex.TrainConfig(epochs=1, iters_per_epoch=200, seed=seed), tr, [small_scene()])
    first = np.mean(res.log.losses[:10])
    last = np.mean(res.log.losses[-20:])
    assert last <= 0.5 * first


# -- inference --------------------------------------------------------------------------

class CountingNet:
    """Returns the running sample index as every output value."""
    mode = "dual"
    uses_local = True
    uses_global = True

    def __init__(self):
        self.n = 0

    def forward(self, local, global_):
        b = local.shape[0]
        out = np.repeat(np.arange(self.n, self.n + b, dtype=np.float32)[:, None], 256, 1)
        self.n += b
        return out


def test_tiles_land_in_place():
    img = np.zeros((300, 340, 3))
    centers, (r0, r1, c0, c1) = grid_centers(img.shape[:2])
    out = ex.predict_image(CountingNet(), img, batch=7)
    for k, (i, j) in enumerate(centers):
        assert np.all(out[i - 8:i + 8, j - 8:j + 8] == k)
    assert np.isnan(out[:r0]).all() and np.isnan(out[:, c1:]).all()
    assert np.isfinite(out[r0:r1, c0:c1]).all()


def test_prediction_range_and_nodata():
    net = Network("desk", "dual", seed=1)
    sc = small_scene()
    out = ex.predict_image(net, sc.image)
    v = np.isfinite(out)
    assert v.sum() == 80 * 80
    assert np.all((out[v] > 0) & (out[v] < 1))


def test_undersized_image():
    with pytest.raises(ValueError):
        ex.predict_image(Network("desk", "local-only"), np.zeros((250, 400, 3)))


def test_blank_none_is_plain_prediction():
    net = Network("desk", "dual", seed=2)
    img = small_scene().image
    a = ex.predict_image(net, img)
    b = ex.complementarity(net, img, "none")
    assert a.tobytes() == b.tobytes()


def test_blank_fixed_point_on_constant_image():
    net = Network("desk", "dual", seed=2)
    img = np.empty((288, 288, 3))
    img[...] = [0.3, 0.6, 0.1]
    base = ex.predict_image(net, img)
    for blank in ("local", "global"):
        assert ex.complementarity(net, img, blank).tobytes() == base.tobytes()


def test_blank_changes_output_and_needs_dual():
    net = Network("desk", "dual", seed=2)
    img = small_scene().image
    base = ex.predict_image(net, img)
    assert not np.array_equal(ex.complementarity(net, img, "global"), base)
    with pytest.raises(ValueError):
        ex.complementarity(Network("desk", "local-only"), img, "global")
    with pytest.raises(ValueError):
        ex.complementarity(net, img, "both")


def test_blank_patch_is_per_image_channel_mean():
    rng = np.random.default_rng(0)
    img = rng.random((40, 50, 3))
    patch = ex._blank_patch(img, 64)
    assert patch.shape == (64, 64, 3)
    np.testing.assert_allclose(patch[5, 7], img.reshape(-1, 3).mean(0), rtol=0, atol=1e-12)
    assert np.all(patch == patch[0, 0])


def test_ra_map_tiles():
    net = Network("desk", "ra-classifier", seed=0)
    sc = small_scene()
    m = ex.ra_map(net, sc.image)
    v = np.isfinite(m)
    assert v.sum() == 80 * 80
    # one value per 16 x 16 tile
    assert len(np.unique(m[v])) <= 25
    truth = ex.ra_truth_map(sc)
    assert truth.shape == sc.shape and truth.dtype == bool


# -- ablation metrics ------------------------------------------------------------------------

def test_perfect_map_metrics():
    sc = generate_scene(SynthParams(seed=1))
    prob = sc.mask.astype(np.float32)
    assert ex.boundary_f(prob, sc, 0.5) == 1.0
    assert ex.decoy_false_positives(prob, sc, 0.5) == 0
    worse = prob.copy()
    worse[sc.decoy_mask > 0] = 1
    assert ex.decoy_false_positives(worse, sc, 0.5) == int(sc.decoy_mask.sum())
    blurred = np.clip(prob + 0.6 * (np.roll(prob, 2, 0) + np.roll(prob, 2, 1)), 0, 1)
    assert ex.boundary_f(blurred, sc, 0.5) < 1.0


def test_model_round_trip(tmp_path):
    net = Network("desk", "ra-classifier", seed=5)
    ex.save_model(tmp_path / "m.bin", net)
    back = ex.load_model(tmp_path / "m.bin")
    assert back.mode == "ra-classifier"
    for k, v in net.state().items():
        assert back.state()[k].tobytes() == v.tobytes()
    assert set(load_checkpoint(tmp_path / "m.bin")) == set(net.state())
