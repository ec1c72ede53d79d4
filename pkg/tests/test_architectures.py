import numpy as np
import pytest

from aeroseg.architectures import (
    DESK,
    PAPER,
    Network,
    Profile,
    build_gseg,
    build_lgseg,
    build_lseg,
    conv,
    coverage,
    forward_dual,
    pool,
    profile_from_text,
    profile_to_text,
    receptive_field,
)
from aeroseg.nn import ShapeError, grad_check_report


def index_sets(specs, size):
    """Brute force: input indices (one axis) feeding each final unit."""
    sets = [{i} for i in range(size)]
    for s in specs:
        k, st, p = (s.kernel, s.stride, s.pad) if s.kind == "conv" else (s.size, s.size, 0)
        n = (len(sets) + 2 * p - k) // st + 1
        new = []
        for u in range(n):
            acc = set()
            for t in range(u * st - p, u * st - p + k):
                if 0 <= t < len(sets):
                    acc |= sets[t]
            new.append(acc)
        sets = new
    return sets


def test_output_shapes():
    rng = np.random.default_rng(0)
    local = rng.random((10, 3, 64, 64)).astype(np.float32)
    glob = rng.random((10, 3, 256, 256)).astype(np.float32)
    assert build_lseg().forward(local).shape == (10, 256)
    assert build_gseg().forward(global_=glob).shape == (10, 256)
    assert build_gseg(ra_classifier=True).forward(global_=glob[:3]).shape == (3, 1)
    out = forward_dual(build_lgseg(), local, glob)
    assert out.shape == (10, 256)
    assert np.all((out > 0) & (out < 1))


@pytest.mark.parametrize("mode", ["dual", "local-only", "global-only", "ra-classifier"])
def test_shape_audit(mode):
    net = Network("desk", mode, np.float64)
    rng = np.random.default_rng(1)
    local = rng.random((2, 3, 64, 64))
    glob = rng.random((2, 3, 256, 256))
    forward_dual(net, local, glob)
    for name, stack in net.stacks():
        shapes = stack.shapes()
        for i, layer in enumerate(stack.layers):
            x = stack._inputs[i]
            assert x.shape[1:] == tuple(shapes[i]), (name, layer.name)


def test_large_profile_shape_audit():
    net = Network("paper", "dual", np.float32)
    table = dict(net.shape_table())
    assert table["local.fc"] == (1024,)
    assert table["global.fc"] == (1024,)
    assert table["fusion.sigmoid"] == (256,)
    assert table["local.pool3"] == (128, 8, 8)
    assert table["global.conv1"] == (48, 64, 64)


def test_desk_local_parameter_count():
    # convs: 3*9*8+8, then three 8*9*8+8; flatten 8*16*16; fc 2048->64; head 64->256
    hand = (3 * 9 * 8 + 8) + 3 * (8 * 9 * 8 + 8) + (2048 * 64 + 64) + (64 * 256 + 256)
    assert hand == 149_752
    assert build_lseg().params.count() == hand
    assert hand <= 200_000


def test_desk_dual_parameter_count():
    local = (3 * 9 * 8 + 8) + 3 * (8 * 9 * 8 + 8) + (2048 * 64 + 64)
    # 256 -> conv 7x7/4 -> 64 -> pool 32 -> conv 5x5 -> pool 16 -> conv 3x3 -> pool 8
    glob = (3 * 49 * 8 + 8) + (8 * 25 * 16 + 16) + (16 * 9 * 16 + 16) + (16 * 8 * 8 * 64 + 64)
    head = (128 * 128 + 128) + (128 * 128 + 128) + (128 * 256 + 256)
    assert build_lgseg().params.count() == local + glob + head


def test_zero_weights_give_half():
    net = build_lgseg()
    for v in net.params.values.values():
        v[...] = 0
    out = net.forward(np.zeros((2, 3, 64, 64)), np.zeros((2, 3, 256, 256)))
    assert np.all(out == 0.5)


@pytest.mark.parametrize("profile", [DESK, PAPER])
@pytest.mark.parametrize("stem", ["local", "global"])
def test_receptive_field_matches_index_sets(profile, stem):
    specs = profile.local_layers if stem == "local" else profile.global_layers
    size = profile.local_input if stem == "local" else profile.global_input
    r, j, start, n = receptive_field(specs, size)
    sets = index_sets(specs, size)
    assert len(sets) == n
    half = (r - 1) / 2
    for u, s in enumerate(sets):
        c = start + u * j
        lo, hi = int(np.ceil(c - half)), int(np.floor(c + half))
        assert s == set(range(max(lo, 0), min(hi, size - 1) + 1))
    union = set().union(*sets)
    lo, hi = coverage(specs, size)
    assert union == set(range(lo, hi + 1))


def test_global_features_cover_whole_window():
    assert coverage(DESK.global_layers, 256) == (0, 255)
    assert coverage(PAPER.global_layers, 256) == (0, 255)


def test_concat_width():
    net = build_lgseg()
    assert net.head.layers[0].fan_in == DESK.local_fc + DESK.global_fc


@pytest.mark.parametrize("blank", ["local", "global"])
def test_blank_stem_still_valid(blank):
    rng = np.random.default_rng(2)
    local = rng.random((3, 3, 64, 64))
    glob = rng.random((3, 3, 256, 256))
    if blank == "local":
        local = np.broadcast_to(local.mean(axis=(2, 3), keepdims=True), local.shape)
    else:
        glob = np.broadcast_to(glob.mean(axis=(2, 3), keepdims=True), glob.shape)
    out = build_lgseg().forward(local, glob)
    assert out.shape == (3, 256)
    assert np.all(np.isfinite(out)) and np.all((out > 0) & (out < 1))


def test_local_only_ignores_global():
    rng = np.random.default_rng(3)
    net = build_lseg()
    local = rng.random((2, 3, 64, 64))
    a = forward_dual(net, local, rng.random((2, 3, 256, 256)))
    b = forward_dual(net, local, rng.random((2, 3, 256, 256)))
    assert np.array_equal(a, b)


def test_deterministic():
    rng = np.random.default_rng(4)
    local = rng.random((2, 3, 64, 64))
    glob = rng.random((2, 3, 256, 256))
    a = build_lgseg(seed=7)
    b = build_lgseg(seed=7)
    out = a.forward(local, glob)
    assert np.array_equal(out, a.forward(local, glob))
    assert np.array_equal(out, b.forward(local, glob))
    assert not np.array_equal(out, build_lgseg(seed=8).forward(local, glob))


def test_stem_independence():
    rng = np.random.default_rng(5)
    net = build_lgseg(dtype=np.float64, seed=1)
    fc1 = net.head.layers[0]
    fc1.params["weight"][DESK.local_fc:] = 0
    local = rng.random((2, 3, 64, 64))
    a = net.forward(local, rng.random((2, 3, 256, 256)))
    b = net.forward(local, rng.random((2, 3, 256, 256)))
    assert np.array_equal(a, b)
    # the same head applied to the local features alone
    feats = net.features(local, rng.random((2, 3, 256, 256)))["local"]
    h = feats @ fc1.params["weight"][:DESK.local_fc] + fc1.params["bias"]
    for layer in net.head.layers[1:]:
        h = layer.forward(h)
    np.testing.assert_allclose(a, h, rtol=1e-13, atol=0)


def test_lgseg_grad_check():
    rng = np.random.default_rng(0)
    net = build_lgseg(dtype=np.float64, seed=0)
    local = rng.random((1, 3, 64, 64))
    glob = rng.random((1, 3, 256, 256))
    target = rng.integers(0, 2, size=(1, 256)).astype(np.float64)
    report = grad_check_report(net, (local, glob), target, 1e-5, rng, per_layer=50)
    assert report.max_error < 1e-5
    assert set(report.per_layer) >= {"local.conv1", "global.conv1", "fusion.fc3"}


def test_size_mismatch_rejected():
    net = build_lgseg()
    with pytest.raises(ShapeError):
        net.forward(np.zeros((1, 3, 32, 32)), np.zeros((1, 3, 256, 256)))
    with pytest.raises(ShapeError):
        net.forward(np.zeros((2, 3, 64, 64)), np.zeros((3, 3, 256, 256)))


def test_invalid_profiles_rejected():
    bad_local = Profile("x", [conv("conv1", 8, kernel=5, pad=2)], DESK.global_layers, 8, 8)
    with pytest.raises(ShapeError):
        bad_local.validate()
    bad_global = Profile("x", DESK.local_layers, [conv("conv1", 8), pool("pool1")], 8, 8)
    with pytest.raises(ShapeError):
        bad_global.validate()
    odd = Profile("x", [conv("conv1", 4), pool("p1"), pool("p2"), pool("p3"), pool("p4"),
                        pool("p5"), pool("p6"), pool("p7")], DESK.global_layers, 8, 8)
    with pytest.raises(ShapeError):
        odd.validate()


@pytest.mark.parametrize("profile", [DESK, PAPER])
def test_profile_text_round_trip(profile):
    text = profile_to_text(profile)
    back = profile_from_text(text)
    assert back == profile
    assert "local.conv1.filters=" in text


def test_network_copy_and_state():
    a = build_lgseg(seed=3)
    b = a.copy(np.float64)
    assert b.dtype == np.float64
    for k, v in a.state().items():
        assert np.array_equal(v.astype(np.float64), b.state()[k])
