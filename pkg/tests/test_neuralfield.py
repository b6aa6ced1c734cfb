import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccpinn.neuralfield import (
    CheckpointError,
    FieldNetwork,
    FourierEmbedding,
    fourier_features,
    init_params,
    load_checkpoint,
    save_checkpoint,
    sigmoid,
    silu,
)
from ccpinn.scene import Grid

SMALL = (16, 24, 24, 12, 2)


def test_features_at_origin():
    emb, _ = init_params(0)
    f = emb(np.zeros((1, 2)))
    assert f.shape == (1, 128)
    np.testing.assert_array_equal(f[0, :64], 0.0)
    np.testing.assert_array_equal(f[0, 64:], 1.0)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_feature_pairs_on_unit_circle(x, y):
    emb, _ = init_params(1, SMALL)
    f = emb(np.array([[x, y]]))
    np.testing.assert_allclose(f[0, :8] ** 2 + f[0, 8:] ** 2, 1.0, rtol=1e-12)


def test_feature_period_along_row_direction():
    b = np.array([[0.6], [0.8]]) * 2.5  # |b| = 2.5
    d = b[:, 0] / np.linalg.norm(b)
    t = np.linspace(0, 2, 4001)
    f = fourier_features(t[:, None] * d[None, :], b)[:, 0]
    # first positive zero crossing upward after t=0 gives the period
    ups = np.flatnonzero((f[:-1] < 0) & (f[1:] >= 0))
    period = t[ups[0] + 1]
    assert period == pytest.approx(1 / 2.5, abs=1e-3)


def test_embedding_matrix_is_immutable():
    emb = FourierEmbedding(np.ones((2, 3)))
    with pytest.raises(ValueError):
        emb.B[0, 0] = 2.0
    with pytest.raises(ValueError):
        FourierEmbedding(np.ones((3, 3)))


def test_init_deterministic_and_final_layer():
    e1, p1 = init_params(5)
    e2, p2 = init_params(5)
    np.testing.assert_array_equal(e1.B, e2.B)
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])
    assert np.all(p1["b_out"] == -3.0)
    assert abs(p1["w_out"].std() - 1e-3) < 2e-4
    assert [p1[f"v{k}"].shape for k in (1, 2, 3)] == [(256, 128), (256, 256), (128, 256)]


def test_init_gain_equals_row_norm():
    net = FieldNetwork.create(2)
    for k, W in enumerate(net.weights(), 1):
        np.testing.assert_allclose(net.params[f"g{k}"], np.linalg.norm(net.params[f"v{k}"], axis=1), rtol=1e-15)
        np.testing.assert_allclose(W, net.params[f"v{k}"], rtol=1e-13)


def test_initial_output_near_sigmoid_minus_three():
    net = FieldNetwork.create(0)
    coords = np.random.default_rng(0).uniform(-1, 1, (100, 2))
    eps, sig = net(coords)
    s = 1 / (1 + math.exp(3))
    assert s == pytest.approx(0.0474, abs=1e-4)
    np.testing.assert_allclose(eps, 1 + 79 * s, atol=0.05)
    np.testing.assert_allclose(sig, s, atol=1e-3)


def test_silu_and_sigmoid():
    assert silu(0.0) == 0.0
    assert silu(50.0) == pytest.approx(50.0)
    x = np.linspace(-40, 40, 101)
    np.testing.assert_allclose(sigmoid(x), 1 / (1 + np.exp(-x)), rtol=1e-12, atol=1e-15)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 50.0))
def test_outputs_within_bounds(seed, scale):
    net = FieldNetwork.create(seed % 1000, SMALL)
    for k in net.params:
        net.params[k] = net.params[k] * (1 if k.startswith("g") else scale)
    eps, sig = net(np.random.default_rng(seed).uniform(-1, 1, (64, 2)))
    assert np.all((eps >= 1) & (eps <= 80)) and np.all((sig >= 0) & (sig <= 1))


def test_weight_norm_scale_invariance():
    net = FieldNetwork.create(3, SMALL)
    coords = np.random.default_rng(1).uniform(-1, 1, (50, 2))
    e0, s0 = net(coords)
    net.params["v2"][4] *= 7.3
    net.params["v1"] *= 0.2
    e1, s1 = net(coords)
    np.testing.assert_allclose(e1, e0, rtol=1e-6)
    np.testing.assert_allclose(s1, s0, rtol=1e-6)


def test_spatial_continuity():
    net = FieldNetwork.create(4)
    rng = np.random.default_rng(2)
    r = rng.uniform(-1, 1, (30, 2))
    e0, _ = net(r)
    e1, _ = net(r + 1e-5)
    assert np.max(np.abs(e1 - e0)) < 1e-2


def test_shared_lattice_points_agree():
    # every 4x4 cell centre is also a 12x12 cell centre
    net = FieldNetwork.create(6, SMALL)
    coarse, fine = Grid(1.0, 4), Grid(1.0, 12)
    ec, _ = net(coarse.points())
    ef, _ = net(fine.points())
    sel = np.arange(1, 12, 3)
    np.testing.assert_allclose(ef.reshape(12, 12)[np.ix_(sel, sel)], ec.reshape(4, 4), rtol=1e-12)


def test_backward_matches_finite_differences():
    net = FieldNetwork.create(8, SMALL)
    coords = np.random.default_rng(3).uniform(-1, 1, (20, 2))
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=20), rng.normal(size=20)

    def f(n):
        e, s = n(coords)
        return float(a @ e + b @ s)

    _, _, cache = net.forward(coords, keep_cache=True)
    grads = net.backward(cache, a, b)
    h = 1e-4
    for name in ("v1", "g2", "b3", "w_out", "b_out", "v3"):
        idx = tuple(rng.integers(s) for s in net.params[name].shape)
        p = net.copy()
        p.params[name][idx] += h
        m = net.copy()
        m.params[name][idx] -= h
        fd = (f(p) - f(m)) / (2 * h)
        assert grads[name][idx] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_checkpoint_round_trip(tmp_path):
    net = FieldNetwork.create(9, SMALL)
    path = save_checkpoint(tmp_path / "ck.npz", net, roi_half_width=0.5)
    back = load_checkpoint(path)
    coords = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    np.testing.assert_array_equal(back(coords)[0], net(coords)[0])
    assert back.meta["roi_half_width"] == 0.5 and back.meta["seed"] == 9


def test_checkpoint_schema_mismatch(tmp_path):
    import json

    net = FieldNetwork.create(9, SMALL)
    path = save_checkpoint(tmp_path / "ck.npz", net)
    with np.load(path) as z:
        data = dict(z)
    meta = json.loads(bytes(data["meta"]).decode())
    meta["schema"] = "other/9"
    data["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(tmp_path / "bad.npz", **data)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.npz")
    (tmp_path / "junk.npz").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.npz")
