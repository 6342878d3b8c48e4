import numpy as np
import pytest

from crossview.errors import ShapeError
from crossview.losses import LossWeights
from crossview.model import (
    ArchConfig, action_logits, backbone_forward, backward, disentangle, forward, init_params, n_params,
    param_names, softmax, view_probs,
)
from crossview.trainer import loss_and_grad


@pytest.fixture
def params64(tiny_arch):
    return init_params(tiny_arch, np.random.default_rng(0), np.float64)


def test_zero_image_with_zero_biases_gives_zero_features():
    arch = ArchConfig(A=6, V=4)
    p = init_params(arch, np.random.default_rng(1))
    f = backbone_forward(p, np.zeros((3, 32, 32)), arch)
    assert f.shape == (64,)
    assert np.all(f == 0)


def test_feature_dimension():
    arch = ArchConfig(A=6, V=4)
    p = init_params(arch, np.random.default_rng(1))
    out = forward(p, np.random.default_rng(2).random((5, 3, 32, 32)), arch)
    assert out.f.shape == (5, 64) and out.f_hat.shape == (5, 64)
    assert out.z_a.shape == (5, 6) and out.z_v.shape == (5, 4)
    assert arch.D == 64
    assert len(param_names(arch)) == 11
    assert n_params(p) == sum(p[k].size for k in param_names(arch))


def test_single_image_forward(params64, tiny_arch):
    img = np.random.default_rng(0).random((3, 8, 8))
    one = forward(params64, img, tiny_arch)
    batch = forward(params64, img[None], tiny_arch)
    assert one.f.shape == (8,)
    np.testing.assert_array_equal(one.z_a, batch.z_a[0])


def test_wrong_image_shape(params64, tiny_arch):
    with pytest.raises(ShapeError):
        forward(params64, np.zeros((2, 3, 16, 16)), tiny_arch)


def test_softmax_examples():
    np.testing.assert_allclose(view_probs(np.zeros(4)), [0.25] * 4)
    assert np.argmax(view_probs(np.array([10.0, 0, 0, 0]))) == 0
    z = np.random.default_rng(0).normal(scale=20, size=(1000, 4))
    p = view_probs(z)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(np.isfinite(softmax(np.array([1e4, -1e4]))))


def test_identity_gate_is_exact():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((100, 8)).astype(np.float32)
    p = softmax(rng.standard_normal((100, 3))).astype(np.float32)
    np.testing.assert_array_equal(disentangle(f, p, np.ones((8, 3), np.float32)), f)


def test_one_hot_selects_query_column():
    rng = np.random.default_rng(1)
    f, Q = rng.standard_normal(5), rng.standard_normal((5, 3))
    np.testing.assert_array_equal(disentangle(f, np.eye(3)[2], Q), Q[:, 2] * f)
    np.testing.assert_array_equal(disentangle(f, np.eye(3)[2], np.zeros((5, 3))), np.zeros(5))


def test_disentangle_linearity():
    rng = np.random.default_rng(2)
    f, Q = rng.standard_normal((4, 6)), rng.standard_normal((6, 3))
    p = softmax(rng.standard_normal((4, 3)))
    base = disentangle(f, p, Q)
    np.testing.assert_allclose(disentangle(2.5 * f, p, Q), 2.5 * base, rtol=1e-12)
    np.testing.assert_allclose(disentangle(f, p, -3 * Q), -3 * base, rtol=1e-12)


def test_disentangle_shape_errors():
    with pytest.raises(ShapeError):
        disentangle(np.zeros(4), np.zeros(3), np.zeros((5, 3)))
    with pytest.raises(ShapeError):
        disentangle(np.zeros(4), np.zeros(2), np.zeros((4, 3)))


def test_action_logits_examples():
    W = np.random.default_rng(3).standard_normal((4, 3))
    np.testing.assert_array_equal(action_logits(np.zeros(4), W, np.zeros(3)), np.zeros(3))
    c = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(action_logits(np.zeros(4), W, c), c)
    fh = np.random.default_rng(4).standard_normal(4)
    np.testing.assert_allclose(action_logits(2 * fh, W, np.zeros(3)), 2 * action_logits(fh, W, np.zeros(3)))


def test_forward_is_pure(params64, tiny_arch):
    x = np.random.default_rng(5).random((4, 3, 8, 8))
    a, b = forward(params64, x, tiny_arch), forward(params64, x, tiny_arch)
    for k in ("f", "z_v", "p_v", "f_hat", "z_a"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
    np.testing.assert_allclose(a.p_a.sum(axis=1), 1.0)


def test_stop_gradient_zeroes_action_gradient_into_view_head(params64, tiny_arch):
    # only the action cross-entropy is active: its route into W_v runs through p_v
    x = np.random.default_rng(6).random((6, 3, 8, 8))
    a, v = np.array([0, 1]), np.array([0, 2])
    w = LossWeights(0.0, 0.0, 1.0)
    out = forward(params64, x[:2], tiny_arch, keep_cache=True)
    from crossview.losses import cross_entropy_batch

    _, dz = cross_entropy_batch(out.z_a, a)
    g_on, _ = backward(params64, out, tiny_arch, d_z_a=dz)
    out.cache["stop_gradient_pv"] = True
    g_off, _ = backward(params64, out, tiny_arch, d_z_a=dz)
    assert np.abs(g_on["W_v"]).max() > 1e-6
    assert np.all(g_off["W_v"] == 0) and np.all(g_off["b_v"] == 0)
    # the direct path through f still reaches the backbone
    assert np.abs(g_off["conv1.w"]).max() > 0
    # full objective: stop-gradient changes W_v only through the action branch
    _, full_on = loss_and_grad(params64, tiny_arch, x, a, v, w, False)
    _, full_off = loss_and_grad(params64, tiny_arch, x, a, v, w, True)
    assert not np.allclose(full_on["W_v"], full_off["W_v"])


def test_input_gradient_matches_finite_differences(params64, tiny_arch):
    rng = np.random.default_rng(7)
    x = rng.random((2, 3, 8, 8))
    out = forward(params64, x, tiny_arch, keep_cache=True)
    g_a = rng.standard_normal(out.z_a.shape)
    _, dx = backward(params64, out, tiny_arch, d_z_a=g_a, need_dx=True)
    eps = 1e-6
    for idx in [(0, 0, 3, 4), (1, 2, 0, 7), (0, 1, 5, 5)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += eps
        xm[idx] -= eps
        num = (np.sum(forward(params64, xp, tiny_arch).z_a * g_a)
               - np.sum(forward(params64, xm, tiny_arch).z_a * g_a)) / (2 * eps)
        assert dx[idx] == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_backward_requires_cache(params64, tiny_arch):
    out = forward(params64, np.zeros((1, 3, 8, 8)), tiny_arch)
    with pytest.raises(ValueError):
        backward(params64, out, tiny_arch)


def test_init_params_dtype_and_zero_biases(tiny_arch):
    p = init_params(tiny_arch, np.random.default_rng(0))
    assert all(v.dtype == np.float32 for v in p.values())
    assert not p["b_a"].any() and not p["b_v"].any() and not p["conv1.b"].any()
    assert ArchConfig.from_dict(tiny_arch.to_dict()) == tiny_arch
