import json
from dataclasses import replace

import numpy as np
import pytest

from crossview.dataset import split_loco
from crossview.errors import ConfigError, DivergedError
from crossview.losses import LossWeights
from crossview.model import init_params
from crossview.sampler import build_triplet_batch
from crossview.trainer import (
    PRESETS, TrainConfig, arch_for, decayed, gradient_check, loss_and_grad, lr_at, sgd_step, train,
)

TINY = PRESETS["tiny"]


@pytest.fixture(scope="module")
def tiny_split(tiny_data):
    m, store = tiny_data
    tr, va, _ = split_loco(m, 2, 0.5, 0)
    return tr, va, store


def _triplet_inputs(m, store, n, seed):
    b = build_triplet_batch(m, n, seed)
    x = store.batch([m.source_ids[i] for i in b.stacked()])
    return x, m.action_ids[b.anchor], m.view_ids[b.anchor]


def test_sgd_update_rule():
    theta = {"W_a": np.array([[1.0, -2.0]]), "b_a": np.array([0.5])}
    g = {"W_a": np.array([[0.3, 0.1]]), "b_a": np.array([-1.0])}
    vel = {k: np.zeros_like(v) for k, v in theta.items()}
    want = {k: theta[k] - 0.1 * g[k] for k in theta}
    sgd_step(theta, g, vel, lr=0.1, momentum=0.0, weight_decay=0.0)
    for k in theta:
        np.testing.assert_array_equal(theta[k], want[k])


def test_sgd_momentum_and_decay_scope():
    theta = {"W_a": np.array([2.0]), "b_a": np.array([2.0]), "Q": np.array([2.0])}
    g = {k: np.array([1.0]) for k in theta}
    vel = {k: np.zeros(1) for k in theta}
    sgd_step(theta, g, vel, 0.1, 0.9, 0.5, frozen=("Q",))
    assert theta["W_a"][0] == pytest.approx(2.0 - 0.1 * (1 + 0.5 * 2))
    assert theta["b_a"][0] == pytest.approx(1.9)
    assert theta["Q"][0] == 2.0
    sgd_step(theta, g, vel, 0.1, 0.9, 0.0)
    assert theta["b_a"][0] == pytest.approx(1.9 - 0.9 * 0.1 - 0.1)
    assert decayed("conv2.w") and decayed("W_v") and not decayed("conv2.b") and not decayed("Q")


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(cfg, 9) == pytest.approx(0.01)
    assert lr_at(cfg, 10) == pytest.approx(0.001)
    assert lr_at(cfg, 30) == pytest.approx(0.0001)
    lrs = [lr_at(cfg, e) for e in range(60)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_drop_epochs=(30, 10))
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 1, "bogus": 2})
    cfg = TrainConfig(loss_weights={"lambda_ac": 0.5})
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("stop", [False, True])
def test_gradient_check_tiny(tiny_data, tiny_arch, stop):
    m, store = tiny_data
    x, a, v = _triplet_inputs(m, store, 2, 0)
    params = init_params(tiny_arch, np.random.default_rng(0), np.float64)
    rep = gradient_check(params, tiny_arch, x, a, v, LossWeights(), stop_gradient_pv=stop)
    assert rep.n_checked == rep.n_params < 5000
    assert rep.max_rel_err < 1e-4, rep


def test_gradient_check_subsamples_large_models(tiny_data):
    m, store = tiny_data
    x, a, v = _triplet_inputs(m, store, 1, 1)
    arch = replace(arch_for(TINY, m.label_space), channels=(8, 16, 16))
    params = init_params(arch, np.random.default_rng(1), np.float64)
    rep = gradient_check(params, arch, x, a, v, max_full=1000, n_sample=500)
    assert rep.n_params > 1000 and rep.n_checked == 500
    assert rep.max_rel_err < 1e-4


def test_gradient_check_catches_corrupted_gradient(tiny_data, tiny_arch):
    m, store = tiny_data
    x, a, v = _triplet_inputs(m, store, 2, 2)
    params = init_params(tiny_arch, np.random.default_rng(2), np.float64)

    def broken(p):
        _, g = loss_and_grad(p, tiny_arch, x, a, v)
        g["W_a"] = g["W_a"] * 1.5 + 0.01
        return g

    rep = gradient_check(params, tiny_arch, x, a, v, grad_fn=broken)
    assert rep.max_rel_err > 1e-2
    assert rep.worst_parameter.startswith("W_a[")


def test_gradient_check_zero_loss_region(tiny_data, tiny_arch):
    # dead ReLUs give f = 0, zero heads give equal logits, and balanced
    # labels make the mean cross-entropy gradient vanish
    m, store = tiny_data
    x, _, _ = _triplet_inputs(m, store, 12, 3)
    a, v = np.arange(12) % 4, np.arange(12) % 3
    params = init_params(tiny_arch, np.random.default_rng(3), np.float64)
    for i in (1, 2, 3):
        params[f"conv{i}.b"][:] = -10.0
    for k in ("W_a", "b_a", "W_v", "b_v"):
        params[k][:] = 0.0
    _, g = loss_and_grad(params, tiny_arch, x, a, v)
    assert max(np.abs(t).max() for t in g.values()) < 1e-8
    rep = gradient_check(params, tiny_arch, x, a, v)
    assert rep.max_abs_err < 1e-8


def test_training_is_deterministic(tiny_split, tmp_path):
    tr, va, store = tiny_split
    cfg = replace(TINY, epochs=3)
    c1, r1 = train(cfg, tr, va, store, metrics_path=tmp_path / "a.log")
    c2, r2 = train(cfg, tr, va, store, metrics_path=tmp_path / "b.log")
    for k in c1.params:
        np.testing.assert_array_equal(c1.params[k], c2.params[k])
    strip = lambda rs: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rs]
    assert strip(r1) == strip(r2)
    lines = (tmp_path / "a.log").read_text().splitlines()
    assert len(lines) == 3
    rec = json.loads(lines[0])
    assert set(rec) == {"epoch", "lr", "l_ace", "l_vce", "l_ac", "l_vc", "total", "val_top1", "val_top5",
                        "wall_time_s"}
    c3, _ = train(replace(cfg, seed=1), tr, va, store)
    assert any(not np.array_equal(c1.params[k], c3.params[k]) for k in c1.params)


def test_best_epoch_is_earliest_maximum(tiny_split):
    tr, va, store = tiny_split
    ckpt, recs = train(replace(TINY, epochs=4), tr, va, store)
    tops = [r["val_top1"] for r in recs]
    assert ckpt.epoch == tops.index(max(tops))
    assert ckpt.val_top1 == max(tops)


def test_plain_ablation_keeps_identity_gate(tiny_split):
    tr, va, store = tiny_split
    cfg = replace(TINY, epochs=2, disentangle=False, loss_weights=LossWeights(0.0, 0.0))
    ckpt, recs = train(cfg, tr, va, store)
    assert np.all(ckpt.params["Q"] == 1.0)
    assert all(r["l_ac"] >= 0 for r in recs)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(tiny_split):
    tr, va, store = tiny_split
    with pytest.raises(DivergedError):
        train(replace(TINY, epochs=3, lr=1e30, momentum=0.0), tr, va, store)


def test_augmentation_and_steps_per_epoch(tiny_split):
    tr, va, store = tiny_split
    ckpt, recs = train(replace(TINY, epochs=1, augment=True, steps_per_epoch=3), tr, va, store)
    assert len(recs) == 1 and np.isfinite(recs[0]["total"])
