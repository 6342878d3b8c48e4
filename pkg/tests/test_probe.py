import csv

import numpy as np
import pytest

from crossview.checkpoint import Checkpoint
from crossview.errors import EmptyClassError
from crossview.probe import (
    embedding_header, export_embeddings, extract_features, load_embeddings, mdc_accuracy, mdc_fit, mdc_predict,
    probe_view_drop,
)


def test_two_centroids_geometry():
    model = mdc_fit([[0.0, 0.0], [10.0, 0.0]], [0, 1])
    assert mdc_predict(model, [[1.0, 0.0]]).tolist() == [0]


def test_well_separated_clusters_score_perfectly():
    rng = np.random.default_rng(0)
    centres = np.array([[0, 0, 0], [20, 0, 0], [0, 20, 0], [0, 0, 20]], float)
    labels = np.repeat(np.arange(4), 25)
    rows = centres[labels] + rng.standard_normal((100, 3))
    assert mdc_accuracy(mdc_fit(rows, labels), rows, labels) == 100.0


def test_bisector_ties_go_to_lower_id():
    # centroids: class 0 at (0,0), class 1 at (4,0), class 2 at (0,4)
    rows = np.array([[-1, 0], [1, 0], [4, 0], [0, 4]], float)
    model = mdc_fit(rows, [0, 0, 1, 2])
    np.testing.assert_array_equal(model.centroids, [[0, 0], [4, 0], [0, 4]])
    queries = [[2, 0], [2, 2], [4, 4], [0, 2], [3, 0]]
    assert mdc_predict(model, queries).tolist() == [0, 0, 1, 0, 1]


def test_missing_class():
    with pytest.raises(EmptyClassError):
        mdc_fit([[0.0], [1.0]], [0, 2], classes=[0, 1, 2])


def test_isometry_invariance():
    rng = np.random.default_rng(1)
    rows, labels = rng.standard_normal((60, 4)), rng.integers(0, 3, 60)
    queries = rng.standard_normal((200, 4)) * 2
    q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    t = rng.standard_normal(4) * 5
    base = mdc_predict(mdc_fit(rows, labels), queries)
    moved = mdc_predict(mdc_fit(rows @ q.T + t, labels), queries @ q.T + t)
    np.testing.assert_array_equal(base, moved)


def _identity_gated(ckpt):
    params = {k: v.copy() for k, v in ckpt.params.items()}
    params["Q"] = np.ones_like(params["Q"])
    return Checkpoint(ckpt.label_space, ckpt.arch, params)


def test_identity_gate_features_match(small_run):
    ckpt, tr, va, _, _, store = small_run
    ident = _identity_gated(ckpt)
    pre = extract_features(ident, tr, "pre", store)
    post = extract_features(ident, tr, "post", store)
    assert len(pre.rows) == len(tr)
    np.testing.assert_array_equal(pre.rows, post.rows)
    res = probe_view_drop(ident, tr, va, store)
    assert res["acc_pre"] == res["acc_post"] and res["drop"] == 0.0


def test_probe_is_deterministic(small_run):
    ckpt, tr, va, _, _, store = small_run
    a = extract_features(ckpt, tr, "post", store)
    b = extract_features(ckpt, tr, "post", store)
    assert a.rows.tobytes() == b.rows.tobytes()
    assert probe_view_drop(ckpt, tr, va, store) == probe_view_drop(ckpt, tr, va, store)
    with pytest.raises(ValueError):
        extract_features(ckpt, tr, "middle", store)


def test_embedding_csv(small_run, tmp_path):
    ckpt, tr, _, _, _, store = small_run
    feats = extract_features(ckpt, tr, "post", store)
    path = export_embeddings(feats, tmp_path / "emb.csv")
    with open(path) as fh:
        table = list(csv.reader(fh))
    D = ckpt.arch.D
    assert table[0] == embedding_header(D) == ["action_id", "view_id"] + [f"f{i}" for i in range(D)]
    assert len(table) - 1 == len(tr) and all(len(r) == D + 2 for r in table)
    back = load_embeddings(path)
    np.testing.assert_allclose(back.rows, feats.rows, atol=1e-6)
    np.testing.assert_array_equal(back.view_ids, tr.view_ids)
    np.testing.assert_array_equal(back.action_ids, tr.action_ids)
