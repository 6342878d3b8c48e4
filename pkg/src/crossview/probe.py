"""How much view information survives the gate: nearest-centroid probes on
features before and after disentanglement, plus CSV export for external
embedding tools."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .checkpoint import Checkpoint
from .dataset import DatasetManifest, open_store
from .errors import EmptyClassError, EmptyEval
from .evaluator import predict

STAGES = ("pre", "post")


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    action_ids: np.ndarray
    view_ids: np.ndarray
    stage: str

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if len(self.rows) == 0:
            raise EmptyEval("feature matrix is empty")

    def labels(self, kind: str = "view") -> np.ndarray:
        return self.view_ids if kind == "view" else self.action_ids


def extract_features(checkpoint: Checkpoint, manifest: DatasetManifest, stage: str, store=None,
                     batch_size: int = 256) -> FeatureMatrix:
    """Backbone features (``pre``) or gated features (``post``) for every entry."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    if len(manifest) == 0:
        raise EmptyEval("empty manifest")
    if store is None:
        store = open_store(manifest, checkpoint.arch.input_size)
    out = predict(checkpoint.params, checkpoint.arch, store.batch(manifest.source_ids), batch_size)
    rows = out.f if stage == "pre" else out.f_hat
    return FeatureMatrix(np.asarray(rows, dtype=np.float64), manifest.action_ids.copy(),
                         manifest.view_ids.copy(), stage)


@dataclass
class MdcModel:
    centroids: np.ndarray  # (K, D)
    class_ids: np.ndarray  # (K,), ascending


def mdc_fit(rows, labels, classes=None) -> MdcModel:
    """Per-class mean of ``rows``. ``classes`` lists ids that must be present."""
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    class_ids = np.unique(labels) if classes is None else np.asarray(sorted(classes), dtype=np.int64)
    cents = []
    for c in class_ids:
        member = labels == c
        if not member.any():
            raise EmptyClassError(f"class {c} has no training rows")
        cents.append(rows[member].mean(axis=0))
    return MdcModel(np.stack(cents), class_ids)


def mdc_predict(model: MdcModel, rows) -> np.ndarray:
    """Nearest centroid; ties go to the lower class id."""
    d = kernels.sq_dists(np.atleast_2d(np.asarray(rows, dtype=np.float64)), model.centroids)
    return model.class_ids[np.argmin(d, axis=1)]


def mdc_accuracy(model: MdcModel, rows, labels) -> float:
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise EmptyEval("no rows to score")
    return 100.0 * float(np.mean(mdc_predict(model, rows) == labels))


def probe_view_drop(checkpoint: Checkpoint, train_manifest: DatasetManifest, val_manifest: DatasetManifest,
                    store=None) -> dict:
    """View accuracy of a nearest-centroid classifier on f and, separately, on f_hat.

    Each probe is fit on its own stage's training features and scored on the
    same stage's validation features. ``drop = acc_pre - acc_post``.
    """
    accs = {}
    for stage in STAGES:
        tr = extract_features(checkpoint, train_manifest, stage, store)
        va = extract_features(checkpoint, val_manifest, stage, store)
        model = mdc_fit(tr.rows, tr.view_ids)
        accs[stage] = mdc_accuracy(model, va.rows, va.view_ids)
    return {"acc_pre": accs["pre"], "acc_post": accs["post"], "drop": accs["pre"] - accs["post"]}


def embedding_header(D: int) -> list[str]:
    return ["action_id", "view_id"] + [f"f{i}" for i in range(D)]


def export_embeddings(features: FeatureMatrix, path) -> Path:
    """CSV: action_id, view_id, then one column per feature dimension."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(embedding_header(features.rows.shape[1]))
        for a, v, row in zip(features.action_ids, features.view_ids, features.rows):
            w.writerow([int(a), int(v), *(repr(float(x)) for x in row)])
    return path


def load_embeddings(path) -> FeatureMatrix:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return FeatureMatrix(data[:, 2:], data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), "pre")
