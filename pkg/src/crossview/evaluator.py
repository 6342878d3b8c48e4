"""Top-k accuracy, confusion matrices, leave-one-camera-out rounds and
cross-dataset inference through a label map."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .dataset import DatasetManifest, LabelSpace, open_store, split_loco
from .errors import EmptyEval, LabelError, LabelMapError, LabelSpaceError
from .model import ArchConfig, ForwardOutput, forward

log = logging.getLogger(__name__)

DROP = -1
_UNMAPPED = -2


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def true_label_ranks(logits, labels) -> np.ndarray:
    """0-based rank of each true label; equal scores rank the lower index first."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true = logits[np.arange(len(labels)), labels][:, None]
    idx = np.arange(logits.shape[1])[None, :]
    ahead = (logits > true) | ((logits == true) & (idx < labels[:, None]))
    return ahead.sum(axis=1)


def topk_accuracy(logits, labels, k: int) -> float:
    """Percentage of rows whose true label is among the ``k`` best scores."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(logits) == 0:
        raise EmptyEval("top-k accuracy of an empty batch")
    n_classes = logits.shape[1]
    if not 1 <= k <= n_classes:
        raise ValueError(f"k={k} outside [1, {n_classes}]")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError("labels outside the logit range")
    return 100.0 * float(np.mean(true_label_ranks(logits, labels) < k))


def argmax_lowest(logits) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(np.asarray(logits), axis=1)


def confusion_matrix(pred_labels, true_labels, A: int) -> np.ndarray:
    """Rows are ground truth, columns predictions."""
    pred = np.asarray(pred_labels, dtype=np.int64)
    true = np.asarray(true_labels, dtype=np.int64)
    if pred.shape != true.shape:
        raise LabelError("prediction and label counts differ")
    if pred.size and (min(pred.min(), true.min()) < 0 or max(pred.max(), true.max()) >= A):
        raise LabelError(f"labels outside [0, {A})")
    cm = np.zeros((A, A), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass
class EvalReport:
    top1: float
    top5: float
    confusion: np.ndarray
    n_samples: int
    per_class_accuracy: np.ndarray
    class_names: tuple[str, ...] = ()
    top5_k: int = 5
    n_dropped: int = 0
    ranking: str = "full"

    def to_dict(self):
        pca = [None if math.isnan(x) else float(x) for x in self.per_class_accuracy]
        return {"top1": self.top1, "top5": self.top5, "top5_k": self.top5_k, "n_samples": self.n_samples,
                "n_dropped": self.n_dropped, "ranking": self.ranking, "class_names": list(self.class_names),
                "per_class_accuracy": pca, "confusion": self.confusion.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(top1=d["top1"], top5=d["top5"], confusion=np.asarray(d["confusion"], dtype=np.int64),
                   n_samples=d["n_samples"],
                   per_class_accuracy=np.array([np.nan if x is None else x for x in d["per_class_accuracy"]]),
                   class_names=tuple(d["class_names"]), top5_k=d["top5_k"], n_dropped=d["n_dropped"],
                   ranking=d["ranking"])

    def save(self, report_path, confusion_csv=None):
        report_path = Path(report_path)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        if confusion_csv is not None:
            write_confusion_csv(self.confusion, self.class_names, confusion_csv)


def write_confusion_csv(cm, class_names, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["truth\\pred", *class_names])
        for name, row in zip(class_names, cm):
            w.writerow([name, *row.tolist()])


def build_report(logits, labels, A, class_names=(), ranking="full", n_dropped=0, top5_k=None) -> EvalReport:
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise EmptyEval("no samples to evaluate")
    k5 = top5_k or min(5, logits.shape[1])
    cm = confusion_matrix(argmax_lowest(logits), labels, A)
    counts = cm.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        pca = np.where(counts > 0, 100.0 * np.diag(cm) / np.maximum(counts, 1), np.nan)
    return EvalReport(topk_accuracy(logits, labels, 1), topk_accuracy(logits, labels, k5), cm, int(len(labels)),
                      pca, tuple(class_names), k5, int(n_dropped), ranking)


# --------------------------------------------------------------------------
# model application
# --------------------------------------------------------------------------

def resize_images(images: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a (N, 3, H, W) float batch."""
    if images.shape[-1] == size and images.shape[-2] == size:
        return images
    from PIL import Image

    out = np.empty((len(images), 3, size, size), dtype=np.float32)
    for i, img in enumerate(images):
        for c in range(3):
            out[i, c] = np.asarray(Image.fromarray(np.asarray(img[c], dtype=np.float32), mode="F")
                                   .resize((size, size), Image.BILINEAR))
    return out


def predict(params, arch: ArchConfig, images, batch_size: int = 256) -> ForwardOutput:
    """Forward in chunks; no augmentation."""
    images = resize_images(np.asarray(images), arch.input_size)
    chunks = [forward(params, images[i:i + batch_size], arch) for i in range(0, len(images), batch_size)]
    if not chunks:
        raise EmptyEval("no images")
    cat = lambda key: np.concatenate([getattr(c, key) for c in chunks])
    return ForwardOutput(cat("f"), cat("z_v"), cat("p_v"), cat("f_hat"), cat("z_a"))


def _store_for(manifest: DatasetManifest, store, size):
    if store is not None:
        return store
    return open_store(manifest, size)


# --------------------------------------------------------------------------
# label maps
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelMap:
    """Foreign action name -> model action name, or None to drop the class."""

    mapping: dict

    @classmethod
    def load(cls, path) -> "LabelMap":
        d = json.loads(Path(path).read_text())
        return cls(dict(d["mapping"]))

    def save(self, path, note: str = ""):
        Path(path).write_text(json.dumps({"note": note, "mapping": self.mapping}, indent=2) + "\n")

    @classmethod
    def identity(cls, label_space: LabelSpace) -> "LabelMap":
        return cls({a: a for a in label_space.actions})

    def resolve(self, foreign: LabelSpace, target: LabelSpace) -> np.ndarray:
        """Index array over foreign actions: target index, DROP, or unmapped."""
        t_index = {a: i for i, a in enumerate(target.actions)}
        out = np.full(foreign.A, _UNMAPPED, dtype=np.int64)
        for i, name in enumerate(foreign.actions):
            if name not in self.mapping:
                continue
            tgt = self.mapping[name]
            if tgt is None:
                out[i] = DROP
            elif tgt in t_index:
                out[i] = t_index[tgt]
            else:
                raise LabelMapError(f"target class {tgt!r} is not in the model's label space")
        return out


def default_label_map() -> LabelMap:
    """Best-effort 10-class -> 22-class map shipped with the package (non-authoritative)."""
    from importlib import resources

    text = resources.files("crossview").joinpath("data/label_map_10_to_22.json").read_text()
    return LabelMap(dict(json.loads(text)["mapping"]))


# --------------------------------------------------------------------------
# evaluation entry points
# --------------------------------------------------------------------------

def evaluate(checkpoint: Checkpoint, manifest: DatasetManifest, store=None, label_map: Optional[LabelMap] = None,
             restrict: bool = True, batch_size: int = 256) -> EvalReport:
    """Score a checkpoint on a manifest.

    Without a label map the manifest's action names must equal the
    checkpoint's; with one, this is :func:`cross_dataset_eval`.
    """
    if label_map is not None:
        return cross_dataset_eval(checkpoint, manifest, label_map, store, restrict, batch_size)
    if manifest.label_space.actions != checkpoint.label_space.actions:
        raise LabelSpaceError("dataset actions differ from the checkpoint's; supply a label map")
    if len(manifest) == 0:
        raise EmptyEval("empty manifest")
    store = _store_for(manifest, store, checkpoint.arch.input_size)
    out = predict(checkpoint.params, checkpoint.arch, store.batch(manifest.source_ids), batch_size)
    return build_report(out.z_a, manifest.action_ids, checkpoint.arch.A, checkpoint.label_space.actions)


def cross_dataset_eval(checkpoint: Checkpoint, manifest: DatasetManifest, label_map: LabelMap, store=None,
                       restrict: bool = True, batch_size: int = 256) -> EvalReport:
    """Evaluate on a foreign dataset whose classes are mapped onto the model's.

    Samples of dropped classes are excluded (counted in ``n_dropped``). With
    ``restrict`` only classes that some foreign class maps to compete in the
    ranking; Top-5 then uses ``min(5, #candidates)``.
    """
    mapping = label_map.resolve(manifest.label_space, checkpoint.label_space)
    present = np.unique(manifest.action_ids)
    missing = [manifest.label_space.actions[a] for a in present if mapping[a] == _UNMAPPED]
    if missing:
        raise LabelMapError(f"label map does not cover foreign classes {missing}")
    mapped = mapping[manifest.action_ids] if len(manifest) else np.zeros(0, np.int64)
    keep = np.flatnonzero(mapped != DROP)
    n_dropped = len(manifest) - len(keep)
    if len(keep) == 0:
        raise EmptyEval("no samples left after applying the label map")
    sub = manifest.subset(keep)
    store = _store_for(manifest, store, checkpoint.arch.input_size)
    logits = predict(checkpoint.params, checkpoint.arch, store.batch(sub.source_ids), batch_size).z_a.astype(np.float64)
    A = checkpoint.arch.A
    candidates = np.unique(mapping[mapping >= 0])
    k5 = min(5, A)
    if restrict:
        masked = np.full_like(logits, -np.inf)
        masked[:, candidates] = logits[:, candidates]
        logits = masked
        k5 = min(5, len(candidates))
    return build_report(logits, mapped[keep], A, checkpoint.label_space.actions,
                        ranking="restricted" if restrict else "full", n_dropped=n_dropped, top5_k=k5)


# --------------------------------------------------------------------------
# leave-one-camera-out
# --------------------------------------------------------------------------

@dataclass
class LocoReport:
    folds: dict  # view name -> EvalReport, in label-space order
    mean_top1: float
    mean_top5: float
    val_top1: dict = field(default_factory=dict)

    def to_dict(self):
        return {"folds": {k: v.to_dict() for k, v in self.folds.items()},
                "mean_top1": self.mean_top1, "mean_top5": self.mean_top5,
                "val_top1": {k: None if math.isnan(v) else v for k, v in self.val_top1.items()}}


def fold_seed(master_seed: int, view: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(view)]).generate_state(1)[0])


def run_loco(manifest: DatasetManifest, train_config, store=None, run_dir=None, val_fraction: float = 0.25,
             split_seed: int = 0, views=None) -> LocoReport:
    """Train on all views but one and test on the held-out view, for every view.

    When ``run_dir`` is given each fold writes
    ``fold_<view>/{checkpoint.ckpt, metrics.log, report.json, confusion.csv}``
    and a ``summary.json`` is written at the top.
    """
    from dataclasses import replace

    from .trainer import train

    ls = manifest.label_space
    if ls.V < 2:
        raise LabelSpaceError("leave-one-camera-out needs at least 2 views")
    store = _store_for(manifest, store, train_config.input_size)
    folds, val_top1 = {}, {}
    for v in (range(ls.V) if views is None else views):
        name = ls.views[v]
        tr, va, te = split_loco(manifest, v, val_fraction, split_seed)
        cfg = replace(train_config, seed=fold_seed(train_config.seed, v))
        fold_dir = None if run_dir is None else Path(run_dir) / f"fold_{name}"
        metrics = None if fold_dir is None else fold_dir / "metrics.log"
        ckpt, _ = train(cfg, tr, va, store, metrics_path=metrics)
        report = evaluate(ckpt, te, store)
        if fold_dir is not None:
            save_checkpoint(ckpt, fold_dir / "checkpoint.ckpt")
            report.save(fold_dir / "report.json", fold_dir / "confusion.csv")
        log.info("fold %s: top1 %.2f top5 %.2f", name, report.top1, report.top5)
        folds[name] = report
        val_top1[name] = ckpt.val_top1
    result = LocoReport(folds, float(np.mean([r.top1 for r in folds.values()])),
                        float(np.mean([r.top5 for r in folds.values()])), val_top1)
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "summary.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    return result
