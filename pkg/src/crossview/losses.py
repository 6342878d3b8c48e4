"""Cross-entropy, Euclidean triplet hinges and the weighted training objective."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, LabelError, ShapeError

# smoothing inside sqrt during training so the distance gradient stays finite at 0
DIST_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_ac: float = 1.0
    lambda_vc: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        if self.lambda_ac < 0 or self.lambda_vc < 0:
            raise ConfigError("loss weights must be >= 0")
        if not self.delta > 0:
            raise ConfigError("margin delta must be > 0")


@dataclass(frozen=True)
class LossBreakdown:
    l_ace: float
    l_vce: float
    l_ac: float
    l_vc: float
    total: float

    def as_dict(self):
        return asdict(self)


def log_softmax(z):
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` via log-sum-exp."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeError("cross_entropy expects a single logit vector")
    if not 0 <= int(label) < logits.shape[0]:
        raise LabelError(f"label {label} outside [0, {logits.shape[0]})")
    return float(max(-log_softmax(logits)[int(label)], 0.0))


def cross_entropy_batch(logits, labels):
    """Mean cross-entropy over rows and its gradient w.r.t. ``logits``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError("one label per row required")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"labels outside [0, {k})")
    lsm = log_softmax(logits)
    rows = np.arange(n)
    loss = -lsm[rows, labels].mean()
    grad = np.exp(lsm)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def euclidean_distance(x, y, eps: float = 0.0):
    """Row-wise Euclidean distance; ``eps`` is added under the square root."""
    x, y = np.asarray(x), np.asarray(y)
    if x.shape != y.shape:
        raise ShapeError(f"distance between shapes {x.shape} and {y.shape}")
    d = x - y
    return np.sqrt((d * d).sum(axis=-1) + eps)


def _triplet(anchor, positive, negative, delta, eps):
    anchor, positive, negative = (np.atleast_2d(np.asarray(t)) for t in (anchor, positive, negative))
    if not (anchor.shape == positive.shape == negative.shape):
        raise ShapeError("triplet members must share a shape")
    d_pos = euclidean_distance(anchor, positive, eps)
    d_neg = euclidean_distance(anchor, negative, eps)
    hinge = delta + d_pos - d_neg
    return anchor, positive, negative, d_pos, d_neg, hinge


def triplet_margin(anchor, positive, negative, delta=1.0, eps=0.0) -> float:
    """Batch mean of ``max(0, delta + D(a, p) - D(a, n))``."""
    *_, hinge = _triplet(anchor, positive, negative, delta, eps)
    return float(np.maximum(hinge, 0.0).mean())


def triplet_margin_grad(anchor, positive, negative, delta=1.0, eps=DIST_EPS):
    """Value and gradients of :func:`triplet_margin` for each member."""
    a, p, n, d_pos, d_neg, hinge = _triplet(anchor, positive, negative, delta, eps)
    active = (hinge > 0).astype(a.dtype)[:, None] / len(a)
    u_pos = (a - p) / d_pos[:, None]
    u_neg = (a - n) / d_neg[:, None]
    return (float(np.maximum(hinge, 0.0).mean()),
            active * (u_pos - u_neg), -active * u_pos, active * u_neg)


def triplet_action(fhat_a, fhat_sa, fhat_sv, delta=1.0, eps=0.0) -> float:
    """Same-action sample is the positive, same-view sample the negative."""
    return triplet_margin(fhat_a, fhat_sa, fhat_sv, delta, eps)


def triplet_view(f_a, f_sv, f_sa, delta=1.0, eps=0.0) -> float:
    """Roles reversed: same-view sample is the positive."""
    return triplet_margin(f_a, f_sv, f_sa, delta, eps)


def total_loss(anchor, same_view, same_action, action_labels, view_labels,
               weights: LossWeights = LossWeights(), with_grad: bool = False, eps: float = DIST_EPS):
    """Weighted objective on a triplet batch.

    ``anchor``, ``same_view`` and ``same_action`` are ForwardOutputs over the
    same B triplets. Cross-entropies use the anchor only; every term is a
    batch mean. With ``with_grad`` also returns upstream gradients, a dict
    ``{"a"|"sv"|"sa": {"f", "f_hat", "z_a", "z_v"}}``.
    """
    l_ace, g_za = cross_entropy_batch(anchor.z_a, action_labels)
    l_vce, g_zv = cross_entropy_batch(anchor.z_v, view_labels)
    l_ac, ga_a, ga_sa, ga_sv = triplet_margin_grad(anchor.f_hat, same_action.f_hat, same_view.f_hat,
                                                   weights.delta, eps)
    l_vc, gv_a, gv_sv, gv_sa = triplet_margin_grad(anchor.f, same_view.f, same_action.f, weights.delta, eps)
    total = l_ace + l_vce + weights.lambda_ac * l_ac + weights.lambda_vc * l_vc
    breakdown = LossBreakdown(l_ace, l_vce, l_ac, l_vc, float(total))
    if not with_grad:
        return breakdown
    la, lv = weights.lambda_ac, weights.lambda_vc
    grads = {
        "a": {"f": lv * gv_a, "f_hat": la * ga_a, "z_a": g_za, "z_v": g_zv},
        "sv": {"f": lv * gv_sv, "f_hat": la * ga_sv, "z_a": None, "z_v": None},
        "sa": {"f": lv * gv_sa, "f_hat": la * ga_sa, "z_a": None, "z_v": None},
    }
    return breakdown, grads
