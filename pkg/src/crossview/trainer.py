"""Momentum SGD over triplet batches, best-epoch selection and a
finite-difference gradient oracle."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .checkpoint import Checkpoint
from .dataset import AugmentConfig, DatasetManifest, augment
from .errors import ConfigError, DivergedError
from .losses import LossBreakdown, LossWeights, total_loss
from .model import ArchConfig, backward, forward, init_params, param_names
from .sampler import TripletSampler

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drop_epochs: tuple[int, ...] = (10, 30)
    lr_drop_factor: float = 10.0
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    stop_gradient_pv: bool = False
    input_size: int = 32
    channels: tuple[int, ...] = (16, 32, 64)
    # False freezes the view queries at all-ones, i.e. an identity gate
    disentangle: bool = True
    augment: bool = True
    balance_actions: bool = False
    steps_per_epoch: Optional[int] = None
    eval_batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "lr_drop_epochs", tuple(int(e) for e in self.lr_drop_epochs))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))
        for name in ("epochs", "batch_size", "input_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if not self.lr > 0 or not self.lr_drop_factor > 0:
            raise ConfigError("train.lr and train.lr_drop_factor must be > 0")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("train.momentum and train.weight_decay must be >= 0")
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ConfigError("train.lr_drop_epochs must be strictly increasing")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("train.steps_per_epoch must be >= 1")
        if not self.channels:
            raise ConfigError("train.channels must not be empty")

    def to_dict(self):
        d = asdict(self)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


PRESETS = {
    "desk": TrainConfig(),
    "large": TrainConfig(epochs=50, input_size=224),
    "tiny": TrainConfig(epochs=2, batch_size=2, input_size=8, channels=(4, 8, 8), augment=False),
}


def json_safe(obj):
    """Replace NaN floats (e.g. accuracy without a validation set) by None."""
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


def lr_at(config: TrainConfig, epoch: int) -> float:
    """Step schedule; ``epoch`` is 0-based."""
    drops = sum(1 for e in config.lr_drop_epochs if epoch >= e)
    return config.lr / config.lr_drop_factor ** drops


def decayed(name: str) -> bool:
    """Weight decay applies to conv and head weight matrices only."""
    return name.endswith(".w") or name in ("W_a", "W_v")


def sgd_step(params, grads, velocity, lr, momentum, weight_decay, frozen=()):
    """In place: v <- m v - lr (g + wd theta); theta <- theta + v."""
    for name, theta in params.items():
        if name in frozen:
            continue
        g = grads[name]
        if weight_decay and decayed(name):
            g = g + weight_decay * theta
        v = velocity[name]
        v *= momentum
        v -= lr * g
        theta += v


def loss_and_grad(params, arch: ArchConfig, images, action_labels, view_labels,
                  weights: LossWeights = LossWeights(), stop_gradient_pv: bool = False):
    """Objective on stacked triplet images (anchors, same-view, same-action).

    Returns ``(LossBreakdown, grads)`` with one gradient array per parameter.
    """
    b = len(action_labels)
    out = forward(params, images, arch, stop_gradient_pv=stop_gradient_pv, keep_cache=True)
    parts = [out.rows(slice(i * b, (i + 1) * b)) for i in range(3)]
    breakdown, g = total_loss(parts[0], parts[1], parts[2], action_labels, view_labels, weights, with_grad=True)
    stack = lambda key, like: np.concatenate(
        [g[m][key] if g[m][key] is not None else np.zeros_like(like[i * b:(i + 1) * b])
         for i, m in enumerate(("a", "sv", "sa"))])
    grads, _ = backward(params, out, arch,
                        d_f=stack("f", out.f), d_f_hat=stack("f_hat", out.f_hat),
                        d_z_a=stack("z_a", out.z_a), d_z_v=stack("z_v", out.z_v))
    return breakdown, grads


def arch_for(config: TrainConfig, label_space) -> ArchConfig:
    return ArchConfig(A=label_space.A, V=label_space.V, input_size=config.input_size, channels=config.channels)


def initial_params(config: TrainConfig, arch: ArchConfig, rng) -> dict:
    params = init_params(arch, rng, np.float32)
    if not config.disentangle:
        params["Q"] = np.ones_like(params["Q"])
    return params


def _augment_batch(images, rng, cfg=AugmentConfig()):
    return np.stack([augment(img, rng, cfg) for img in images])


def train(config: TrainConfig, train_manifest: DatasetManifest, val_manifest: DatasetManifest, store,
          metrics_path=None, on_epoch: Callable[[dict], None] | None = None):
    """Train from scratch; returns ``(best_checkpoint, per_epoch_records)``.

    Deterministic given ``config.seed`` and the data. The returned checkpoint
    holds the parameters of the epoch with the highest validation Top-1
    (earliest on ties).
    """
    from .evaluator import predict, topk_accuracy

    label_space = train_manifest.label_space
    arch = arch_for(config, label_space)
    init_seq, sampler_seq, aug_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = initial_params(config, arch, np.random.default_rng(init_seq))
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    frozen = () if config.disentangle else ("Q",)
    sampler = TripletSampler(train_manifest, seed=np.random.default_rng(sampler_seq),
                             balance_actions=config.balance_actions)
    aug_rng = np.random.default_rng(aug_seq)
    steps = config.steps_per_epoch or math.ceil(len(train_manifest) / config.batch_size)
    ids = train_manifest.source_ids

    val_images = store.batch(val_manifest.source_ids) if len(val_manifest) else None
    val_labels = val_manifest.action_ids
    k5 = min(5, arch.A)

    records = []
    best = None
    log_file = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(metrics_path, "w")
    step_no = 0
    try:
        for epoch in range(config.epochs):
            t0 = time.perf_counter()
            lr = lr_at(config, epoch)
            sums = np.zeros(5)
            for _ in range(steps):
                batch = sampler.sample(config.batch_size)
                images = store.batch([ids[i] for i in batch.stacked()])
                if config.augment:
                    images = _augment_batch(images, aug_rng)
                a_lbl = train_manifest.action_ids[batch.anchor]
                v_lbl = train_manifest.view_ids[batch.anchor]
                breakdown, grads = loss_and_grad(params, arch, images, a_lbl, v_lbl,
                                                 config.loss_weights, config.stop_gradient_pv)
                if not np.isfinite(breakdown.total):
                    raise DivergedError(step_no, breakdown.total)
                sgd_step(params, grads, velocity, lr, config.momentum, config.weight_decay, frozen)
                sums += [breakdown.l_ace, breakdown.l_vce, breakdown.l_ac, breakdown.l_vc, breakdown.total]
                step_no += 1
            means = sums / steps
            if val_images is not None:
                logits = predict(params, arch, val_images, config.eval_batch_size).z_a
                top1 = topk_accuracy(logits, val_labels, 1)
                top5 = topk_accuracy(logits, val_labels, k5)
            else:
                top1 = top5 = float("nan")
            rec = {"epoch": epoch, "lr": lr, "l_ace": float(means[0]), "l_vce": float(means[1]),
                   "l_ac": float(means[2]), "l_vc": float(means[3]), "total": float(means[4]),
                   "val_top1": top1, "val_top5": top5, "wall_time_s": round(time.perf_counter() - t0, 3)}
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(json_safe(rec)) + "\n")
                log_file.flush()
            log.info("epoch %d lr %.5g loss %.4f val_top1 %.2f", epoch, lr, rec["total"], top1)
            if on_epoch is not None:
                on_epoch(rec)
            if best is None or (top1 > best[1]) or (math.isnan(best[1]) and not math.isnan(top1)):
                best = (epoch, top1, {k: v.copy() for k, v in params.items()})
    finally:
        if log_file is not None:
            log_file.close()

    epoch, top1, best_params = best
    ckpt = Checkpoint(label_space=label_space, arch=arch, params=best_params,
                      config=config.to_dict(), epoch=epoch, val_top1=top1)
    return ckpt, records


# --------------------------------------------------------------------------
# finite-difference oracle
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_parameter: str
    max_abs_err: float
    n_checked: int
    n_params: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err < tol

    def to_dict(self):
        return asdict(self)


def gradient_check(params, arch: ArchConfig, images, action_labels, view_labels,
                   weights: LossWeights = LossWeights(), stop_gradient_pv: bool = False,
                   epsilon: float = 1e-5, max_full: int = 5000, n_sample: int = 500, seed: int = 0,
                   grad_fn: Callable | None = None) -> GradCheckReport:
    """Compare analytic gradients of the total loss to central differences.

    Everything runs in float64. Every scalar is checked when the model has at
    most ``max_full`` parameters, otherwise ``n_sample`` random ones. With
    ``stop_gradient_pv`` the oracle holds the gate's view probabilities at
    their unperturbed value. ``grad_fn(params) -> grads`` overrides the
    analytic side (for fault injection).
    """
    p64 = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    x = np.asarray(images, dtype=np.float64)
    gate = None
    if stop_gradient_pv:
        gate = forward(p64, x, arch).p_v

    def loss(p):
        b = len(action_labels)
        out = forward(p, x, arch, gate_p_v=gate)
        parts = [out.rows(slice(i * b, (i + 1) * b)) for i in range(3)]
        return total_loss(parts[0], parts[1], parts[2], action_labels, view_labels, weights).total

    if grad_fn is None:
        _, analytic = loss_and_grad(p64, arch, x, action_labels, view_labels, weights, stop_gradient_pv)
    else:
        analytic = grad_fn(p64)

    names = param_names(arch)
    index = [(n, i) for n in names for i in range(p64[n].size)]
    total = len(index)
    if total > max_full:
        rng = np.random.default_rng(seed)
        index = [index[j] for j in np.sort(rng.choice(total, size=n_sample, replace=False))]

    worst = (-1.0, "", 0.0)
    max_abs = 0.0
    for name, i in index:
        flat = p64[name].reshape(-1)
        orig = flat[i]
        flat[i] = orig + epsilon
        up = loss(p64)
        flat[i] = orig - epsilon
        down = loss(p64)
        flat[i] = orig
        numeric = (up - down) / (2.0 * epsilon)
        a = float(np.asarray(analytic[name]).reshape(-1)[i])
        abs_err = abs(a - numeric)
        rel = abs_err / max(abs(a), abs(numeric), 1e-8)
        max_abs = max(max_abs, abs_err)
        if rel > worst[0]:
            pos = np.unravel_index(i, p64[name].shape)
            worst = (rel, f"{name}[{','.join(map(str, pos))}]", abs_err)
    return GradCheckReport(worst[0], worst[1], max_abs, len(index), total)
