"""Forward and backward passes of the view-gated classifier.

Pipeline per image::

    f     = backbone(image)                  # (D,)
    z_v   = f @ W_v + b_v ; p_v = softmax(z_v)
    w     = Q @ p_v                          # (D,)  gate from the view queries
    f_hat = w * f
    z_a   = f_hat @ W_a + b_a

All functions work on batches (leading axis N). Backward passes are written
by hand and checked against finite differences in the test-suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ShapeError

PARAM_ORDER_HEADS = ("Q", "W_a", "b_a", "W_v", "b_v")


@dataclass(frozen=True)
class ArchConfig:
    A: int
    V: int
    input_size: int = 32
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    stride: int = 2
    pad: int = 1

    @property
    def D(self) -> int:
        return self.channels[-1]

    def to_dict(self):
        return {"A": self.A, "V": self.V, "input_size": self.input_size, "channels": list(self.channels),
                "kernel": self.kernel, "stride": self.stride, "pad": self.pad}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


def param_names(arch: ArchConfig) -> list[str]:
    names = []
    for i in range(len(arch.channels)):
        names += [f"conv{i + 1}.w", f"conv{i + 1}.b"]
    return names + list(PARAM_ORDER_HEADS)


def init_params(arch: ArchConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform conv weights, fan-in uniform heads, zero biases, N(0, 1) view queries."""
    params = {}
    c_in = 3
    for i, c_out in enumerate(arch.channels):
        fan_in = c_in * arch.kernel ** 2
        bound = np.sqrt(6.0 / fan_in)
        params[f"conv{i + 1}.w"] = rng.uniform(-bound, bound, (c_out, c_in, arch.kernel, arch.kernel))
        params[f"conv{i + 1}.b"] = np.zeros(c_out)
        c_in = c_out
    D = arch.D
    bound = 1.0 / np.sqrt(D)
    params["Q"] = rng.standard_normal((D, arch.V))
    params["W_a"] = rng.uniform(-bound, bound, (D, arch.A))
    params["b_a"] = np.zeros(arch.A)
    params["W_v"] = rng.uniform(-bound, bound, (D, arch.V))
    params["b_v"] = np.zeros(arch.V)
    return {k: v.astype(dtype) for k, v in params.items()}


def check_params(params, arch: ArchConfig):
    expected = {"Q": (arch.D, arch.V), "W_a": (arch.D, arch.A), "b_a": (arch.A,),
                "W_v": (arch.D, arch.V), "b_v": (arch.V,)}
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ShapeError(f"{name} has shape {params[name].shape}, expected {shape}")


# --------------------------------------------------------------------------
# convolution layers
# --------------------------------------------------------------------------

def conv_forward(x, w, b, stride, pad):
    n, _, h, wd = x.shape
    c_out, _, k, _ = w.shape
    oh = kernels.conv_out_size(h, k, stride, pad)
    ow = kernels.conv_out_size(wd, k, stride, pad)
    cols = kernels.im2col(x, k, stride, pad)
    out = cols @ w.reshape(c_out, -1).T + b
    return out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2), cols


def conv_backward(dout, cols, x_shape, w, stride, pad, need_dx=True):
    c_out = w.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dx = kernels.col2im(d2 @ w.reshape(c_out, -1), x_shape, w.shape[2], stride, pad)
    return dx, dw, db


def _as_batch(images, arch: ArchConfig, dtype):
    x = np.asarray(images)
    single = x.ndim == 3
    if single:
        x = x[None]
    s = arch.input_size
    if x.ndim != 4 or x.shape[1:] != (3, s, s):
        raise ShapeError(f"expected images of shape (N, 3, {s}, {s}), got {np.shape(images)}")
    return np.ascontiguousarray(x, dtype=dtype), single


def _backbone(params, x, arch: ArchConfig, cache: Optional[list]):
    h = x
    for i in range(len(arch.channels)):
        z, cols = conv_forward(h, params[f"conv{i + 1}.w"], params[f"conv{i + 1}.b"], arch.stride, arch.pad)
        if cache is not None:
            cache.append((h.shape, cols, z > 0))
        h = np.maximum(z, 0)
    return h.mean(axis=(2, 3))


def backbone_forward(params, images, arch: ArchConfig) -> np.ndarray:
    """Feature vector(s) f of length D; accepts one (3, S, S) image or a batch."""
    x, single = _as_batch(images, arch, params["Q"].dtype)
    f = _backbone(params, x, arch, None)
    return f[0] if single else f


def backbone_backward(params, cache, df, arch: ArchConfig, need_dx=False):
    grads = {}
    shape_last = cache[-1][2].shape
    dh = np.broadcast_to(df[:, :, None, None] / (shape_last[2] * shape_last[3]), shape_last)
    dx = None
    for i in reversed(range(len(arch.channels))):
        x_shape, cols, mask = cache[i]
        dz = dh * mask
        dx, dw, db = conv_backward(dz, cols, x_shape, params[f"conv{i + 1}.w"], arch.stride, arch.pad,
                                   need_dx=(i > 0 or need_dx))
        grads[f"conv{i + 1}.w"] = dw
        grads[f"conv{i + 1}.b"] = db
        dh = dx
    return grads, dx


# --------------------------------------------------------------------------
# heads and gate
# --------------------------------------------------------------------------

def softmax(z):
    z = np.asarray(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def view_logits(f, W_v, b_v):
    return f @ W_v + b_v


def view_probs(z_v):
    return softmax(z_v)


def gate_weights(p_v, Q):
    """``w = Q @ p_v`` for rows of ``p_v`` (N, V) that sum to one.

    Evaluated as ``Q[:, r] + sum_v (Q[:, v] - Q[:, r]) p_v[v]`` with ``r`` the
    row's most probable view. Same value in exact arithmetic, but rounding in
    ``sum(p_v)`` cannot leak in: equal query columns give ``w = Q[:, r]``
    exactly, and so does a one-hot ``p_v``.
    """
    ref = np.argmax(p_v, axis=-1)
    Qt = Q.T
    diff = Qt[None, :, :] - Qt[ref][:, None, :]
    return Qt[ref] + np.einsum("nv,nvd->nd", p_v, diff), ref


def gate_coefficients(p_v, ref):
    """d w / d Q[:, v] for the evaluation order of :func:`gate_weights`."""
    c = p_v.copy()
    rows = np.arange(len(p_v))
    c[rows, ref] = 0.0
    c[rows, ref] = 1.0 - c.sum(axis=1)
    return c


def disentangle(f, p_v, Q):
    """Gate features with the view-weighted query: ``(Q @ p_v) * f``."""
    f, p_v, Q = np.asarray(f), np.asarray(p_v), np.asarray(Q)
    if Q.ndim != 2 or f.shape[-1] != Q.shape[0] or p_v.shape[-1] != Q.shape[1] or f.shape[:-1] != p_v.shape[:-1]:
        raise ShapeError(f"disentangle: incompatible shapes f{f.shape}, p_v{p_v.shape}, Q{Q.shape}")
    w, _ = gate_weights(p_v.reshape(-1, Q.shape[1]), Q)
    return w.reshape(f.shape) * f


def action_logits(f_hat, W_a, b_a):
    return f_hat @ W_a + b_a


@dataclass
class ForwardOutput:
    f: np.ndarray
    z_v: np.ndarray
    p_v: np.ndarray
    f_hat: np.ndarray
    z_a: np.ndarray
    cache: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def p_a(self):
        return softmax(self.z_a)

    def __len__(self):
        return len(self.f)

    def rows(self, sl) -> "ForwardOutput":
        return ForwardOutput(self.f[sl], self.z_v[sl], self.p_v[sl], self.f_hat[sl], self.z_a[sl])


def forward(params, images, arch: ArchConfig, stop_gradient_pv: bool = False, keep_cache: bool = False,
            gate_p_v=None) -> ForwardOutput:
    """Full pass on a batch (N, 3, S, S).

    ``keep_cache`` stores what :func:`backward` needs; ``stop_gradient_pv``
    only affects the backward. ``gate_p_v`` replaces the view probabilities
    fed to the gate (not those reported in ``p_v``), which is how a
    stop-gradient is expressed as a plain function for finite differences.
    """
    x, single = _as_batch(images, arch, params["Q"].dtype)
    conv_cache = [] if keep_cache else None
    f = _backbone(params, x, arch, conv_cache)
    z_v = view_logits(f, params["W_v"], params["b_v"])
    p_v = view_probs(z_v)
    p_gate = p_v if gate_p_v is None else np.asarray(gate_p_v, dtype=p_v.dtype)
    w, ref = gate_weights(p_gate, params["Q"])
    f_hat = w * f
    z_a = action_logits(f_hat, params["W_a"], params["b_a"])
    cache = None
    if keep_cache:
        cache = {"conv": conv_cache, "w": w, "p_gate": p_gate, "ref": ref,
                 "stop_gradient_pv": stop_gradient_pv or gate_p_v is not None}
    out = ForwardOutput(f, z_v, p_v, f_hat, z_a, cache)
    if single:
        out = ForwardOutput(f[0], z_v[0], p_v[0], f_hat[0], z_a[0], cache)
    return out


def backward(params, out: ForwardOutput, arch: ArchConfig, d_f=None, d_f_hat=None, d_z_a=None, d_z_v=None,
             need_dx: bool = False):
    """Parameter gradients given upstream gradients on the forward outputs.

    Missing upstream gradients count as zero. Returns ``(grads, d_images)``;
    ``d_images`` is None unless ``need_dx``.
    """
    if out.cache is None:
        raise ValueError("forward must be run with keep_cache=True")
    f, p_v = out.f, out.p_v
    zeros = lambda like: np.zeros_like(like)
    d_f = zeros(f) if d_f is None else d_f.copy()
    d_f_hat = zeros(f) if d_f_hat is None else d_f_hat
    d_z_a = zeros(out.z_a) if d_z_a is None else d_z_a
    d_z_v = zeros(out.z_v) if d_z_v is None else d_z_v.copy()
    grads = {}
    Q = params["Q"]
    w = out.cache["w"]

    grads["W_a"] = out.f_hat.T @ d_z_a
    grads["b_a"] = d_z_a.sum(axis=0)
    d_f_hat = d_f_hat + d_z_a @ params["W_a"].T

    d_f += d_f_hat * w
    d_w = d_f_hat * f
    ref = out.cache["ref"]
    grads["Q"] = d_w.T @ gate_coefficients(out.cache["p_gate"], ref)
    if not out.cache["stop_gradient_pv"]:
        d_p = d_w @ Q - np.sum(d_w * Q.T[ref], axis=1, keepdims=True)
        d_z_v += p_v * (d_p - (d_p * p_v).sum(axis=1, keepdims=True))

    grads["W_v"] = f.T @ d_z_v
    grads["b_v"] = d_z_v.sum(axis=0)
    d_f += d_z_v @ params["W_v"].T

    conv_grads, dx = backbone_backward(params, out.cache["conv"], d_f, arch, need_dx=need_dx)
    grads.update(conv_grads)
    return {k: grads[k] for k in param_names(arch)}, dx


def n_params(params) -> int:
    return int(sum(v.size for v in params.values()))
