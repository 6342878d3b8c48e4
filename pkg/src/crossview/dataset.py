"""Labelled multi-view samples: directory ingestion, a synthetic generator,
leave-one-camera-out splits and training-time augmentation."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, EmptyFold, LabelError, MalformedLayout, NotFound

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")

# cycled per view index
VIEW_COLOR_CASTS = (
    (1.0, 0.8, 0.8),
    (0.8, 1.0, 0.8),
    (0.8, 0.8, 1.0),
    (1.0, 1.0, 0.8),
    (1.0, 0.8, 1.0),
    (0.8, 1.0, 1.0),
)


def natural_key(name: str):
    """Sort key putting ``"2"`` before ``"10"``; plain lexicographic otherwise."""
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", name) if tok]


@dataclass(frozen=True)
class LabelSpace:
    actions: tuple[str, ...]
    views: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        object.__setattr__(self, "views", tuple(str(v) for v in self.views))
        if len(self.actions) < 2 or len(self.views) < 2:
            raise LabelError(f"need at least 2 actions and 2 views, got {len(self.actions)} and {len(self.views)}")
        if len(set(self.actions)) != len(self.actions) or len(set(self.views)) != len(self.views):
            raise LabelError("label names must be unique")

    @property
    def A(self) -> int:
        return len(self.actions)

    @property
    def V(self) -> int:
        return len(self.views)

    def to_dict(self):
        return {"actions": list(self.actions), "views": list(self.views)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["actions"]), tuple(d["views"]))


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    action_id: int
    view_id: int
    source_id: str


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    """Immutable list of (source_id, action_id, view_id) entries.

    ``skipped`` lists files that could not be decoded during ingestion.
    """

    label_space: LabelSpace
    source_ids: tuple[str, ...]
    action_ids: np.ndarray
    view_ids: np.ndarray
    origin: str = "synthetic"
    root: str | None = None
    skipped: tuple[str, ...] = ()

    def __post_init__(self):
        a = np.asarray(self.action_ids, dtype=np.int64)
        v = np.asarray(self.view_ids, dtype=np.int64)
        a.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "action_ids", a)
        object.__setattr__(self, "view_ids", v)
        object.__setattr__(self, "source_ids", tuple(self.source_ids))
        if not (len(self.source_ids) == len(a) == len(v)):
            raise ValueError("entry columns have different lengths")
        if self.origin not in ("directory", "synthetic"):
            raise ValueError(f"unknown origin {self.origin!r}")
        ls = self.label_space
        if len(a) and (a.min() < 0 or a.max() >= ls.A or v.min() < 0 or v.max() >= ls.V):
            raise LabelError("entry labels outside the label space")

    def __len__(self):
        return len(self.source_ids)

    @property
    def warning_count(self) -> int:
        return len(self.skipped)

    @property
    def entries(self) -> list[tuple[str, int, int]]:
        return list(zip(self.source_ids, self.action_ids.tolist(), self.view_ids.tolist()))

    def subset(self, indices) -> "DatasetManifest":
        idx = np.asarray(indices, dtype=np.int64)
        return DatasetManifest(
            self.label_space,
            tuple(self.source_ids[i] for i in idx),
            self.action_ids[idx],
            self.view_ids[idx],
            self.origin,
            self.root,
            self.skipped,
        )

    def cell_counts(self) -> np.ndarray:
        counts = np.zeros((self.label_space.A, self.label_space.V), dtype=np.int64)
        np.add.at(counts, (self.action_ids, self.view_ids), 1)
        return counts


# --------------------------------------------------------------------------
# image stores
# --------------------------------------------------------------------------

class ArrayImageStore:
    """In-memory images, shape (N, 3, S, S), float32 in [0, 1]."""

    def __init__(self, keys: Sequence[str], images: np.ndarray):
        images = np.ascontiguousarray(images, dtype=np.float32)
        images.setflags(write=False)
        self.images = images
        self.index = {k: i for i, k in enumerate(keys)}
        if len(self.index) != len(images):
            raise ValueError("keys must be unique and match the image count")

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def batch(self, source_ids: Iterable[str]) -> np.ndarray:
        return self.images[[self.index[s] for s in source_ids]]

    def __getitem__(self, source_id):
        return self.images[self.index[source_id]]


def decode_image(path, size: int) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


class DirectoryImageStore:
    """Decodes files on first access and keeps them in memory."""

    def __init__(self, root, size: int):
        self.root = Path(root)
        self.size = int(size)
        self._cache: dict[str, np.ndarray] = {}

    @property
    def image_size(self) -> int:
        return self.size

    def __getitem__(self, source_id):
        img = self._cache.get(source_id)
        if img is None:
            img = decode_image(self.root / source_id, self.size)
            self._cache[source_id] = img
        return img

    def batch(self, source_ids):
        ids = list(source_ids)
        if not ids:
            return np.zeros((0, 3, self.size, self.size), dtype=np.float32)
        return np.stack([self[s] for s in ids])


# --------------------------------------------------------------------------
# directory ingestion
# --------------------------------------------------------------------------

def _readable(path: Path) -> bool:
    from PIL import Image

    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except Exception:
        return False


def load_manifest(root_path, check_images: bool = True) -> DatasetManifest:
    """Read a ``root/<view>/<action>/<image>`` tree.

    Label names are taken from directory names and sorted with numeric runs
    compared as integers. Files that fail to decode are skipped and listed in
    ``manifest.skipped``.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise NotFound(f"dataset root not found: {root}")
    view_dirs = sorted((p for p in root.iterdir() if p.is_dir()), key=lambda p: natural_key(p.name))
    if not view_dirs:
        raise MalformedLayout(f"{root} has no view directories")
    layout: dict[str, list[Path]] = {}
    for vd in view_dirs:
        action_dirs = [p for p in vd.iterdir() if p.is_dir()]
        if not action_dirs:
            raise MalformedLayout(f"view directory {vd} has no action subdirectories")
        layout[vd.name] = action_dirs
    views = [vd.name for vd in view_dirs]
    actions = sorted({ad.name for ads in layout.values() for ad in ads}, key=natural_key)
    try:
        label_space = LabelSpace(tuple(actions), tuple(views))
    except LabelError as exc:
        raise MalformedLayout(str(exc)) from exc
    a_index = {a: i for i, a in enumerate(actions)}

    ids, a_ids, v_ids, skipped = [], [], [], []
    for v, view in enumerate(views):
        for ad in sorted(layout[view], key=lambda p: natural_key(p.name)):
            for f in sorted(ad.iterdir(), key=lambda p: p.name):
                if not f.is_file() or f.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                rel = f.relative_to(root).as_posix()
                if check_images and not _readable(f):
                    skipped.append(rel)
                    continue
                ids.append(rel)
                a_ids.append(a_index[ad.name])
                v_ids.append(v)
    if skipped:
        log.warning("skipped %d unreadable image(s) under %s", len(skipped), root)
    if not ids:
        raise MalformedLayout(f"{root} contains no readable images")
    return DatasetManifest(label_space, tuple(ids), np.array(a_ids), np.array(v_ids),
                           origin="directory", root=str(root), skipped=tuple(skipped))


def open_store(manifest: DatasetManifest, size: int) -> DirectoryImageStore:
    if manifest.root is None:
        raise ValueError("manifest has no root directory")
    return DirectoryImageStore(manifest.root, size)


# --------------------------------------------------------------------------
# synthetic generator
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    A: int = 6
    V: int = 4
    per_cell: int = 200
    image_size: int = 32
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.A < 2 or self.V < 2:
            raise ConfigError("synth: A and V must be >= 2")
        if self.per_cell < 1:
            raise ConfigError("synth: per_cell must be >= 1")
        if self.image_size < 8:
            raise ConfigError("synth: image_size must be >= 8")
        if not self.noise_sigma >= 0:
            raise ConfigError("synth: noise_sigma must be >= 0")


def _affine(rot_deg: float, tx: float, ty: float, size: int) -> np.ndarray:
    """Rotation about the image centre followed by a translation (dst from src)."""
    c = (size - 1) / 2.0
    t = math.radians(rot_deg)
    cos, sin = math.cos(t), math.sin(t)
    to_origin = np.array([[1, 0, -c], [0, 1, -c], [0, 0, 1]], dtype=np.float64)
    rot = np.array([[cos, -sin, 0], [sin, cos, 0], [0, 0, 1]], dtype=np.float64)
    back = np.array([[1, 0, c + tx], [0, 1, c + ty], [0, 0, 1]], dtype=np.float64)
    return back @ rot @ to_origin


def canonical_action_image(a: int, A: int, size: int) -> np.ndarray:
    """Single-channel action pattern: a blob on a circle plus horizontal stripes."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    theta = 2.0 * math.pi * a / A
    radius = 0.3 * size
    bx, by = c + radius * math.cos(theta), c + radius * math.sin(theta)
    sigma = 0.08 * size
    blob = np.exp(-((xs - bx) ** 2 + (ys - by) ** 2) / (2.0 * sigma ** 2))
    stripes = np.sin(2.0 * math.pi * (a + 1) * (ys + 0.5) / size)
    return 0.3 + 0.7 * blob + 0.2 * stripes


def view_transform(v: int, V: int, size: int) -> np.ndarray:
    return _affine(90.0 * v / V, (v % 2) * 0.1 * size, (v // 2) * 0.1 * size, size)


def clean_image(a: int, v: int, A: int, V: int, size: int) -> np.ndarray:
    """Noise-free rendering of cell (a, v), shape (3, size, size)."""
    base = canonical_action_image(a, A, size)[None]
    warped = kernels.warp_numpy(base, np.linalg.inv(view_transform(v, V, size)), fill=0.0)
    cast = np.asarray(VIEW_COLOR_CASTS[v % len(VIEW_COLOR_CASTS)], dtype=np.float64)
    return np.clip(warped * cast[:, None, None], 0.0, 1.0)


def synth_generate(config: SynthConfig) -> tuple[DatasetManifest, ArrayImageStore]:
    A, V, n, s = config.A, config.V, config.per_cell, config.image_size
    rng = np.random.default_rng(config.seed)
    images = np.empty((A * V * n, 3, s, s), dtype=np.float32)
    ids, a_ids, v_ids = [], [], []
    row = 0
    for v in range(V):
        for a in range(A):
            clean = clean_image(a, v, A, V, s)
            noise = rng.standard_normal((n, 3, s, s)) * config.noise_sigma
            images[row:row + n] = np.clip(clean[None] + noise, 0.0, 1.0)
            for i in range(n):
                ids.append(f"synth/v{v}/a{a}/{i:05d}")
            a_ids += [a] * n
            v_ids += [v] * n
            row += n
    label_space = LabelSpace(tuple(str(a) for a in range(A)), tuple(f"view{v}" for v in range(V)))
    manifest = DatasetManifest(label_space, tuple(ids), np.array(a_ids), np.array(v_ids), origin="synthetic")
    return manifest, ArrayImageStore(ids, images)


def export_png(manifest: DatasetManifest, store, out_dir) -> Path:
    """Dump images as 8-bit PNG in the ``root/<view>/<action>/`` layout."""
    from PIL import Image

    out = Path(out_dir)
    ls = manifest.label_space
    for sid, a, v in manifest.entries:
        d = out / ls.views[v] / ls.actions[a]
        d.mkdir(parents=True, exist_ok=True)
        arr = np.round(np.clip(store[sid], 0, 1) * 255.0).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(arr).save(d / (Path(sid).name + ".png"))
    return out


# --------------------------------------------------------------------------
# leave-one-camera-out
# --------------------------------------------------------------------------

def split_loco(manifest: DatasetManifest, test_view: int, val_fraction: float = 0.25, seed: int = 0):
    """Return (train, val, test); test holds exactly the ``test_view`` entries.

    The remaining entries are split per (action, view) cell so every cell
    keeps the same train/val proportion.
    """
    V = manifest.label_space.V
    if not 0 <= test_view < V:
        raise LabelError(f"test_view {test_view} outside [0, {V})")
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in (0, 1)")
    views = manifest.view_ids
    test_idx = np.flatnonzero(views == test_view)
    if test_idx.size == 0:
        raise EmptyFold(f"view {manifest.label_space.views[test_view]!r} has no entries")
    for v in range(V):
        if v != test_view and not np.any(views == v):
            raise EmptyFold(f"view {manifest.label_space.views[v]!r} has no entries")
    rng = np.random.default_rng(seed)
    train_idx, val_idx = [], []
    for v in range(V):
        if v == test_view:
            continue
        for a in range(manifest.label_space.A):
            cell = np.flatnonzero((views == v) & (manifest.action_ids == a))
            if cell.size == 0:
                continue
            cell = cell[rng.permutation(cell.size)]
            n_val = int(round(val_fraction * cell.size))
            val_idx.append(np.sort(cell[:n_val]))
            train_idx.append(np.sort(cell[n_val:]))
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, np.int64)
    return manifest.subset(cat(train_idx)), manifest.subset(cat(val_idx)), manifest.subset(test_idx)


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    p: float = 0.5
    max_rotation_deg: float = 30.0
    perspective_scale: float = 0.1
    jitter: float = 0.2
    max_hue: float = 0.05
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    erase_area: tuple[float, float] = (0.02, 0.10)
    erase_ratio: tuple[float, float] = (0.3, 3.3)


def homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 matrix mapping the four ``src`` points onto ``dst``."""
    rows, rhs = [], []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs += [u, v]
    h = np.linalg.solve(np.asarray(rows, dtype=np.float64), np.asarray(rhs, dtype=np.float64))
    return np.append(h, 1.0).reshape(3, 3)


_YIQ = np.array([[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]])
_YIQ_INV = np.linalg.inv(_YIQ)
_GRAY = np.array([0.299, 0.587, 0.114])


def _rotate(img, rng, cfg):
    s = img.shape[-1]
    m = _affine(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg), 0.0, 0.0, s)
    return kernels.warp(img, np.linalg.inv(m), 0.0)


def _perspective(img, rng, cfg):
    s = img.shape[-1]
    corners = np.array([[0, 0], [s - 1, 0], [s - 1, s - 1], [0, s - 1]], dtype=np.float64)
    moved = corners + rng.uniform(-1, 1, size=(4, 2)) * cfg.perspective_scale * s
    # output pixel -> source pixel
    return kernels.warp(img, homography(corners, moved), 0.0)


def _color(img, rng, cfg):
    lo, hi = 1.0 - cfg.jitter, 1.0 + cfg.jitter
    contrast, saturation = rng.uniform(lo, hi), rng.uniform(lo, hi)
    hue = rng.uniform(-cfg.max_hue, cfg.max_hue)
    # contrast about the mean gray level, saturation about per-pixel gray,
    # hue as a rotation of the chroma plane in YIQ; composed into one affine map
    t = 2.0 * math.pi * hue
    rot = np.array([[1, 0, 0], [0, math.cos(t), -math.sin(t)], [0, math.sin(t), math.cos(t)]])
    sat = saturation * np.eye(3) + (1.0 - saturation) * np.outer(np.ones(3), _GRAY)
    m = _YIQ_INV @ rot @ _YIQ @ sat
    mean_gray = float(_GRAY @ img.reshape(3, -1).mean(axis=1))
    offset = (1.0 - contrast) * mean_gray * m.sum(axis=1)
    c, h, w = img.shape
    return ((contrast * m) @ img.reshape(3, -1) + offset[:, None]).reshape(c, h, w)


def _blur(img, rng, cfg):
    sigma = rng.uniform(*cfg.blur_sigma)
    k = math.exp(-1.0 / (2.0 * sigma ** 2))
    return kernels.blur3(img, k / (1.0 + 2.0 * k), 1.0 / (1.0 + 2.0 * k))


def _erase(img, rng, cfg):
    c, h, w = img.shape
    area = rng.uniform(*cfg.erase_area) * h * w
    ratio = math.exp(rng.uniform(math.log(cfg.erase_ratio[0]), math.log(cfg.erase_ratio[1])))
    eh = int(min(h, max(1, round(math.sqrt(area * ratio)))))
    ew = int(min(w, max(1, round(math.sqrt(area / ratio)))))
    y0 = int(rng.integers(0, h - eh + 1))
    x0 = int(rng.integers(0, w - ew + 1))
    out = img.copy()
    out[:, y0:y0 + eh, x0:x0 + ew] = rng.random((c, eh, ew))
    return out


_AUG_OPS = (_rotate, _perspective, _color, _blur, _erase)


def augment(image: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Randomly perturb one (3, H, W) image; each op fires with probability ``cfg.p``.

    The five gate draws come first, so a generator whose next five uniforms
    are all >= p returns the input unchanged.
    """
    gates = rng.random(len(_AUG_OPS))
    out = image
    for fire, op in zip(gates < cfg.p, _AUG_OPS):
        if fire:
            out = op(out, rng, cfg)
    if out is image:
        return image
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)
