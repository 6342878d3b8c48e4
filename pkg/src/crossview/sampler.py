"""Triplet batches: (anchor, same view / other action, same action / other view)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import DatasetManifest
from .errors import Unsampleable


@dataclass(frozen=True)
class Triplet:
    anchor: int
    same_view: int
    same_action: int


@dataclass
class Diagnostic:
    """Why a manifest cannot yield triplets. Empty means sampleable."""

    views_lacking_actions: list[int] = field(default_factory=list)
    actions_lacking_views: list[int] = field(default_factory=list)
    cells: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.views_lacking_actions or self.actions_lacking_views)

    def __str__(self):
        parts = []
        if self.actions_lacking_views:
            parts.append(f"actions seen in < 2 views: {self.actions_lacking_views}")
        if self.views_lacking_actions:
            parts.append(f"views with < 2 actions: {self.views_lacking_actions}")
        return "; ".join(parts) or "ok"


@dataclass
class TripletBatch:
    """Manifest row indices for each member; ``rng_checkpoint`` is the
    generator state right after the batch was drawn."""

    anchor: np.ndarray
    same_view: np.ndarray
    same_action: np.ndarray
    rng_checkpoint: dict

    def __len__(self):
        return len(self.anchor)

    @property
    def triplets(self) -> list[Triplet]:
        return [Triplet(int(a), int(v), int(s)) for a, v, s in zip(self.anchor, self.same_view, self.same_action)]

    def stacked(self) -> np.ndarray:
        """Row indices in forward order: anchors, then same-view, then same-action."""
        return np.concatenate([self.anchor, self.same_view, self.same_action])


def validate_sampleability(manifest: DatasetManifest) -> Diagnostic:
    counts = manifest.cell_counts() > 0
    A, V = counts.shape
    diag = Diagnostic()
    present_views = counts.any(axis=0)
    present_actions = counts.any(axis=1)
    for v in range(V):
        if present_views[v] and counts[:, v].sum() < 2:
            diag.views_lacking_actions.append(v)
            diag.cells += [(a, v) for a in np.flatnonzero(counts[:, v]).tolist()]
    for a in range(A):
        if present_actions[a] and counts[a].sum() < 2:
            diag.actions_lacking_views.append(a)
            diag.cells += [(a, v) for v in np.flatnonzero(counts[a]).tolist()]
    if not len(manifest):
        diag.views_lacking_actions = list(range(V))
        diag.actions_lacking_views = list(range(A))
    diag.cells = sorted(set(diag.cells))
    return diag


class TripletSampler:
    """Draws triplet batches with replacement.

    Anchors are uniform over entries by default; with ``balance_actions`` the
    anchor's action is drawn uniformly first, then an entry of that action.
    """

    def __init__(self, manifest: DatasetManifest, seed=0, balance_actions: bool = False):
        diag = validate_sampleability(manifest)
        if not diag.ok:
            raise Unsampleable(diag)
        self.manifest = manifest
        self.balance_actions = balance_actions
        self.rng = np.random.default_rng(seed)
        a, v = manifest.action_ids, manifest.view_ids
        A, V = manifest.label_space.A, manifest.label_space.V
        # rows sorted by (action, view) and by (view, action) with cell offsets
        # let every "other-label" pool be a contiguous range minus one cell
        self._by_av = np.lexsort((v, a))
        self._by_va = np.lexsort((a, v))
        counts = manifest.cell_counts()
        self._counts = counts
        self._action_start = np.concatenate([[0], np.cumsum(counts.sum(axis=1))])
        self._view_start = np.concatenate([[0], np.cumsum(counts.sum(axis=0))])
        # offset of cell (a, v) inside action a's block / view v's block
        self._off_in_action = np.concatenate([np.zeros((A, 1), np.int64), np.cumsum(counts, axis=1)[:, :-1]], axis=1)
        self._off_in_view = np.concatenate([np.zeros((1, V), np.int64), np.cumsum(counts, axis=0)[:-1]], axis=0)
        self._actions_present = np.flatnonzero(counts.sum(axis=1))

    def _pick_excluding(self, order, block_start, block_size, hole_start, hole_size, u):
        """Uniform pick from a block of ``order`` with one sub-range removed."""
        j = np.floor(u * (block_size - hole_size)).astype(np.int64)
        j = np.where(j >= hole_start, j + hole_size, j)
        return order[block_start + j]

    def sample(self, batch_size: int) -> TripletBatch:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        rng = self.rng
        m = self.manifest
        n = len(m)
        if self.balance_actions:
            acts = self._actions_present[rng.integers(0, len(self._actions_present), batch_size)]
            sizes = self._counts.sum(axis=1)[acts]
            j = np.floor(rng.random(batch_size) * sizes).astype(np.int64)
            anchor = self._by_av[self._action_start[acts] + j]
        else:
            anchor = rng.integers(0, n, batch_size)
        a = m.action_ids[anchor]
        v = m.view_ids[anchor]
        u = rng.random((2, batch_size))
        cell = self._counts[a, v]
        same_view = self._pick_excluding(
            self._by_va, self._view_start[v], self._counts[:, :].sum(axis=0)[v],
            self._off_in_view[a, v], cell, u[0])
        same_action = self._pick_excluding(
            self._by_av, self._action_start[a], self._counts.sum(axis=1)[a],
            self._off_in_action[a, v], cell, u[1])
        return TripletBatch(anchor, same_view, same_action, rng.bit_generator.state)


def build_triplet_batch(manifest: DatasetManifest, batch_size: int, rng_state=0, balance_actions=False) -> TripletBatch:
    """One-shot helper; ``rng_state`` is a seed or a bit-generator state dict."""
    sampler = TripletSampler(manifest, seed=0, balance_actions=balance_actions)
    if isinstance(rng_state, dict):
        sampler.rng.bit_generator.state = rng_state
    else:
        sampler.rng = np.random.default_rng(rng_state)
    return sampler.sample(batch_size)
