import numpy as np
import pytest

from crossview.dataset import DatasetManifest, LabelSpace, SynthConfig, synth_generate
from crossview.model import ArchConfig

_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def tiny_data():
    return synth_generate(SynthConfig(A=4, V=3, per_cell=2, image_size=8, seed=1))


@pytest.fixture(scope="session")
def tiny_arch():
    return ArchConfig(A=4, V=3, input_size=8, channels=(4, 8, 8))


@pytest.fixture(scope="session")
def grid_data():
    """Full 6x4 grid, 5 samples per cell, 8x8 images."""
    return synth_generate(SynthConfig(A=6, V=4, per_cell=5, image_size=8, seed=3))


def make_manifest(cells, A=6, V=4):
    """Manifest with ``cells[(a, v)]`` entries per cell (no images)."""
    ids, a_ids, v_ids = [], [], []
    for (a, v), n in sorted(cells.items()):
        for i in range(n):
            ids.append(f"a{a}/v{v}/{i}")
            a_ids.append(a)
            v_ids.append(v)
    ls = LabelSpace(tuple(str(a) for a in range(A)), tuple(f"view{v}" for v in range(V)))
    return DatasetManifest(ls, tuple(ids), np.array(a_ids, dtype=np.int64), np.array(v_ids, dtype=np.int64))


@pytest.fixture(scope="session")
def small_run():
    """A converged small model: (checkpoint, train, val, test, full manifest, store)."""
    from dataclasses import replace

    from crossview.dataset import split_loco
    from crossview.trainer import PRESETS, train

    m, store = synth_generate(SynthConfig(A=4, V=3, per_cell=10, image_size=16, seed=2))
    tr, va, te = split_loco(m, 2, 0.25, 0)
    cfg = replace(PRESETS["tiny"], epochs=10, batch_size=8, input_size=16, channels=(8, 16, 16), lr=0.05)
    ckpt, _ = train(cfg, tr, va, store)
    return ckpt, tr, va, te, m, store
