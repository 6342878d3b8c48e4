"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes match the default model: 32x32 inputs, 3x3 stride-2 convolutions,
64-dim features.
"""
import argparse
import timeit

import numpy as np

from crossview import kernels
from crossview._accel import HAVE_NUMBA


def cases(rng):
    x = rng.random((192, 3, 32, 32)).astype(np.float32)
    cols = kernels.im2col_numpy(x, 3, 2, 1)
    img = rng.random((3, 32, 32))
    m = np.array([[0.95, -0.1, 2.0], [0.12, 1.02, -1.0], [1e-3, -2e-3, 1.0]])
    feats, cents = rng.standard_normal((1800, 64)), rng.standard_normal((4, 64))
    return {
        "im2col (192x3x32x32)": ("im2col", (x, 3, 2, 1)),
        "col2im (192x3x32x32)": ("col2im", (cols, x.shape, 3, 2, 1)),
        "warp (3x32x32)": ("warp", (img, m, 0.0)),
        "blur3 (3x32x32)": ("blur3", (img, 0.2, 0.6)),
        "sq_dists (1800x64 vs 4)": ("sq_dists", (feats, cents)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, (name, call_args) in cases(rng).items():
        f_np = getattr(kernels, f"{name}_numpy")
        f_nb = getattr(kernels, f"{name}_numba")
        np.testing.assert_allclose(f_nb(*call_args), f_np(*call_args), rtol=1e-5, atol=1e-6)  # also compiles
        t_np = min(timeit.repeat(lambda: f_np(*call_args), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*call_args), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:28s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
