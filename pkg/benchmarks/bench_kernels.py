"""Time the numba kernels against their numpy counterparts.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each kernel is called once before timing so numba compilation is excluded,
and both backends are checked to agree before they are timed. With numba
missing or disabled (``MD2I_NO_NUMBA=1``) the ``_nb`` functions run as plain
Python and the comparison shows the interpreter cost instead.
"""
import argparse
import timeit

import numpy as np

from md2i import kernels
from md2i._accel import backend


def cases(scale, rng):
    n = max(8, int(256 * scale))
    A = rng.normal(size=(n, 117))
    B = rng.normal(size=(n, 117)) + 0.3
    images = rng.uniform(size=(max(4, int(200 * scale)), 784))
    tops = rng.integers(0, 16, images.shape[0])
    lefts = rng.integers(0, 16, images.shape[0])
    return [
        ("sq_dists", kernels.sq_dists_np, kernels.sq_dists_nb, (A, B)),
        ("mmd2_grad", kernels.mmd2_grad_np, kernels.mmd2_grad_nb, (A, B, 10.0)),
        ("rotate_images", kernels.rotate_images_np, kernels.rotate_images_nb, (images, 28, 30.0)),
        ("patch_mask", kernels.patch_mask_np, kernels.patch_mask_nb, (images.shape[0], 28, 13, tops, lefts)),
    ]


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-9, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timed calls per kernel (best is reported)")
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"active backend: {backend()}")
    print(f"{'kernel':14s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, f_np, f_nb, inputs in cases(args.scale, rng):
        if not _agree(f_np(*inputs), f_nb(*inputs)):
            raise SystemExit(f"{name}: backends disagree")
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat))
        print(f"{name:14s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
