"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from trajseg import _kernels_py as pure
from trajseg.kernels import compiled


def cases(rng: np.random.Generator) -> dict:
    mask = rng.random((480, 854)) < 0.02
    points = rng.uniform(0, 100, size=(400, 2))
    cost = rng.random((40, 40))
    big = np.zeros((480, 854), dtype=bool)
    big[100:300, 200:600] = True
    counts = pure.rle_encode(big)
    return {
        "dilate_disk r=8 480x854": lambda m: m.dilate_disk(mask, 8),
        "knn_mean_distance n=400 k=8": lambda m: m.knn_mean_distance(points, 8),
        "linear_sum_assignment 40x40": lambda m: m.linear_sum_assignment(cost),
        "rle_encode 480x854": lambda m: m.rle_encode(big),
        "rle_decode 480x854": lambda m: m.rle_decode(counts, big.shape),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = min(timeit.repeat(lambda: fn(pure), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:7.1f}x")


if __name__ == "__main__":
    main()
