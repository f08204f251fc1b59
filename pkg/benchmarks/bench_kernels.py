"""Compiled vs numpy kernels on the workloads the tests and training loop hit.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from tryonvid import _kernels_py

try:
    from tryonvid import _ckernels
except ImportError:
    _ckernels = None


def workloads(rng):
    small = rng.uniform(0, 1, (8, 48))
    small_mask = np.zeros((8, 48), dtype=bool)
    small_mask[:, 10:30] = True
    big = rng.uniform(0, 1, (16, 228))
    big_mask = np.zeros((16, 228), dtype=bool)
    big_mask[:, :107] = True
    poses = np.cumsum(rng.normal(0, 0.02, (32, 64 * 48 * 3)), axis=0)
    long_poses = np.cumsum(rng.normal(0, 0.02, (256, 32 * 24 * 3)), axis=0)
    return {
        "agn_loss_grad 8x48": lambda k: k.agn_loss_grad(small, small_mask, 0.01, True, True),
        "agn_loss_grad 16x228": lambda k: k.agn_loss_grad(big, big_mask, 0.01, True, True),
        "agn_loss init 16x228": lambda k: k.agn_loss_grad(big, big_mask, 0.01, False, False),
        "rms_distance 64x48x3": lambda k: k.rms_distance(poses[0], poses[1]),
        "greedy_keyframes F=32": lambda k: k.greedy_keyframes(poses, 0.05, 6),
        "greedy_keyframes F=256": lambda k: k.greedy_keyframes(long_poses, 0.05, 8),
    }


def bench(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'workload':<26}{'numpy (us)':>12}{'cython (us)':>13}{'speedup':>9}")
    for name, call in workloads(rng).items():
        py = bench(lambda: call(_kernels_py), args.repeat)
        cy = bench(lambda: call(_ckernels), args.repeat) if _ckernels else float("nan")
        rows.append({"workload": name, "python_s": py, "cython_s": cy})
        print(f"{name:<26}{py * 1e6:>12.1f}{cy * 1e6:>13.1f}{py / cy:>8.1f}x")
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend was timed")
    if args.json:
        with open(args.json, "w") as f:
            json.dump(rows, f, indent=2)


if __name__ == "__main__":
    main()
