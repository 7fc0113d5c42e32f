"""Numba vs pure-numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python benchmarks/bench_kernels.py --pipeline # also time a full prune run per backend

The pipeline comparison runs each backend in a subprocess so the
STRUCTPRUNE_DISABLE_NUMBA switch is honoured at import time.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from structprune import kernels


def time_function(func, *args, iterations=20, warmup=2):
    for _ in range(warmup):
        func(*args)
    times = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def jacobi_case(n):
    A = np.random.default_rng(n).normal(size=(n, n))
    S = A + A.T
    pairs = kernels.round_robin_pairs(n)
    tol = 1e-10 * np.linalg.norm(S)

    def run(fn):
        fn(S.copy(), np.eye(n), pairs, tol, 100)

    return run


def xoshiro_case(n):
    state = kernels.splitmix64_seed(1)
    out = np.empty(n, dtype=np.uint64)

    def run(fn):
        fn(state, out)

    return run


def pearson_case(n):
    base, drop, add, full = np.random.default_rng(2).normal(size=(4, n))

    def run(fn):
        fn(base, drop, add, full)

    return run


CASES = [
    ("jacobi 16x16", jacobi_case(16), kernels.jacobi_rotate_numba, kernels.jacobi_rotate_numpy),
    ("jacobi 64x64", jacobi_case(64), kernels.jacobi_rotate_numba, kernels.jacobi_rotate_numpy),
    ("xoshiro 1e5 draws", xoshiro_case(100_000), kernels.xoshiro_fill_numba, kernels.xoshiro_fill_numpy),
    ("pearson swap 4096x64", pearson_case(4096 * 64), kernels.pearson_swap_numba, kernels.pearson_swap_numpy),
]

PIPELINE = r"""
import time, numpy as np
from structprune import kernels
from structprune.calibration import sample_calibration
from structprune.model import ModelConfig
from structprune.model_io import gen_toy_model
from structprune.pruner import prune_pipeline
m = gen_toy_model(ModelConfig(n_layers=4, d_model=64, n_heads=8, d_head=8, d_ff=256, vocab_size=257), 42)
cal = sample_calibration(np.random.default_rng(0).integers(0, 257, 20000))
prune_pipeline(m, cal, 0.5, skip="none")  # warm-up / compile
t0 = time.perf_counter()
prune_pipeline(m, cal, 0.5, skip="none")
print(kernels.BACKEND, time.perf_counter() - t0)
"""


def bench_pipeline():
    for disable in ("0", "1"):
        env = dict(os.environ, STRUCTPRUNE_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", PIPELINE], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        print(f"{'prune pipeline (ratio 0.5)':28s} {backend:6s} {float(secs) * 1e3:10.1f} ms")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--pipeline", action="store_true")
    args = p.parse_args()

    if not kernels.HAVE_NUMBA:
        print("numba is not installed; only the numpy kernels can be timed")
    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, case, fast, slow in CASES:
        t_np = time_function(case, slow, iterations=args.iterations)
        if kernels.HAVE_NUMBA:
            t_nb = time_function(case, fast, iterations=args.iterations)
            print(f"{name:28s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:28s} {'-':>10s} {t_np * 1e3:10.3f}")
    if args.pipeline:
        bench_pipeline()


if __name__ == "__main__":
    main()
