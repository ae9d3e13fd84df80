"""Compare the compiled kernels with the numpy fallback, and THA with a full fit.

    python benchmarks/bench_kernels.py [--repeat 5] [--skip-fit]

Kernel timings are best-of-``repeat`` wall clock. The fit comparison trains
one full MVMALS model at p=24 (M=1, d=2) and a THA ensemble of K=8 heads of
k=6 inputs on the same data.
"""
import argparse
import time

import numpy as np

from thavolt import _backend
from thavolt.ensemble import select_subsets, train_heads
from thavolt.features import SystemConfig
from thavolt.mvmals import SolverConfig, fit
from thavolt.synth import generate


def best_of(fn, repeat):
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def kernel_cases(rng):
    N, q, r, s, l = 2000, 25, 4, 4, 2
    X = rng.standard_normal((N, q))
    L = rng.standard_normal((N, l, r))
    core = rng.standard_normal((r, q, s))
    R = rng.standard_normal((N, s))
    Xk = rng.standard_normal((500, 40))
    return {
        "kernel_matrix N=500 q=40 d=3": lambda k: k.kernel_matrix(Xk, 3, 1 / 500),
        "chain_left N=2000 q=25 r=4": lambda k: k.chain_left(L, X, core),
        "chain_right N=2000 q=25 r=4": lambda k: k.chain_right(X, core, R),
        "local_design N=2000 q=25 r=4": lambda k: k.local_design(L, X, R),
        "row_kron N=2000 25x25": lambda k: k.row_kron(X, X),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    backends = ["python"]
    try:
        _backend.kernels("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in backends) + "     speedup")
    for name, fn in kernel_cases(rng).items():
        times = [best_of(lambda: fn(_backend.kernels(b)), repeat) for b in backends]
        row = f"{name:34s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:8.2f}x"
        print(row)


def bench_fit():
    cfg = SystemConfig(p=24, M=1, d=2, l=1)
    bm = generate(cfg, {"train": 2000}, ranks=(2,), snr_db=20, seed=0)
    data = bm.splits["train"]
    sol = SolverConfig(max_rank=4, max_sweeps=5)
    t0 = time.perf_counter()
    fit(data, cfg, sol)
    t_full = time.perf_counter() - t0
    plan = select_subsets(24, 8, 6, "uniform-random", seed=0)
    t0 = time.perf_counter()
    train_heads(data, plan, cfg, sol)
    t_tha = time.perf_counter() - t0
    print(f"full fit p=24: {t_full:.3f}s   THA K=8 k=6: {t_tha:.3f}s   "
          f"ratio {t_tha / t_full:.3f}")
    return t_full, t_tha


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args()
    print(f"active backend: {_backend.BACKEND}")
    bench_kernels(args.repeat)
    if not args.skip_fit:
        bench_fit()


if __name__ == "__main__":
    main()
