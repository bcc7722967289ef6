"""Compare the compiled and numpy GRU scan kernels.

    python3 benchmarks/bench_kernels.py [--hidden 64 128 256] [--repeat 5]

Reports best-of-N wall time for one forward and one backward scan over a
(T, B, 3H) pre-projected input, plus one full training step of a model.
"""
import argparse
import time

import numpy as np

from predict_cluster import kernels
from predict_cluster.model import ModelDims, backward, init_params


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def bench_scan(H, T, B, backend, repeat):
    rng = np.random.default_rng(0)
    xproj = rng.normal(0, 0.5, (T, B, 3 * H))
    U = rng.uniform(-1, 1, (3 * H, H)) / np.sqrt(H)
    h0 = np.zeros((B, H))
    mask = np.ones((T, B))
    hs, cache = kernels.scan_forward(xproj, U, h0, mask, backend=backend)
    dhs = rng.normal(size=hs.shape)
    fwd = best_of(lambda: kernels.scan_forward(xproj, U, h0, mask, backend=backend), repeat)
    bwd = best_of(lambda: kernels.scan_backward(dhs, U, cache, mask, backend=backend), repeat)
    return fwd, bwd


def bench_step(H, T, B, backend, repeat, J=15):
    m = init_params(ModelDims(input_dim=3 * J, hidden=H), 0)
    m.backend = backend
    X = np.random.default_rng(1).uniform(-1, 1, (B, T, 3 * J))
    return best_of(lambda: backward(m, X), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--hidden", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--frames", type=int, default=50)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if kernels.has_compiled() else [])
    if len(backends) == 1:
        print("compiled kernel not available; timing the numpy fallback only")
    print(f"T={args.frames} B={args.batch}, best of {args.repeat}")
    print(f"{'H':>5} {'backend':>8} {'scan fwd':>10} {'scan bwd':>10} {'train step':>11}")
    for H in args.hidden:
        times = {}
        for be in backends:
            f, b = bench_scan(H, args.frames, args.batch, be, args.repeat)
            s = bench_step(H, args.frames, args.batch, be, max(1, args.repeat // 2))
            times[be] = (f, b, s)
            print(f"{H:>5} {be:>8} {f * 1e3:>8.2f}ms {b * 1e3:>8.2f}ms {s * 1e3:>9.1f}ms")
        if "cython" in times:
            sp = [p / c for p, c in zip(times["python"], times["cython"])]
            print(f"{'':>5} {'speedup':>8} {sp[0]:>9.2f}x {sp[1]:>9.2f}x {sp[2]:>10.2f}x")


if __name__ == "__main__":
    main()
