#!/usr/bin/env python3
"""Benchmark the compiled propagation kernel against the numpy fallback.

Times the two hot paths (whole-pulse propagators and the adjoint-gradient
chain) on the paper-scale mirror problem: 220 segments, a 10-state basis,
a 32-sample noise batch.  Run after `pip install -e .`:

    python3 benchmarks/bench_kernels.py [--segments N] [--batch S] [--dim D]
"""
import argparse
import time

import numpy as np

from bragg_forge._kernels import numpy_backend

try:
    from bragg_forge._kernels import _cy_core
except ImportError:
    _cy_core = None


def problem(rng, batch, segments, dim):
    diag = rng.normal(scale=2e5, size=(batch, segments, dim))
    offdiag = rng.normal(scale=1e5, size=(batch, segments, dim - 1)) + 1j * rng.normal(
        scale=1e5, size=(batch, segments, dim - 1)
    )
    kmat = rng.normal(size=(batch, dim, dim)) + 1j * rng.normal(size=(batch, dim, dim))
    return diag, offdiag, kmat


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--segments", type=int, default=220)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--dim", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    diag, offdiag, kmat = problem(rng, args.batch, args.segments, args.dim)
    dt = 1e-6

    backends = [("python", numpy_backend)]
    if _cy_core is not None:
        backends.append(("cython", _cy_core))
    else:
        print("compiled kernel unavailable; timing the fallback only")

    print(
        f"problem: batch={args.batch} segments={args.segments} dim={args.dim} "
        f"(one robust-mirror cost/gradient evaluation)"
    )
    header = f"{'kernel':28s}" + "".join(f"{name:>12s}" for name, _ in backends)
    print(header)
    results = {}
    for label, call in (
        ("total_unitaries", lambda b: b.total_unitaries(diag, offdiag, dt)),
        ("chain_with_adjoint", lambda b: b.chain_with_adjoint(diag, offdiag, dt, kmat)),
    ):
        row = f"{label:28s}"
        for name, backend in backends:
            elapsed = timeit(call, backend, repeats=args.repeats)
            results[(label, name)] = elapsed
            row += f"{elapsed * 1e3:10.2f}ms"
        print(row)
    if _cy_core is not None:
        for label in ("total_unitaries", "chain_with_adjoint"):
            speedup = results[(label, "python")] / results[(label, "cython")]
            print(f"{label}: compiled speedup {speedup:.2f}x")
        ref = numpy_backend.total_unitaries(diag, offdiag, dt)
        fast = _cy_core.total_unitaries(diag, offdiag, dt)
        print(f"cross-backend max deviation: {np.abs(ref - fast).max():.3e}")


if __name__ == "__main__":
    main()
