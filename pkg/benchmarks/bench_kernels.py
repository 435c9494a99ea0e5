"""Timing of the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are called through :mod:`phaseless.kernels` with an explicit
``impl`` so that one process compares them on identical inputs.  Results are
also cross-checked; a mismatch above 1e-10 (relative) aborts the run.
"""

import argparse
import sys
import timeit

import numpy as np

from phaseless import _ndft_py, kernels

try:
    from phaseless import _ndft_core
except ImportError:
    _ndft_core = None


def cases(rng):
    for N, P in ((32, 2_000), (64, 8_000), (100, 20_000)):
        x = -1 + 2 * np.arange(N) / N
        f = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        pts = rng.uniform(-2 * np.pi, 2 * np.pi, (P, 2))
        g = rng.standard_normal(P) + 1j * rng.standard_normal(P)
        yield f"ndft_sum N={N} P={P}", lambda impl, f=f, x=x, p=pts: kernels.ndft_sum(f, x, p, impl)
        yield f"ndft_adjoint N={N} P={P}", lambda impl, g=g, x=x, p=pts: kernels.ndft_adjoint_sum(g, x, p, impl)
    for S, Q in ((500, 40_000), (2_000, 160_000)):
        sites = rng.uniform(-1, 1, (S, 2))
        probes = rng.uniform(-1, 1, (Q, 2))
        yield f"nearest_site S={S} Q={Q}", lambda impl, a=probes, s=sites: kernels.nearest_site(a, s, impl)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _ndft_core is None:
        print("compiled extension not built; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, fn in cases(rng):
        a, b = fn(_ndft_py), fn(_ndft_core)
        if np.issubdtype(np.asarray(a).dtype, np.integer):
            ok = np.array_equal(a, b)
        else:
            ok = np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)
        if not ok:
            print(f"{name}: backends disagree", file=sys.stderr)
            return 2
        tp = min(timeit.repeat(lambda: fn(_ndft_py), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fn(_ndft_core), number=1, repeat=args.repeat))
        print(f"{name:32s} {tp:11.4f} {tc:13.4f} {tp / tc:8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
