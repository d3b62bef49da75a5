"""Benchmark the compiled message kernel against the pure-numpy twin.

Usage:  python3 benchmarks/bench_lbp.py [--mentions 64] [--candidates 30]
        [--loops 10] [--repeats 5]

The two paths are the ones selected by TYPELINK_NUMBA at import time; this
script calls both explicitly and checks they agree on every instance.
"""
import argparse
import time

import numpy as np

from typelink import kernels
from typelink.crf import _pad


def make_instance(rng: np.random.Generator, n: int, l: int, dim: int):
    unary = [rng.normal(size=l) for _ in range(n)]
    vecs = [rng.normal(0.0, 1.0 / np.sqrt(dim), size=(l, dim)) for _ in range(n)]
    diag = rng.normal(size=dim)
    return _pad(unary, vecs, diag)


def time_path(fn, upad, phi, nvalid, damping, loops, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(upad, phi, nvalid, damping, loops)
        best = min(best, time.perf_counter() - start)
    return best, out


def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--mentions", type=int, default=64)
    parser.add_argument("--candidates", type=int, default=30)
    parser.add_argument("--dim", type=int, default=300)
    parser.add_argument("--loops", type=int, default=10)
    parser.add_argument("--damping", type=float, default=0.5)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    upad, _, phi, nvalid = make_instance(rng, args.mentions, args.candidates, args.dim)
    print(f"instance: {args.mentions} mentions x {args.candidates} candidates, "
          f"{args.loops} loops, damping {args.damping}")
    print(f"phi tensor: {phi.nbytes / 1e6:.1f} MB")

    t_np, out_np = time_path(kernels.lbp_rounds_numpy, upad, phi, nvalid,
                             args.damping, args.loops, args.repeats)
    print(f"numpy : {t_np * 1e3:9.2f} ms")

    if kernels._HAVE_NUMBA:
        # first call pays compilation; time it separately
        start = time.perf_counter()
        kernels.lbp_rounds_numba(upad, phi, nvalid, args.damping, args.loops)
        compile_s = time.perf_counter() - start
        t_nb, out_nb = time_path(kernels.lbp_rounds_numba, upad, phi, nvalid,
                                 args.damping, args.loops, args.repeats)
        print(f"numba : {t_nb * 1e3:9.2f} ms   (first call incl. compile: "
              f"{compile_s * 1e3:.0f} ms)")
        print(f"speedup: {t_np / t_nb:.2f}x")
        agree = np.allclose(out_np[0], out_nb[0], atol=1e-10)
        print(f"paths agree: {agree}")
        if not agree:
            raise SystemExit(1)
    else:
        print("numba : unavailable (install numba or unset TYPELINK_NUMBA=0)")


if __name__ == "__main__":
    main()
