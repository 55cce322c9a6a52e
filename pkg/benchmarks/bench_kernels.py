"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--quick]

Each row times one operation under both backends (best of N runs) and
prints the speedup of the compiled core over the fallback.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from muon8 import linalg, quant
from muon8._backend import BACKENDS


def cases(quick: bool):
    rng = np.random.default_rng(0)
    sizes = [(64, 32), (128, 128)] if not quick else [(64, 32)]
    for m, n in sizes:
        a = rng.standard_normal((m, n))
        b = rng.standard_normal((n, m))
        yield f"matmul {m}x{n}@{n}x{m}", lambda a=a, b=b: linalg.matmul(a, b)
        yield f"thin_svd {m}x{n}", lambda a=a: linalg.thin_svd(a)
        yield f"newton_schulz {m}x{n}", lambda a=a: linalg.newton_schulz(a)
    n_elem = 1 << 20 if not quick else 1 << 16
    x = rng.standard_normal(n_elem)
    for mode in quant.MODES:
        qb = quant.quantize_tensor(x, 2048, mode)
        yield f"quantize {mode} n={n_elem}", lambda mode=mode: quant.quantize_tensor(x, 2048, mode)
        yield f"dequantize {mode} n={n_elem}", lambda qb=qb: quant.dequantize_tensor(qb)


def run(repeat: int, quick: bool) -> list[tuple[str, dict]]:
    results = []
    for name, fn in cases(quick):
        row = {}
        for backend, k in sorted(BACKENDS.items()):
            linalg.kernels = quant.kernels = k
            number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-6)))
            row[backend] = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
        results.append((name, row))
    return results


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--quick", action="store_true", help="small inputs only")
    args = p.parse_args(argv)
    saved = linalg.kernels
    try:
        results = run(args.repeat, args.quick)
    finally:
        linalg.kernels = quant.kernels = saved
    backends = sorted(BACKENDS)
    print(f"{'operation':32s}" + "".join(f"{b:>14s}" for b in backends) + (
        f"{'speedup':>10s}" if "cython" in BACKENDS else ""))
    for name, row in results:
        line = f"{name:32s}" + "".join(f"{row[b] * 1e3:12.3f}ms" for b in backends)
        if "cython" in row:
            line += f"{row['python'] / row['cython']:9.1f}x"
        print(line)
    if "cython" not in BACKENDS:
        print("compiled extension not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
