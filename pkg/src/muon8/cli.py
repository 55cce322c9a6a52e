"""``muon8`` command-line front end.

Exit codes: 0 success, 2 usage/config error, 3 divergence, 4 bound violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from . import bounds, memory, quant
from ._rng import rng_stream
from .config import load_config
from .errors import ConfigError, DivergenceError
from .testbed import train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_VIOLATION = 4

BOUNDS_HEADER = ["theorem", "trials", "empirical", "bound", "satisfied"]
MEMORY_HEADER = ["model", "variant", "muon_gib", "adamw_gib", "overhead_gib", "total_gib",
                 "pct_vs_adamw32", "pct_vs_muon32"]
QUANT_HEADER = ["dist", "n", "block", "mode", "max_abs_err", "mean_abs_err", "max_rel_err_nonzero"]

# default trial counts and problem sizes for each theorem
DEFAULT_TRIALS = {"1": 10_000, "2": 10_000, "3": 1000}


def _f(x: float) -> str:
    return repr(float(x))


def _writer(stream=None):
    return csv.writer(stream or sys.stdout, lineterminator="\n")


def cmd_train(args) -> int:
    try:
        cfg = load_config(args.config)
        tc = cfg.train_config()
    except ConfigError as exc:
        print(f"muon8 train: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        res = train(tc)
    except DivergenceError as exc:
        print(f"muon8 train: {exc} (curve written to {tc.csv_path})", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"final_loss={_f(res.final_loss)} steps={tc.steps} wallclock={res.wallclock:.3f}s", file=sys.stderr)
    return EXIT_OK


def _run_theorem(which: str, trials: int, seed: int) -> bounds.BoundReport:
    if which == "1":
        spec = bounds.AdvGradientSpec(d=4096, nu=0.5, g_inf=1.0, eps=1e-8, seed=seed)
        rep = bounds.verify_adam_lower_bound(spec, alpha=1e-3, trials=trials)
        rep.satisfied = rep.satisfied and rep.detail["band_violations"] == 0
        return rep
    if which == "2":
        return bounds.verify_sgd_bound(d=1024, eta=0.1, rho=0.9, trials=trials, seed=seed)
    return bounds.verify_muon_bound(32, 16, alpha=0.02, beta=0.95, trials=trials, seed=seed)


def cmd_verify_bounds(args) -> int:
    trials = args.trials if args.trials is not None else args.trials_pos
    seed = args.seed if args.seed is not None else (args.seed_pos if args.seed_pos is not None else 0)
    if trials is not None and trials < 1:
        print("muon8 verify-bounds: trials must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    which = ["1", "2", "3"] if args.which == "all" else [args.which]
    reports = []
    for th in which:
        n = trials if trials is not None else DEFAULT_TRIALS[th]
        try:
            reports.append((th, _run_theorem(th, n, seed)))
        except ValueError as exc:
            print(f"muon8 verify-bounds: theorem {th}: {exc}", file=sys.stderr)
            return EXIT_USAGE
    w = _writer()
    w.writerow(BOUNDS_HEADER)
    for th, rep in reports:
        w.writerow([f"thm{th}", rep.trials, _f(rep.empirical), _f(rep.bound), str(rep.satisfied).lower()])
    for th, rep in reports:
        extra = "".join(f" {k}={v}" for k, v in rep.detail.items())
        print(f"thm{th} satisfied={str(rep.satisfied).lower()}{extra}", file=sys.stderr)
    return EXIT_OK if all(r.satisfied for _, r in reports) else EXIT_VIOLATION


def cmd_memory(args) -> int:
    part = memory.gpt_param_census(memory.PRESETS[args.model])
    w = _writer()
    w.writerow(MEMORY_HEADER)
    for row in memory.savings_report(part, args.block):
        b = row.budget
        w.writerow([args.model, row.variant, _f(b.muon_bytes / memory.GIB), _f(b.adamw_bytes / memory.GIB),
                    _f(b.overhead_bytes / memory.GIB), _f(b.total_gib), _f(row.pct_vs_adamw32),
                    _f(row.pct_vs_muon32)])
    return EXIT_OK


def sample_tensor(dist: str, n: int, std: float, seed: int) -> np.ndarray:
    rng = rng_stream(seed, "quantize-analyze")
    if dist == "gaussian":
        return std * rng.standard_normal(n)
    # log-uniform magnitudes over six decades with random signs
    mags = 10.0 ** rng.uniform(-6.0, 0.0, size=n)
    return std * np.where(rng.random(n) < 0.5, -mags, mags)


def cmd_quantize_analyze(args) -> int:
    if args.n < 1 or args.block < 1 or args.std < 0:
        print("muon8 quantize-analyze: --n and --block must be >= 1, --std >= 0", file=sys.stderr)
        return EXIT_USAGE
    x = sample_tensor(args.dist, args.n, args.std, args.seed)
    stats = quant.roundtrip_error_stats(x, args.block, args.mode)
    if args.file:
        quant.write_buffer(args.file, quant.quantize_tensor(x, args.block, args.mode))
    w = _writer()
    w.writerow(QUANT_HEADER)
    w.writerow([args.dist, args.n, args.block, args.mode] + [_f(v) for v in stats])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="muon8", description="8-bit Muon optimizer toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training config and write its loss curve CSV")
    t.add_argument("config")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("verify-bounds", help="Monte Carlo check of the quantization error bounds")
    b.add_argument("which", choices=["1", "2", "3", "all"])
    b.add_argument("trials_pos", nargs="?", type=int, metavar="trials")
    b.add_argument("seed_pos", nargs="?", type=int, metavar="seed")
    b.add_argument("--trials", type=int)
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_verify_bounds)

    m = sub.add_parser("memory", help="optimizer-state memory table for a GPT preset")
    m.add_argument("model", choices=sorted(memory.PRESETS))
    m.add_argument("--block", type=int, default=2048)
    m.set_defaults(func=cmd_memory)

    q = sub.add_parser("quantize-analyze", help="round-trip error of blockwise quantization")
    q.add_argument("--dist", choices=["gaussian", "loguniform"], default="gaussian")
    q.add_argument("--n", type=int, default=1 << 16)
    q.add_argument("--block", type=int, default=quant.DEFAULT_BLOCK_SIZE)
    q.add_argument("--mode", choices=list(quant.MODES), default=quant.DYNAMIC)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--std", type=float, default=1.0)
    q.add_argument("--file", help="also write the quantized buffer to this path")
    q.set_defaults(func=cmd_quantize_analyze)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.command == "memory" and args.block < 1:
        print("muon8 memory: --block must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
