"""Acceptance criteria 1-10, each at its stated tolerance and time budget.

Every test records one ``ACCEPT <n> PASS|FAIL ...`` line, printed directly
and repeated in the pytest terminal summary.
"""
import csv
import io
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from muon8 import bounds, cli, linalg, quant
from muon8._rng import rng_stream
from muon8.memory import TABLE4
from muon8.optim import HyperParams
from muon8.quant import PassThroughQuantizer
from muon8.testbed import TrainConfig, make_problem, train

pytestmark = pytest.mark.acceptance


def record(n: int, title: str, ok: bool, detail: str, elapsed: float, limit: float | None = None):
    timing = f"{elapsed:.2f}s" + (f" (limit {limit:g}s)" if limit is not None else "")
    within = limit is None or elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"ACCEPT {n} {status} {title}: {detail}; {timing}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
    assert within, line


# ---- 1. memory ---------------------------------------------------------------


def test_1_memory_table(capsys):
    t0 = time.perf_counter()
    worst, cells = 0.0, 0
    savings = {}
    for model in ("xs", "small", "medium", "xl"):
        assert cli.main(["memory", model]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        by = {r["variant"]: r for r in rows}
        for tag, ref in TABLE4[model].items():
            rel = abs(float(by[tag]["total_gib"]) / ref - 1.0)
            worst = max(worst, rel)
            cells += 1
        if model == "xl":
            savings = {k: float(by["muon-8d"][k]) for k in ("pct_vs_adamw32", "pct_vs_muon32")}
    elapsed = time.perf_counter() - t0
    ok = (worst <= 0.05 and abs(savings["pct_vs_adamw32"] - 86) <= 2 and abs(savings["pct_vs_muon32"] - 74) <= 2)
    record(1, "memory table", ok,
           f"{cells} cells, worst rel err {worst:.2%} (<=5%); XL savings {savings['pct_vs_adamw32']:.1f}% vs "
           f"adamw-32 (86+-2), {savings['pct_vs_muon32']:.1f}% vs muon-32 (74+-2)", elapsed, 1.0)


# ---- 2-4. theorems -----------------------------------------------------------


def test_2_sgd_bound():
    t0 = time.perf_counter()
    rep = bounds.verify_sgd_bound(d=1024, eta=0.1, rho=0.9, trials=10_000, seed=0)
    elapsed = time.perf_counter() - t0
    ok = rep.satisfied and rep.detail["failures"] == 0
    record(2, "SGD momentum bound", ok,
           f"{rep.trials - rep.detail['failures']}/{rep.trials} trials within bound, max lhs/rhs "
           f"{rep.detail['max_ratio']:.4f}", elapsed, 5.0)


def test_3_muon_bound():
    t0 = time.perf_counter()
    rep = bounds.verify_muon_bound(32, 16, alpha=0.02, beta=0.95, trials=1000, seed=0)
    elapsed = time.perf_counter() - t0
    ok = rep.satisfied and rep.detail["failures"] == 0 and rep.detail["skipped_frac"] < 0.01
    record(3, "exact-polar Muon bound", ok,
           f"kept {rep.trials - rep.detail['skipped']}/{rep.trials}, skipped fraction "
           f"{rep.detail['skipped_frac']:.3%} (<1%), failures {rep.detail['failures']}, max lhs/rhs "
           f"{rep.detail['max_ratio']:.4f}", elapsed, 30.0)


def test_4_adam_lower_bound():
    t0 = time.perf_counter()
    spec = bounds.AdvGradientSpec(d=4096, nu=0.5, g_inf=1.0, eps=1e-8, seed=0)
    rep = bounds.verify_adam_lower_bound(spec, alpha=1e-3, trials=10_000)
    elapsed = time.perf_counter() - t0
    ok = rep.empirical >= 0.9 * rep.bound and rep.detail["band_violations"] == 0
    record(4, "linear-8-bit Adam lower bound", ok,
           f"empirical {rep.empirical:.4g} >= 0.9 x bound {rep.bound:.4g}, band coordinates with "
           f"Q(v) != 0: {rep.detail['band_violations']}", elapsed, 60.0)


# ---- 5. quantizer ------------------------------------------------------------


def _brute_codes(x: np.ndarray, block: int, cb: quant.Codebook) -> np.ndarray:
    out = np.empty(x.size, dtype=np.intp)
    blocks = x.reshape(-1, block)
    amax = np.max(np.abs(blocks), axis=1, keepdims=True)
    norm = np.where(amax > 0, blocks / np.where(amax > 0, amax, 1.0), 0.0).reshape(-1)
    for start in range(0, norm.size, 8192):
        chunk = norm[start:start + 8192]
        out[start:start + chunk.size] = np.argmin(np.abs(chunk[:, None] - cb.values[None, :]), axis=1)
    return cb.canon[out]


def test_5_quantizer():
    t0 = time.perf_counter()
    n_blocks, block = 10_000, 64
    rng = rng_stream(5, "acceptance")
    scales = 10.0 ** rng.uniform(-4, 4, size=(n_blocks, 1))
    x = (rng.standard_normal((n_blocks, block)) * scales).reshape(-1)
    mismatches = {}
    for mode in quant.MODES:
        cb = quant.build_codebook(mode)
        qb = quant.quantize_tensor(x, block, cb)
        mismatches[mode] = int(np.count_nonzero(qb.codes.astype(np.intp) != _brute_codes(x, block, cb)))

    qb = quant.quantize_tensor(x, block, quant.LINEAR)
    deq = quant.dequantize_tensor(qb)
    per_elem_scale = np.repeat(qb.scales, block)
    err = np.abs(deq - x)
    err_ok = bool(np.all(err <= per_elem_scale / 254 + 4 * np.spacing(per_elem_scale)))
    again = quant.quantize_tensor(deq, block, quant.LINEAR)
    idem = bool(np.array_equal(again.codes, qb.codes) and np.array_equal(quant.dequantize_tensor(again), deq))

    dyn = quant.build_codebook(quant.DYNAMIC).values
    dyn_ok = len(dyn) == 256 and len(np.unique(dyn)) == 256 and bool(np.all(np.diff(dyn) > 0)) \
        and 0.0 in dyn and 1.0 in dyn
    elapsed = time.perf_counter() - t0
    ok = all(v == 0 for v in mismatches.values()) and err_ok and idem and dyn_ok
    record(5, "quantizer correctness", ok,
           f"{n_blocks} blocks/codebook, brute-force mismatches {mismatches}, linear error bound {err_ok}, "
           f"idempotent {idem}, dynamic table 256 sorted incl 0 and 1 {dyn_ok}", elapsed, 10.0)


# ---- 6. Newton-Schulz vs polar -------------------------------------------------

NS_CONDITION_FLOOR = 1.1e-3


def test_6_newton_schulz():
    t0 = time.perf_counter()
    worst_dist, excluded, band_fail = 0.0, 0, 0
    lo, hi = np.inf, -np.inf
    for i in range(100):
        rng = rng_stream(7, i)
        m, n = (int(v) for v in rng.integers(2, 129, size=2))
        a = rng.standard_normal((m, n))
        ns = linalg.newton_schulz(a, 5)
        dist = np.linalg.norm(ns - linalg.polar_factor(a)) / math.sqrt(min(m, n))
        worst_dist = max(worst_dist, dist)
        s_in = np.linalg.svd(a, compute_uv=False)
        if s_in[-1] / (np.linalg.norm(a) + linalg.NS_EPS) < NS_CONDITION_FLOOR:
            excluded += 1
            continue
        s_out = np.linalg.svd(ns, compute_uv=False)
        lo, hi = min(lo, s_out[-1]), max(hi, s_out[0])
        band_fail += int(s_out[-1] < 0.5 or s_out[0] > 1.5)
    elapsed = time.perf_counter() - t0
    ok = worst_dist <= 0.35 and band_fail == 0 and excluded <= 5
    record(6, "Newton-Schulz vs polar", ok,
           f"100 matrices, worst dist/sqrt(min dim) {worst_dist:.3f} (<=0.35); singular values of "
           f"{100 - excluded} well-conditioned outputs in [{lo:.3f}, {hi:.3f}] (band [0.5, 1.5]); "
           f"{excluded} excluded below normalized s_min {NS_CONDITION_FLOOR:g}", elapsed)


# ---- 7. pass-through ------------------------------------------------------------


def test_7_passthrough_equivalence():
    t0 = time.perf_counter()
    prob = make_problem("mlp2", seed=0)
    identical = {}
    for q_tag, ref_tag, ref_hp in (("muon-8d", "muon-32", HyperParams(dampening=False)),
                                   ("adamw-8d", "adamw-32", HyperParams())):
        a = train(TrainConfig(prob, q_tag, HyperParams(dampening=False), steps=200, seed=0),
                  quantizer_factory=lambda mode: PassThroughQuantizer())
        b = train(TrainConfig(prob, ref_tag, ref_hp, steps=200, seed=0))
        identical[q_tag] = a.loss_curve == b.loss_curve and all(
            np.array_equal(a.params[k], b.params[k]) for k in a.params)
    elapsed = time.perf_counter() - t0
    record(7, "pass-through equivalence", all(identical.values()),
           f"200 mlp2 steps bit-identical: {identical}", elapsed)


# ---- 8. parity -------------------------------------------------------------------

PARITY_VARIANTS = ("muon-32", "adamw-32", "muon-8d", "muon-8l-adamw-32", "muon-8d-adamw-32")


def test_8_desk_scale_parity():
    t0 = time.perf_counter()
    finals = {v: [] for v in PARITY_VARIANTS}
    for seed in range(3):
        prob = make_problem("mlp2", seed=seed)
        for v in PARITY_VARIANTS:
            finals[v].append(train(TrainConfig(prob, v, HyperParams(lr=3e-4), steps=3000, seed=seed)).final_loss)
    mean = {v: float(np.mean(x)) for v, x in finals.items()}
    rel = {v: (mean[v] - mean["muon-32"]) / mean["muon-32"] for v in PARITY_VARIANTS[2:]}
    elapsed = time.perf_counter() - t0
    ok = all(abs(r) <= 0.02 for r in rel.values()) and mean["muon-32"] <= mean["adamw-32"]
    gaps = ", ".join(f"{v} {r:+.2%}" for v, r in rel.items())
    record(8, "desk-scale parity", ok,
           f"muon-32 {mean['muon-32']:.5f} <= adamw-32 {mean['adamw-32']:.5f}; vs muon-32: {gaps} (|gap|<=2%)",
           elapsed, 120.0)


# ---- 9. instability ----------------------------------------------------------------


def test_9_instability(tmp_path, capsys):
    t0 = time.perf_counter()
    stress = tmp_path / "stress.cfg"
    stress.write_text(f"problem = stress\nvariant = adamw-8l\nlr = 1e-3\nsteps = 500\nseed = 0\n"
                      f"warmup_frac = 0\nout = {tmp_path / 'stress.csv'}\n")
    stable = tmp_path / "stable.cfg"
    stable.write_text(f"problem = mlp2\nvariant = muon-8l-adamw-32\nlr = 3e-4\nsteps = 500\nseed = 0\n"
                      f"out = {tmp_path / 'stable.csv'}\n")
    code_stress = cli.main(["train", str(stress)])
    code_stable = cli.main(["train", str(stable)])
    capsys.readouterr()
    rows = list(csv.DictReader(open(tmp_path / "stable.csv")))
    finite = len(rows) == 500 and all(math.isfinite(float(r["loss"])) for r in rows)
    elapsed = time.perf_counter() - t0
    ok = code_stress == 3 and code_stable == 0 and finite
    record(9, "instability demo", ok,
           f"adamw-8l on stress exit {code_stress} (want 3); muon-8l-adamw-32 on mlp2 exit {code_stable}, "
           f"finite curve {finite}", elapsed)


# ---- 10. gradients ---------------------------------------------------------------


def _fd(prob, params, name, batch, h=1e-5):
    flat = params[name].reshape(-1)
    g = np.empty(flat.size)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = prob.loss(params, batch)
        flat[k] = old - h
        down = prob.loss(params, batch)
        flat[k] = old
        g[k] = (up - down) / (2 * h)
    return g.reshape(params[name].shape)


def test_10_gradient_checks():
    t0 = time.perf_counter()
    worst = {}
    problems = [make_problem("quadratic", seed=0, dim=64, cond=10.0),
                make_problem("mlp2", seed=0, n_samples=512),
                make_problem("stress", seed=0, dim=256)]
    for prob in problems:
        rng = rng_stream(10, prob.name)
        batch = prob.sample_batch(rng, 16)
        for _ in range(10):
            params = {name: 0.5 * rng.standard_normal(shape) for name, shape, _ in prob.slots}
            _, grads = prob.loss_and_grad(params, batch)
            for name, _, _ in prob.slots:
                fd = _fd(prob, params, name, batch)
                err = np.linalg.norm(grads[name] - fd) / max(np.linalg.norm(fd), np.linalg.norm(grads[name]), 1e-12)
                key = f"{prob.name}.{name}"
                worst[key] = max(worst.get(key, 0.0), err)
    elapsed = time.perf_counter() - t0
    ok = all(e <= 1e-5 for e in worst.values())
    record(10, "gradient checks", ok,
           f"{len(worst)} slots x 10 points, worst rel err {max(worst.values()):.2e} (<=1e-5)", elapsed)
