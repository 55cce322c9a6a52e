"""Monte Carlo verifiers for the single-step quantization error bounds.

Three results are checked numerically:

* Adam with linearly quantized moments: a *lower* bound on the expected
  squared parameter error after one step (it blows up as ``eps -> 0``).
* SGD with momentum: a deterministic upper bound.
* Muon with an exact (SVD) polar factor: an upper bound scaled by the
  inverse squared smallest singular value of the momentum.

All verifiers use per-tensor linear quantization (a single block covering
the whole vector or matrix).
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._backend import thread_cap
from ._rng import rng_stream
from .errors import HypothesisError, RankError
from .linalg import as_matrix, thin_svd
from .quant import linear_q

log = logging.getLogger(__name__)

BAND_LO = 1 / 60
BAND_HI = 1 / 16
ULP_SLACK = 8
MIN_ADAM_TRIALS = 1000
RANK_SKIP_TOL = 1e-6


@dataclass(frozen=True)
class AdvGradientSpec:
    d: int
    nu: float
    g_inf: float = 1.0
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError(f"d must be >= 2, got {self.d}")
        if not 0.0 <= self.nu <= 1.0:
            raise ValueError(f"nu must lie in [0, 1], got {self.nu}")
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.g_inf > 256 * self.eps:
            raise HypothesisError(
                f"g_inf={self.g_inf!r} must exceed 256*eps={256 * self.eps!r}"
            )

    def bound(self, alpha: float) -> float:
        return self.d * self.nu * alpha**2 * self.g_inf**2 / (256 * self.eps) ** 2


@dataclass
class BoundReport:
    empirical: float
    bound: float
    satisfied: bool
    trials: int
    detail: dict = field(default_factory=dict)


def _ratios(lhs: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """lhs/rhs with 0/0 read as 0 and x/0 as inf."""
    with np.errstate(divide="ignore", invalid="ignore"):
        r = lhs / rhs
    return np.where(lhs == 0, 0.0, r)


def _map_trials(fn, n: int) -> list:
    workers = min(thread_cap(), n)
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (4 * workers))))


# ---- Adam lower bound ---------------------------------------------------------


def sample_adversarial_gradient(spec: AdvGradientSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """g[0] = g_inf; each other entry lands in the band with probability nu, else equals g_inf."""
    rng = rng_stream(spec.seed) if rng is None else rng
    g = np.full(spec.d, float(spec.g_inf))
    in_band = rng.random(spec.d - 1) < spec.nu
    band_vals = rng.uniform(spec.g_inf * BAND_LO, spec.g_inf * BAND_HI, size=spec.d - 1)
    # uniform() is half-open at the top; keep the open band strictly
    band_vals = np.clip(band_vals, np.nextafter(spec.g_inf * BAND_LO, np.inf),
                        np.nextafter(spec.g_inf * BAND_HI, 0.0))
    g[1:] = np.where(in_band, band_vals, spec.g_inf)
    return g


def adam_first_step_gap(g: np.ndarray, alpha: float, eps: float, quantize: bool = True):
    """Squared distance between exact and quantized first Adam steps.

    Returns (sq_error, band_violations) where band_violations counts band
    coordinates whose quantized second moment is not exactly zero.
    """
    m, v = g, g * g  # bias-corrected moments at t=1
    exact = m / (np.sqrt(v) + eps)
    if not quantize:
        return 0.0, 0
    qm, qv = linear_q(m), np.maximum(linear_q(v), 0.0)
    approx = qm / (np.sqrt(qv) + eps)
    g_max = np.max(np.abs(g))
    band = (np.abs(g) > g_max * BAND_LO) & (np.abs(g) < g_max * BAND_HI)
    violations = int(np.count_nonzero(qv[band] != 0.0))
    return float(alpha**2 * np.sum((exact - approx) ** 2)), violations


def verify_adam_lower_bound(spec: AdvGradientSpec, alpha: float, trials: int = 10_000,
                            quantize: bool = True) -> BoundReport:
    if trials < MIN_ADAM_TRIALS:
        raise ValueError(f"trials must be >= {MIN_ADAM_TRIALS}, got {trials}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")

    def one(i):
        g = sample_adversarial_gradient(spec, rng_stream(spec.seed, i))
        return adam_first_step_gap(g, alpha, spec.eps, quantize)

    results = _map_trials(one, trials)
    errs = np.array([r[0] for r in results])
    violations = sum(r[1] for r in results)
    empirical = float(errs.mean())
    bound = spec.bound(alpha)
    return BoundReport(
        empirical=empirical,
        bound=bound,
        satisfied=empirical >= bound,
        trials=trials,
        detail={"min": float(errs.min()), "max": float(errs.max()), "band_violations": violations},
    )


# ---- SGD upper bound ----------------------------------------------------------


def sgd_bound(d: int, eta: float, rho: float, m_inf: float) -> float:
    return d * eta**2 * rho**2 * (m_inf / 127) ** 2


def verify_sgd_bound(d: int = 1024, eta: float = 0.1, rho: float = 0.9, trials: int = 10_000,
                     seed: int = 0) -> BoundReport:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    if d < 1 or trials < 1:
        raise ValueError("d and trials must be positive")

    def one(i):
        rng = rng_stream(seed, i)
        theta, m, g = rng.standard_normal((3, d))
        exact = theta - eta * (g + rho * m)
        approx = theta - eta * (g + rho * linear_q(m))
        lhs = float(np.sum((approx - exact) ** 2))
        rhs = sgd_bound(d, eta, rho, float(np.max(np.abs(m))))
        return lhs, rhs

    results = np.array(_map_trials(one, trials))
    lhs, rhs = results[:, 0], results[:, 1]
    ok = lhs <= rhs + ULP_SLACK * np.spacing(rhs)
    ratios = _ratios(lhs, rhs)
    worst = int(np.argmax(ratios))
    return BoundReport(
        empirical=float(lhs[worst]),
        bound=float(rhs[worst]),
        satisfied=bool(ok.all()),
        trials=trials,
        detail={"failures": int(np.count_nonzero(~ok)), "max_ratio": float(ratios[worst])},
    )


# ---- Muon with exact polar factor -------------------------------------------------


def exact_polar_muon_step(W, M_prev, G, alpha: float, beta: float, quantize: bool):
    """One Muon step with SVD orthogonalization.

    Returns ``(W_new, M_new, s_min)``; raises :class:`RankError` when the new
    momentum is not full column rank.
    """
    W, M_prev, G = as_matrix(W, "W"), as_matrix(M_prev, "M_prev"), as_matrix(G, "G")
    if not (W.shape == M_prev.shape == G.shape):
        raise ValueError(f"shape mismatch: {W.shape}, {M_prev.shape}, {G.shape}")
    carried = linear_q(M_prev) if quantize else M_prev
    M_new = beta * carried + G
    res = thin_svd(M_new)
    s_min = float(res.s[-1])
    if s_min <= 1e-12 * float(res.s[0]) or s_min == 0.0:
        raise RankError(f"exact_polar_muon_step: momentum rank deficient (s_min={s_min:.3e})", s_min)
    O = res.u @ res.vt
    return W - alpha * O, M_new, s_min


def muon_bound(m: int, n: int, alpha: float, beta: float, s: float, m_inf: float) -> float:
    return m * n * alpha**2 * beta**2 / s**2 * (m_inf / 127) ** 2


def verify_muon_bound(m: int = 32, n: int = 16, alpha: float = 0.02, beta: float = 0.95,
                      trials: int = 1000, seed: int = 0) -> BoundReport:
    if not m >= n >= 2:
        raise ValueError(f"need m >= n >= 2, got {m}x{n}")
    if trials < 1:
        raise ValueError("trials must be positive")

    def one(i):
        rng = rng_stream(seed, i)
        W, M_prev, G = rng.standard_normal((3, m, n))
        try:
            W_q, _, s_q = exact_polar_muon_step(W, M_prev, G, alpha, beta, True)
            W_f, _, s_f = exact_polar_muon_step(W, M_prev, G, alpha, beta, False)
        except RankError:
            return None
        s = min(s_q, s_f)
        if s < RANK_SKIP_TOL:
            return None
        lhs = float(np.sum((W_q - W_f) ** 2))
        return lhs, muon_bound(m, n, alpha, beta, s, float(np.max(np.abs(M_prev))))

    results = _map_trials(one, trials)
    kept = np.array([r for r in results if r is not None]).reshape(-1, 2)
    skipped = trials - len(kept)
    if skipped:
        log.info("verify_muon_bound: skipped %d rank-deficient trials", skipped)
    if len(kept) == 0:
        return BoundReport(math.nan, math.nan, False, trials, {"skipped": skipped, "skipped_frac": 1.0})
    lhs, rhs = kept[:, 0], kept[:, 1]
    ok = lhs <= rhs + ULP_SLACK * np.spacing(rhs)
    ratios = _ratios(lhs, rhs)
    worst = int(np.argmax(ratios))
    return BoundReport(
        empirical=float(lhs[worst]),
        bound=float(rhs[worst]),
        satisfied=bool(ok.all()),
        trials=trials,
        detail={"failures": int(np.count_nonzero(~ok)), "skipped": skipped,
                "skipped_frac": skipped / trials, "max_ratio": float(ratios[worst])},
    )
