"""Small differentiable problems and a deterministic training loop.

Problems expose tagged parameter slots (so they can be partitioned between
Muon and AdamW), a seeded initialization and an analytic loss/gradient.

``quadratic``
    ``0.5 * e^T A e`` with ``e = vec(theta - theta*)`` and ``A`` SPD with
    log-spaced eigenvalues; ``theta`` is a single hidden matrix.
``mlp2``
    Two-layer tanh MLP with an identity-initialized input embedding,
    softmax cross-entropy on Gaussian blobs.
``stress``
    Unit diagonal quadratic whose initial gradient has most coordinates in
    the band ``(|g|_max/60, |g|_max/16)``; linear 8-bit AdamW blows up on it.
"""
from __future__ import annotations

import csv
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import rng_stream
from .bounds import AdvGradientSpec, sample_adversarial_gradient
from .errors import DivergenceError, NumericalError, ShapeError
from .optim import HyperParams, make_optimizer, partition_params

DIVERGENCE_FACTOR = 1e6
DECAY_FRAC = 0.1


class Problem:
    name = "problem"

    #: (name, shape, tag) triples
    slots: list[tuple[str, tuple, str]]
    #: number of training examples; 0 means the loss is deterministic
    n_samples: int = 0

    def partition(self):
        return partition_params(self.slots)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def loss_and_grad(self, params, batch=None) -> tuple[float, dict[str, np.ndarray]]:
        raise NotImplementedError

    def loss(self, params, batch=None) -> float:
        return self.loss_and_grad(params, batch)[0]

    def sample_batch(self, rng: np.random.Generator, batch_size: int):
        if self.n_samples == 0 or batch_size >= self.n_samples:
            return None
        return rng.choice(self.n_samples, size=batch_size, replace=False)


def _factor(dim: int) -> tuple[int, int]:
    """Most square ``r >= c >= 2`` with ``r * c == dim``."""
    for c in range(math.isqrt(dim), 1, -1):
        if dim % c == 0:
            return dim // c, c
    raise ShapeError(f"dim={dim} cannot be reshaped to an r x c matrix with r, c >= 2")


class QuadraticProblem(Problem):
    name = "quadratic"

    def __init__(self, dim: int = 64, cond: float = 10.0, seed: int = 0):
        if cond < 1:
            raise ValueError(f"cond must be >= 1, got {cond}")
        self.shape = _factor(dim)
        self.slots = [("theta", self.shape, "hidden_matrix")]
        rng = rng_stream(seed, "quadratic")
        eig = np.logspace(0.0, math.log10(cond), dim)
        if cond == 1:
            self.A = np.eye(dim)
        else:
            q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
            q *= np.sign(np.diag(r))
            self.A = (q * eig) @ q.T
            self.A = (self.A + self.A.T) / 2
        self.theta_star = rng.standard_normal(self.shape)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        return {"theta": np.zeros(self.shape)}

    def loss_and_grad(self, params, batch=None):
        e = (params["theta"] - self.theta_star).reshape(-1)
        ae = self.A @ e
        return 0.5 * float(e @ ae), {"theta": ae.reshape(self.shape)}


class StressProblem(Problem):
    """``0.5 * |theta|^2`` started at an adversarial gradient draw.

    Each minibatch touches only a subset of coordinates (like embedding rows
    of rare tokens). On untouched coordinates the gradient is zero, so the
    second moment is pure history; once quantization has zeroed that history
    the step becomes ``lr * m_hat / eps``.
    """

    name = "stress"

    def __init__(self, dim: int = 4096, nu: float = 0.5, seed: int = 0):
        self.spec = AdvGradientSpec(d=dim, nu=nu, seed=seed)
        self.slots = [("theta", (dim,), "vector")]
        self.n_samples = dim
        self.theta0 = sample_adversarial_gradient(self.spec, rng_stream(seed, "stress"))

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        return {"theta": self.theta0.copy()}

    def loss_and_grad(self, params, batch=None):
        th = params["theta"]
        if batch is None:
            mask = np.ones(th.shape)
        else:
            # unbiased estimate of the full loss
            mask = np.zeros(th.shape)
            mask[batch] = self.n_samples / len(batch)
        with np.errstate(over="ignore", invalid="ignore"):
            loss = 0.5 * float(np.sum(mask * th * th))
            grad = mask * th
        return loss, {"theta": grad}


def make_blobs(n_samples: int, d_in: int, n_classes: int, seed: int, radius: float = 4.0,
               sigma: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    rng = rng_stream(seed, "blobs")
    centers = rng.standard_normal((n_classes, d_in))
    centers *= radius / np.linalg.norm(centers, axis=1, keepdims=True)
    y = rng.integers(0, n_classes, size=n_samples)
    x = centers[y] + sigma * rng.standard_normal((n_samples, d_in))
    return x, y


class Mlp2Problem(Problem):
    name = "mlp2"

    def __init__(self, d_in: int = 32, d_hidden: int = 64, n_classes: int = 4, n_samples: int = 16384,
                 seed: int = 0):
        if min(d_in, d_hidden, n_classes, n_samples) < 2:
            raise ValueError("mlp2: all dimensions must be >= 2")
        self.d_in, self.d_hidden, self.n_classes = d_in, d_hidden, n_classes
        self.n_samples = n_samples
        self.x, self.y = make_blobs(n_samples, d_in, n_classes, seed)
        self.slots = [
            ("embed", (d_in, d_in), "embedding"),
            ("w1", (d_hidden, d_in), "hidden_matrix"),
            ("b1", (d_hidden,), "vector"),
            ("w2", (n_classes, d_hidden), "hidden_matrix"),
            ("b2", (n_classes,), "vector"),
        ]

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = rng_stream(seed, "init")
        return {
            "embed": np.eye(self.d_in),
            "w1": rng.standard_normal((self.d_hidden, self.d_in)) / math.sqrt(self.d_in),
            "b1": np.zeros(self.d_hidden),
            "w2": rng.standard_normal((self.n_classes, self.d_hidden)) / math.sqrt(self.d_hidden),
            "b2": np.zeros(self.n_classes),
        }

    def loss_and_grad(self, params, batch=None):
        x, y = (self.x, self.y) if batch is None else (self.x[batch], self.y[batch])
        n = len(y)
        z = x @ params["embed"].T
        h = np.tanh(z @ params["w1"].T + params["b1"])
        logits = h @ params["w2"].T + params["b2"]
        logits = logits - logits.max(axis=1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        loss = -float(np.mean(logp[np.arange(n), y]))

        dlogits = np.exp(logp)
        dlogits[np.arange(n), y] -= 1.0
        dlogits /= n
        dh = dlogits @ params["w2"]
        da = dh * (1.0 - h * h)
        dz = da @ params["w1"]
        grads = {
            "w2": dlogits.T @ h,
            "b2": dlogits.sum(axis=0),
            "w1": da.T @ z,
            "b1": da.sum(axis=0),
            "embed": dz.T @ x,
        }
        return loss, grads


PROBLEMS = {"quadratic": QuadraticProblem, "mlp2": Mlp2Problem, "stress": StressProblem}


def make_problem(name: str, seed: int = 0, **kwargs) -> Problem:
    try:
        cls = PROBLEMS[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(PROBLEMS)}") from None
    return cls(seed=seed, **kwargs)


# ---- training -------------------------------------------------------------------


def lr_schedule(step: int, steps: int, peak: float, warmup_frac: float) -> float:
    """Linear warmup, flat middle, linear decay over the last tenth (0-indexed step)."""
    warm = int(round(warmup_frac * steps))
    decay = max(1, int(round(DECAY_FRAC * steps)))
    if step < warm:
        return peak * (step + 1) / warm
    if step >= steps - decay:
        return peak * (steps - step) / decay
    return peak


@dataclass
class TrainConfig:
    problem: Problem
    variant: str
    hp: HyperParams = field(default_factory=HyperParams)
    steps: int = 1000
    batch_size: int = 64
    warmup_frac: float = 0.1
    seed: int = 0
    csv_path: str | Path | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.warmup_frac <= 0.5:
            raise ValueError(f"warmup_frac must lie in [0, 0.5], got {self.warmup_frac}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass
class TrainResult:
    loss_curve: list[float]
    lrs: list[float]
    final_loss: float
    wallclock: float
    diverged_at: int | None = None
    params: dict = field(default_factory=dict, repr=False)


def write_curve(path, lrs, losses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "lr", "loss"])
        for i, (lr, loss) in enumerate(zip(lrs, losses), start=1):
            w.writerow([i, repr(float(lr)), repr(float(loss))])


def train(config: TrainConfig, quantizer_factory=None) -> TrainResult:
    """Run the loop; raises :class:`DivergenceError` (with ``.result``) on blow-up."""
    prob = config.problem
    params = prob.init_params(config.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        opt = make_optimizer(config.variant, prob.partition(), config.hp, quantizer_factory)
    batch_rng = rng_stream(config.seed, "batches")
    initial = prob.loss(params)
    limit = DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny)

    losses: list[float] = []
    lrs: list[float] = []
    diverged_at = None
    reason = ""
    t0 = time.perf_counter()
    for step in range(config.steps):
        batch = prob.sample_batch(batch_rng, config.batch_size)
        loss, grads = prob.loss_and_grad(params, batch)
        lr = lr_schedule(step, config.steps, config.hp.lr, config.warmup_frac)
        losses.append(loss)
        lrs.append(lr)
        if not math.isfinite(loss) or loss > limit:
            diverged_at, reason = step + 1, f"loss {loss!r} at step {step + 1}"
            break
        try:
            opt.step(params, grads, lr)
        except NumericalError as exc:
            diverged_at, reason = step + 1, str(exc)
            break
    wall = time.perf_counter() - t0
    final = prob.loss(params) if diverged_at is None else math.nan
    result = TrainResult(losses, lrs, final, wall, diverged_at, params)
    if config.csv_path is not None:
        write_curve(config.csv_path, lrs, losses)
    if diverged_at is not None:
        err = DivergenceError(f"{config.variant} on {prob.name} diverged: {reason}", diverged_at)
        err.result = result
        raise err
    return result
