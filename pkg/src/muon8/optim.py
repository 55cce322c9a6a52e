"""Optimizer steps and the variant registry.

Step functions operate on one parameter array at a time, return the new
parameter value and update their state object in place. ``Optimizer`` wires
a :class:`ModelPartition` to those steps according to a variant tag:

============================  ===========  ===========
tag                           Muon state   AdamW state
============================  ===========  ===========
``adamw-32``                  --           32-bit
``adamw-8d``                  --           8-bit dyn
``adamw-8l``                  --           8-bit lin
``muon-32``                   32-bit       32-bit
``muon-8d``                   8-bit dyn    8-bit dyn
``muon-8l``                   8-bit lin    8-bit lin
``muon-8d-adamw-32``          8-bit dyn    32-bit
``muon-8l-adamw-32``          8-bit lin    32-bit
============================  ===========  ===========

Variants without a Muon column send hidden matrices to AdamW as well.
8-bit linear AdamW state is known to blow up (the second moment collapses
to zero for moderate gradients), so constructing ``adamw-8l`` or
``muon-8l`` emits a :class:`UserWarning`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import linalg
from .errors import NumericalError, ShapeError, ZeroInputError
from .quant import DYNAMIC, LINEAR, BlockQuantizer, QuantizedBuffer

MUON = "muon"
ADAMW = "adamw"
TAGS = ("embedding", "lm_head", "hidden_matrix", "vector")

# update-RMS matching factor for scaled Muon
MUON_RMS_SCALE = 0.2


@dataclass
class HyperParams:
    lr: float = 3e-4
    beta: float = 0.95
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.1
    sgd_lr: float = 0.1
    sgd_momentum: float = 0.9
    ns_steps: int = linalg.NS_STEPS
    ns_eps: float = linalg.NS_EPS
    block_size: int = 2048
    # None: dampened momentum for 32-bit Muon, undampened for quantized Muon
    dampening: bool | None = None

    def __post_init__(self):
        if not self.lr >= 0 or not self.sgd_lr > 0:
            raise ValueError("learning rates must be positive")
        for name in ("beta", "beta1", "beta2", "sgd_momentum"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if not self.eps > 0 or not self.ns_eps > 0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.ns_steps < 1 or self.block_size < 1:
            raise ValueError("ns_steps and block_size must be >= 1")


# ---- state ---------------------------------------------------------------


@dataclass
class MomentumState:
    storage: np.ndarray | QuantizedBuffer


@dataclass
class AdamState:
    m: np.ndarray | QuantizedBuffer
    v: np.ndarray | QuantizedBuffer
    t: int = 0


def _load(storage, quantizer) -> np.ndarray:
    if quantizer is None:
        return storage
    return quantizer.dequantize(storage)


def _store(x: np.ndarray, quantizer, slot_id: str, what: str):
    if not np.isfinite(x).all():
        raise NumericalError(f"slot {slot_id!r}: non-finite {what}")
    return x if quantizer is None else quantizer.quantize(x)


def _check_shapes(theta, g, slot_id):
    if np.shape(theta) != np.shape(g):
        raise ShapeError(f"slot {slot_id!r}: parameter {np.shape(theta)} vs gradient {np.shape(g)}")


def init_momentum(shape, quantizer=None) -> MomentumState:
    return MomentumState(np.zeros(shape) if quantizer is None else quantizer.zeros(shape))


def init_adam(shape, quantizer=None) -> AdamState:
    z = (lambda: np.zeros(shape)) if quantizer is None else (lambda: quantizer.zeros(shape))
    return AdamState(z(), z(), 0)


# ---- steps ----------------------------------------------------------------


def sgd_momentum_step(theta, g, state: MomentumState, hp: HyperParams, quantizer=None, slot_id=""):
    """``theta - eta * (g + rho * m)``; the stored momentum becomes ``g + rho * m``."""
    _check_shapes(theta, g, slot_id)
    m_old = _load(state.storage, quantizer)
    direction = g + hp.sgd_momentum * m_old
    state.storage = _store(direction, quantizer, slot_id, "momentum")
    return theta - hp.sgd_lr * direction


def adamw_step(theta, g, state: AdamState, hp: HyperParams, quantizer=None, lr=None, slot_id=""):
    _check_shapes(theta, g, slot_id)
    lr = hp.lr if lr is None else lr
    m = _load(state.m, quantizer)
    # dynamic codebook is signed: clamp dequantized second moments
    v = np.maximum(_load(state.v, quantizer), 0.0)
    t = state.t + 1
    m = hp.beta1 * m + (1.0 - hp.beta1) * g
    v = hp.beta2 * v + (1.0 - hp.beta2) * (g * g)
    m_hat = m / (1.0 - hp.beta1**t)
    v_hat = v / (1.0 - hp.beta2**t)
    with np.errstate(all="ignore"):
        new = (1.0 - lr * hp.weight_decay) * theta - lr * m_hat / (np.sqrt(v_hat) + hp.eps)
    if not np.isfinite(new).all():
        raise NumericalError(f"slot {slot_id!r}: non-finite parameter after AdamW step {t}")
    state.m = _store(m, quantizer, slot_id, "first moment")
    state.v = _store(v, quantizer, slot_id, "second moment")
    state.t = t
    return new


def _orthogonalize(momentum, hp: HyperParams, slot_id: str, allow_zero: bool):
    try:
        return linalg.newton_schulz(momentum, hp.ns_steps, hp.ns_eps)
    except ZeroInputError:
        if allow_zero:
            return np.zeros_like(momentum)
        raise ZeroInputError(f"slot {slot_id!r}: momentum is the zero matrix") from None


def _require_matrix(theta, slot_id):
    if np.ndim(theta) != 2 or min(np.shape(theta)) < 2:
        raise ShapeError(f"slot {slot_id!r}: Muon needs a 2-D matrix with both dims >= 2, got {np.shape(theta)}")


def _scaled_update(theta, delta, lr, hp):
    m, n = theta.shape
    return (1.0 - lr * hp.weight_decay) * theta - MUON_RMS_SCALE * lr * math.sqrt(max(m, n)) * delta


def muon_vanilla_step(theta, g, state: MomentumState, hp: HyperParams, lr=None, slot_id=""):
    """Momentum with (1 - beta) dampening, orthogonalize, ``theta - lr * delta``."""
    _require_matrix(theta, slot_id)
    _check_shapes(theta, g, slot_id)
    lr = hp.lr if lr is None else lr
    m = hp.beta * state.storage + (1.0 - hp.beta) * g
    delta = _orthogonalize(m, hp, slot_id, allow_zero=False)
    state.storage = _store(m, None, slot_id, "momentum")
    return theta - lr * delta


def muon_step(theta, g, state: MomentumState, hp: HyperParams, lr=None, slot_id="", dampening=None):
    """Scaled Muon with decoupled weight decay on full-precision momentum.

    A zero momentum skips orthogonalization, leaving only the decay.
    """
    _require_matrix(theta, slot_id)
    _check_shapes(theta, g, slot_id)
    lr = hp.lr if lr is None else lr
    damp = _pick(dampening, hp.dampening, True)
    m = _momentum(state.storage, g, hp.beta, damp)
    delta = _orthogonalize(m, hp, slot_id, allow_zero=True)
    state.storage = _store(m, None, slot_id, "momentum")
    return _scaled_update(theta, delta, lr, hp)


def muon_quantized_step(theta, g, state: MomentumState, hp: HyperParams, quantizer, lr=None, slot_id="",
                        dampening=None):
    """Dequantize momentum, ``m = beta * m + g``, orthogonalize, update, requantize."""
    _require_matrix(theta, slot_id)
    _check_shapes(theta, g, slot_id)
    lr = hp.lr if lr is None else lr
    damp = _pick(dampening, hp.dampening, False)
    m = _momentum(quantizer.dequantize(state.storage), g, hp.beta, damp)
    delta = _orthogonalize(m, hp, slot_id, allow_zero=True)
    new = _scaled_update(theta, delta, lr, hp)
    state.storage = _store(m, quantizer, slot_id, "momentum")
    return new


def _pick(*choices):
    return next(c for c in choices if c is not None)


def _momentum(m_old, g, beta, dampened: bool):
    if dampened:
        return beta * m_old + (1.0 - beta) * g
    return beta * m_old + g


# ---- partition ------------------------------------------------------------


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple
    tag: str

    @property
    def group(self) -> str:
        return MUON if self.tag == "hidden_matrix" else ADAMW

    @property
    def size(self) -> int:
        return math.prod(self.shape)


@dataclass(frozen=True)
class ModelPartition:
    params: tuple[ParamInfo, ...] = ()

    @property
    def muon(self) -> tuple[ParamInfo, ...]:
        return tuple(p for p in self.params if p.group == MUON)

    @property
    def adamw(self) -> tuple[ParamInfo, ...]:
        return tuple(p for p in self.params if p.group == ADAMW)

    @property
    def muon_count(self) -> int:
        return sum(p.size for p in self.muon)

    @property
    def adamw_count(self) -> int:
        return sum(p.size for p in self.adamw)

    @property
    def total_count(self) -> int:
        return self.muon_count + self.adamw_count

    def scaled(self, factor: int) -> "ModelPartition":
        """Partition with every parameter repeated ``factor`` times."""
        return ModelPartition(
            tuple(ParamInfo(f"{p.name}#{k}", p.shape, p.tag) for k in range(factor) for p in self.params)
        )


def partition_params(model: Iterable[tuple[str, tuple, str]]) -> ModelPartition:
    """Split ``(name, shape, tag)`` triples into Muon and AdamW groups.

    Hidden matrices go to Muon; embeddings, the output head and vectors go to AdamW.
    """
    seen = set()
    out = []
    for name, shape, tag in model:
        if tag not in TAGS:
            raise ValueError(f"{name}: unknown parameter tag {tag!r}; expected one of {TAGS}")
        if name in seen:
            raise ValueError(f"duplicate parameter id {name!r}")
        seen.add(name)
        shape = tuple(int(d) for d in shape)
        if tag == "hidden_matrix" and (len(shape) != 2 or min(shape) < 2):
            raise ShapeError(f"{name}: hidden_matrix must be 2-D with dims >= 2, got {shape}")
        out.append(ParamInfo(name, shape, tag))
    return ModelPartition(tuple(out))


# ---- variants -------------------------------------------------------------

_STATE_MODES = {"32": None, "8d": DYNAMIC, "8l": LINEAR}


@dataclass(frozen=True)
class OptimizerVariant:
    tag: str
    muon_state: str | None  # None: no Muon, hidden matrices use AdamW
    adamw_state: str

    @property
    def muon_mode(self):
        return None if self.muon_state is None else _STATE_MODES[self.muon_state]

    @property
    def adamw_mode(self):
        return _STATE_MODES[self.adamw_state]


VARIANTS = {
    v.tag: v
    for v in (
        OptimizerVariant("adamw-32", None, "32"),
        OptimizerVariant("adamw-8d", None, "8d"),
        OptimizerVariant("adamw-8l", None, "8l"),
        OptimizerVariant("muon-32", "32", "32"),
        OptimizerVariant("muon-8d", "8d", "8d"),
        OptimizerVariant("muon-8l", "8l", "8l"),
        OptimizerVariant("muon-8d-adamw-32", "8d", "32"),
        OptimizerVariant("muon-8l-adamw-32", "8l", "32"),
    )
}


def get_variant(tag: str) -> OptimizerVariant:
    try:
        return VARIANTS[tag]
    except KeyError:
        raise ValueError(f"unknown optimizer variant {tag!r}; choose from {sorted(VARIANTS)}") from None


class Optimizer:
    """Applies one variant to every parameter of a partition."""

    def __init__(self, variant: OptimizerVariant, partition: ModelPartition, hp: HyperParams,
                 quantizer_factory: Callable | None = None):
        self.variant = variant
        self.partition = partition
        self.hp = hp
        factory = quantizer_factory or (lambda mode: BlockQuantizer(mode, hp.block_size))
        self.muon_quantizer = factory(variant.muon_mode) if variant.muon_mode else None
        self.adamw_quantizer = factory(variant.adamw_mode) if variant.adamw_mode else None
        self.states: dict[str, MomentumState | AdamState] = {}
        for p in partition.params:
            if self.uses_muon(p):
                self.states[p.name] = init_momentum(p.shape, self.muon_quantizer)
            else:
                self.states[p.name] = init_adam(p.shape, self.adamw_quantizer)

    def uses_muon(self, p: ParamInfo) -> bool:
        return self.variant.muon_state is not None and p.group == MUON

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        """Update ``params`` in place from ``grads``."""
        hp = self.hp
        lr = hp.lr if lr is None else lr
        for p in self.partition.params:
            theta, g, state = params[p.name], grads[p.name], self.states[p.name]
            if not self.uses_muon(p):
                new = adamw_step(theta, g, state, hp, self.adamw_quantizer, lr, p.name)
            elif self.muon_quantizer is None:
                new = muon_step(theta, g, state, hp, lr, p.name)
            else:
                new = muon_quantized_step(theta, g, state, hp, self.muon_quantizer, lr, p.name)
            if new.shape != theta.shape:
                raise ShapeError(f"slot {p.name!r}: shape changed during step")
            params[p.name] = new

    def state_bytes(self) -> int:
        """Accounted state size: 4 B per full-precision element, codes + 32-bit scales otherwise."""
        def size(x):
            return x.nbytes if isinstance(x, QuantizedBuffer) else 4 * np.size(x)
        total = 0
        for s in self.states.values():
            total += size(s.storage) if isinstance(s, MomentumState) else size(s.m) + size(s.v)
        return total


def make_optimizer(variant, partition: ModelPartition, hp: HyperParams | None = None,
                   quantizer_factory: Callable | None = None) -> Optimizer:
    v = get_variant(variant) if isinstance(variant, str) else variant
    if v.adamw_mode == LINEAR:
        warnings.warn(
            f"{v.tag}: 8-bit linear AdamW state is unstable (quantized second moments "
            "collapse to zero for moderate gradients) and may diverge",
            UserWarning,
            stacklevel=2,
        )
    return Optimizer(v, partition, hp or HyperParams(), quantizer_factory)
