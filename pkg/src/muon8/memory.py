"""Analytic optimizer-state memory accounting for GPT-style models.

Per element and per state slot, a 32-bit slot costs 4 bytes and an 8-bit
slot costs 1 byte plus a 32-bit absmax scale shared by ``block_size``
elements. AdamW keeps two slots (m, v), Muon one (momentum). Each distinct
8-bit codebook in use adds 256 float32 entries.
"""
from __future__ import annotations

from dataclasses import dataclass

from .optim import ModelPartition, OptimizerVariant, get_variant, partition_params

GIB = 2**30
CODEBOOK_BYTES = 256 * 4
DEFAULT_VOCAB = 50257

# column order of the reference memory table
TABLE_VARIANTS = ("adamw-32", "adamw-8d", "muon-32", "muon-8d-adamw-32", "muon-8d")
REPORT_VARIANTS = TABLE_VARIANTS + ("adamw-8l", "muon-8l", "muon-8l-adamw-32")

# published GiB values for the GPT models, keyed (model, variant)
TABLE4 = {
    "xs": dict(zip(TABLE_VARIANTS, (0.73, 0.19, 0.58, 0.47, 0.15))),
    "small": dict(zip(TABLE_VARIANTS, (1.22, 0.31, 0.90, 0.66, 0.23))),
    "medium": dict(zip(TABLE_VARIANTS, (3.02, 0.77, 1.89, 1.05, 0.47))),
    "xl": dict(zip(TABLE_VARIANTS, (12.19, 3.10, 6.69, 2.58, 1.68))),
}


@dataclass(frozen=True)
class GptConfig:
    d_model: int
    n_layers: int
    n_heads: int = 1
    ff_ratio: int = 4
    vocab_size: int = DEFAULT_VOCAB
    tied_embeddings: bool = False

    def __post_init__(self):
        if self.d_model < 1 or self.n_heads < 1 or self.ff_ratio < 1 or self.vocab_size < 1:
            raise ValueError(f"invalid GPT config {self}")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")


PRESETS = {
    "xs": GptConfig(576, 10, 12),
    "small": GptConfig(768, 12, 12),
    "medium": GptConfig(1024, 24, 16),
    "xl": GptConfig(1600, 48, 25),
}


def gpt_param_census(cfg: GptConfig) -> ModelPartition:
    d, f = cfg.d_model, cfg.ff_ratio * cfg.d_model
    params = [("wte", (cfg.vocab_size, d), "embedding")]
    if not cfg.tied_embeddings:
        params.append(("lm_head", (cfg.vocab_size, d), "lm_head"))
    for i in range(cfg.n_layers):
        params += [
            (f"h{i}.ln1.w", (d,), "vector"),
            (f"h{i}.ln1.b", (d,), "vector"),
            (f"h{i}.attn.qkv", (d, 3 * d), "hidden_matrix"),
            (f"h{i}.attn.proj", (d, d), "hidden_matrix"),
            (f"h{i}.ln2.w", (d,), "vector"),
            (f"h{i}.ln2.b", (d,), "vector"),
            (f"h{i}.mlp.fc", (d, f), "hidden_matrix"),
            (f"h{i}.mlp.proj", (f, d), "hidden_matrix"),
        ]
    params += [("ln_f.w", (d,), "vector"), ("ln_f.b", (d,), "vector")]
    return partition_params(params)


@dataclass(frozen=True)
class StateBudget:
    muon_bytes: float
    adamw_bytes: float
    overhead_bytes: float

    @property
    def total_bytes(self) -> float:
        return self.muon_bytes + self.adamw_bytes + self.overhead_bytes

    @property
    def total_gib(self) -> float:
        return self.total_bytes / GIB


def state_bytes(variant, partition: ModelPartition, block_size: int | None = 2048) -> StateBudget:
    """Bytes of optimizer state; ``block_size=None`` means one scale per infinite block."""
    if block_size is not None and block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    v: OptimizerVariant = get_variant(variant) if isinstance(variant, str) else variant
    scale_per_elem = 0.0 if block_size is None else 4.0 / block_size

    if v.muon_state is None:
        muon_elems, adamw_elems = 0, partition.total_count
    else:
        muon_elems, adamw_elems = partition.muon_count, partition.adamw_count

    def cost(elems, slots, mode):
        if mode is None:
            return 4.0 * elems * slots, 0.0
        return 1.0 * elems * slots, scale_per_elem * elems * slots

    muon_b, muon_over = cost(muon_elems, 1, v.muon_mode)
    adamw_b, adamw_over = cost(adamw_elems, 2, v.adamw_mode)
    modes = {m for m, n in ((v.muon_mode, muon_elems), (v.adamw_mode, adamw_elems)) if m is not None and n}
    return StateBudget(muon_b, adamw_b, muon_over + adamw_over + CODEBOOK_BYTES * len(modes))


@dataclass(frozen=True)
class SavingsRow:
    variant: str
    budget: StateBudget
    pct_vs_adamw32: float
    pct_vs_muon32: float


def savings_report(partition: ModelPartition, block_size: int | None = 2048,
                   variants=REPORT_VARIANTS) -> list[SavingsRow]:
    ref_a = state_bytes("adamw-32", partition, block_size).total_bytes
    ref_m = state_bytes("muon-32", partition, block_size).total_bytes
    rows = []
    for tag in variants:
        b = state_bytes(tag, partition, block_size)
        pa = 100.0 * (1.0 - b.total_bytes / ref_a) if ref_a else 0.0
        pm = 100.0 * (1.0 - b.total_bytes / ref_m) if ref_m else 0.0
        rows.append(SavingsRow(tag, b, pa, pm))
    return rows
