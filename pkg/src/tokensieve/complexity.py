"""Closed-form FLOP model for the pruned-encoder architecture.

The counts are model FLOPs evaluated from the per-module formulas, never
measured: deformable attention is linear in query count, plain
self-attention is quadratic, and the object-token enhancement reuses the
self-attention form at its own (small) token count. The report evaluates
the encoder/decoder cost ratio under two decoder accountings
(cross-attention only, and cross plus self) because neither is singled
out by the architecture itself.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class CostConfig:
    points: int = 4
    embed_dim: int = 256
    heads: int = 8
    num_tokens: float = 1e4
    decoder_queries: int = 900
    keep_ratio: float = 1.0
    enhanced_tokens: int = 300
    encoder_layers: int = 6
    decoder_layers: int = 6

    def __post_init__(self):
        for name in (
            "points",
            "embed_dim",
            "heads",
            "num_tokens",
            "decoder_queries",
            "enhanced_tokens",
            "encoder_layers",
            "decoder_layers",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")

    @classmethod
    def from_dict(cls, raw: dict) -> "CostConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown cost config keys: {sorted(unknown)}")
        return cls(**raw)


def flops_deformable(n_q: float, points: int, embed_dim: int, heads: int) -> float:
    """Deformable-attention FLOPs for one layer at ``n_q`` queries."""
    if n_q <= 0 or points <= 0 or embed_dim <= 0 or heads <= 0:
        raise ValueError("flops_deformable needs positive arguments")
    k, c, m = points, embed_dim, heads
    return (k * c + 3 * m * k + c + 5 * k) * n_q * c


def flops_selfattn(n_q: float, embed_dim: int) -> float:
    """Dense self-attention FLOPs for one layer at ``n_q`` queries."""
    if n_q <= 0 or embed_dim <= 0:
        raise ValueError("flops_selfattn needs positive arguments")
    c = embed_dim
    return 2.0 * n_q * c * c + n_q * n_q * c


def flops_enhancement(n_tokens: float, embed_dim: int) -> float:
    """Object-token enhancement FLOPs (self-attention form at its own count)."""
    if n_tokens <= 0 or embed_dim <= 0:
        raise ValueError("flops_enhancement needs positive arguments")
    c = embed_dim
    return 2.0 * n_tokens * c * c + n_tokens * n_tokens * c


@dataclass(frozen=True)
class ComplexityReport:
    """Per-layer counts, depth-weighted totals, and the derived ratios."""

    config: CostConfig
    enc_deformable: float
    dec_deformable: float
    dec_self_attn: float
    enhancement: float
    enc_total: float
    dec_cross_total: float
    dec_self_total: float
    enhancement_total: float
    ratio_cross_only: float
    ratio_with_self: float
    enhancement_ratio: float
    reduction_pct_cross_only: float
    reduction_pct_with_self: float


def build_report(config: CostConfig) -> ComplexityReport:
    """Evaluate all counts at ``keep_ratio`` and compare with the dense baseline."""
    enc = flops_deformable(
        config.keep_ratio * config.num_tokens,
        config.points,
        config.embed_dim,
        config.heads,
    )
    dec_cross = flops_deformable(
        config.decoder_queries, config.points, config.embed_dim, config.heads
    )
    dec_self = flops_selfattn(config.decoder_queries, config.embed_dim)
    enh = flops_enhancement(config.enhanced_tokens, config.embed_dim)

    enc_total = enc * config.encoder_layers
    dec_cross_total = dec_cross * config.decoder_layers
    dec_self_total = dec_self * config.decoder_layers
    enh_total = enh * config.encoder_layers

    enc_dense_total = (
        flops_deformable(config.num_tokens, config.points, config.embed_dim, config.heads)
        * config.encoder_layers
    )
    cross_now = enc_total + dec_cross_total
    cross_dense = enc_dense_total + dec_cross_total
    with_self_now = cross_now + dec_self_total
    with_self_dense = cross_dense + dec_self_total

    return ComplexityReport(
        config=config,
        enc_deformable=enc,
        dec_deformable=dec_cross,
        dec_self_attn=dec_self,
        enhancement=enh,
        enc_total=enc_total,
        dec_cross_total=dec_cross_total,
        dec_self_total=dec_self_total,
        enhancement_total=enh_total,
        ratio_cross_only=enc_total / dec_cross_total,
        ratio_with_self=enc_total / (dec_cross_total + dec_self_total),
        enhancement_ratio=enh_total / (enc_total + dec_cross_total),
        reduction_pct_cross_only=100.0 * (1.0 - cross_now / cross_dense),
        reduction_pct_with_self=100.0 * (1.0 - with_self_now / with_self_dense),
    )


SWEEP_COLUMNS = (
    "gamma",
    "enc_flops",
    "dec_cross",
    "dec_self",
    "enhancement",
    "ratio_cross_only",
    "ratio_with_self",
    "reduction_pct",
)


def sweep_rows(config: CostConfig) -> list[dict]:
    """One row per keep ratio in {0.1, ..., 1.0}; counts are per layer."""
    rows = []
    for step in range(1, 11):
        gamma = step / 10.0
        report = build_report(
            CostConfig(
                points=config.points,
                embed_dim=config.embed_dim,
                heads=config.heads,
                num_tokens=config.num_tokens,
                decoder_queries=config.decoder_queries,
                keep_ratio=gamma,
                enhanced_tokens=config.enhanced_tokens,
                encoder_layers=config.encoder_layers,
                decoder_layers=config.decoder_layers,
            )
        )
        rows.append(
            {
                "gamma": gamma,
                "enc_flops": report.enc_deformable,
                "dec_cross": report.dec_deformable,
                "dec_self": report.dec_self_attn,
                "enhancement": report.enhancement,
                "ratio_cross_only": report.ratio_cross_only,
                "ratio_with_self": report.ratio_with_self,
                "reduction_pct": report.reduction_pct_cross_only,
            }
        )
    return rows


def write_sweep_csv(config: CostConfig, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in sweep_rows(config):
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def format_summary(report: ComplexityReport) -> str:
    cfg = report.config
    lines = [
        "model FLOPs (per attention layer)",
        f"  config: K={cfg.points} C={cfg.embed_dim} M={cfg.heads} "
        f"tokens={cfg.num_tokens:g} dec_queries={cfg.decoder_queries} "
        f"gamma={cfg.keep_ratio:g} enhanced={cfg.enhanced_tokens}",
        f"  encoder deformable:        {report.enc_deformable:>18,.0f}",
        f"  decoder deformable:        {report.dec_deformable:>18,.0f}",
        f"  decoder self-attention:    {report.dec_self_attn:>18,.0f}",
        f"  object-token enhancement:  {report.enhancement:>18,.0f}",
        f"totals over {cfg.encoder_layers} encoder / {cfg.decoder_layers} decoder layers",
        f"  encoder/decoder ratio (decoder = cross only):  {report.ratio_cross_only:.4f}",
        f"  encoder/decoder ratio (decoder = cross+self):  {report.ratio_with_self:.4f}",
        f"  enhancement / (enc + dec cross):               {report.enhancement_ratio:.6f}",
        f"  reduction vs gamma=1 (cross only):             {report.reduction_pct_cross_only:.2f}%",
        f"  reduction vs gamma=1 (cross+self):             {report.reduction_pct_with_self:.2f}%",
    ]
    return "\n".join(lines)
