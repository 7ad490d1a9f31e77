"""Encoder with dual attention over a pruned token field.

Each layer first shrinks the foreground set to the layer's keep ratio
(scored once, before layer 0), then runs two attention stages: multi-head
self-attention over the top-k object tokens (picked by stacked
foreground-times-category score, enhanced, scattered back), followed by
multi-scale deformable attention that updates every foreground query by
sampling the full token field at learned offsets around its reference
point. Rows outside the foreground set pass through a layer untouched.

Discrete selections never carry gradient; scores influence training only
through the focal objective and the top-down feature modulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PyramidGeometry
from .numerics import (
    Parameter,
    Tensor,
    bilinear_sample,
    concat,
    glorot_uniform,
    layer_norm,
    linear_forward,
    matmul,
    mul,
    reshape,
    scatter_rows,
    slice_cols,
    softmax,
    take_rows,
    tensor_max,
    tensor_sum,
    topk_select,
    transpose,
)
from .scoring import CategoryHead, FeaturePyramid, ScorePyramid, category_probs

DEFAULT_KEEP_SCHEDULES = {
    0.1: (0.1, 0.1, 0.1, 0.1, 0.1, 0.1),
    0.2: (0.3, 0.3, 0.2, 0.2, 0.1, 0.1),
    0.3: (0.5, 0.4, 0.3, 0.3, 0.2, 0.1),
    0.4: (0.65, 0.55, 0.45, 0.35, 0.25, 0.15),
    0.5: (0.75, 0.65, 0.55, 0.45, 0.35, 0.25),
}

PE_TEMPERATURE = 10000.0


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 6
    embed_dim: int = 256
    heads: int = 8
    points: int = 4
    object_tokens: int = 300
    keep_schedule: tuple[float, ...] = DEFAULT_KEEP_SCHEDULES[0.3]

    def __post_init__(self):
        object.__setattr__(self, "keep_schedule", tuple(float(r) for r in self.keep_schedule))
        if self.num_layers < 0:
            raise ValueError("num_layers must be nonnegative")
        if len(self.keep_schedule) != self.num_layers:
            raise ValueError(
                f"schedule of length {len(self.keep_schedule)} for {self.num_layers} layers"
            )
        if any(not 0.0 < r <= 1.0 for r in self.keep_schedule):
            raise ValueError(f"keep ratios must lie in (0, 1]: {self.keep_schedule}")
        if any(a < b for a, b in zip(self.keep_schedule, self.keep_schedule[1:])):
            raise ValueError(f"keep ratios must be non-increasing: {self.keep_schedule}")
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed dim {self.embed_dim} not divisible by {self.heads} heads"
            )
        if self.points < 1 or self.object_tokens < 1:
            raise ValueError("points and object_tokens must be positive")


# -- token workspace ---------------------------------------------------------


def sinusoidal_embeddings(geom: PyramidGeometry, embed_dim: int) -> np.ndarray:
    """Fixed 2-D sine embeddings of each token's per-level normalized anchor."""
    if embed_dim % 2 != 0:
        raise ValueError("position embedding width must be even")
    half = embed_dim // 2
    dim_t = PE_TEMPERATURE ** (2.0 * (np.arange(half) // 2) / half)
    blocks = []
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        u = (np.arange(w) + 0.5) / w
        v = (np.arange(h) + 0.5) / h
        uu, vv = np.meshgrid(u, v)
        out = np.empty((h * w, embed_dim))
        for offset, coord in ((0, vv.reshape(-1)), (half, uu.reshape(-1))):
            phase = coord[:, None] * (2.0 * np.pi) / dim_t
            out[:, offset + 0 : offset + half : 2] = np.sin(phase[:, 0::2])
            out[:, offset + 1 : offset + half : 2] = np.cos(phase[:, 1::2])
        blocks.append(out)
    return np.concatenate(blocks, axis=0)


def reference_points(geom: PyramidGeometry) -> np.ndarray:
    """Normalized (u, v) anchors of every token, level-major."""
    blocks = []
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        u = (np.arange(w) + 0.5) / w
        v = (np.arange(h) + 0.5) / h
        uu, vv = np.meshgrid(u, v)
        blocks.append(np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1))
    return np.concatenate(blocks, axis=0)


def level_offsets(geom: PyramidGeometry) -> list[int]:
    """Start index of each level in the flat token order, plus the total."""
    offsets = [0]
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        offsets.append(offsets[-1] + h * w)
    return offsets


def token_flat_index(geom: PyramidGeometry, level: int, i: int, j: int) -> int:
    h, w = geom.level_shape(level)
    if not (0 <= i < w and 0 <= j < h):
        raise IndexError(f"token ({i}, {j}) outside {w}x{h} map at level {level}")
    return level_offsets(geom)[level] + j * w + i


def flat_to_token(geom: PyramidGeometry, flat: int) -> tuple[int, int, int]:
    """Inverse of ``token_flat_index``: flat index -> (level, i, j)."""
    offsets = level_offsets(geom)
    if not 0 <= flat < offsets[-1]:
        raise IndexError(f"flat index {flat} outside [0, {offsets[-1]})")
    level = int(np.searchsorted(offsets, flat, side="right")) - 1
    rel = flat - offsets[level]
    _, w = geom.level_shape(level)
    return level, rel % w, rel // w


@dataclass
class TokenWorkspace:
    """Flat token field plus the bookkeeping every encoder layer needs."""

    geometry: PyramidGeometry
    tokens: Tensor
    pos_embed: np.ndarray
    ref_points: np.ndarray
    offsets: list[int]
    all_scores: np.ndarray
    fg_idx: np.ndarray
    fg_scores: np.ndarray

    @property
    def num_tokens(self) -> int:
        return self.tokens.shape[0]


def flatten_pyramid(pyramid: FeaturePyramid, scores: ScorePyramid) -> TokenWorkspace:
    """Level-major, row-major flattening with embeddings and fixed scores."""
    geom = pyramid.geometry
    if len(scores.levels) != geom.num_levels:
        raise ValueError("score pyramid does not match feature pyramid")
    rows = []
    for level, feat in enumerate(pyramid.levels):
        h, w = geom.level_shape(level)
        rows.append(reshape(feat, (h * w, geom.channels)))
    tokens = concat(rows, axis=0)
    all_scores = scores.flat()
    n = tokens.shape[0]
    return TokenWorkspace(
        geometry=geom,
        tokens=tokens,
        pos_embed=sinusoidal_embeddings(geom, geom.channels),
        ref_points=reference_points(geom),
        offsets=level_offsets(geom),
        all_scores=all_scores,
        fg_idx=np.arange(n, dtype=np.intp),
        fg_scores=all_scores.copy(),
    )


def select_foreground(
    workspace: TokenWorkspace, layer: int, config: EncoderConfig
) -> None:
    """Shrink the foreground set to the layer's keep ratio of all tokens.

    Scores are the fixed pre-encoder foreground scores, so later layers
    always select nested subsets of earlier ones.
    """
    if layer >= config.num_layers:
        raise IndexError(f"layer {layer} >= num_layers {config.num_layers}")
    n = workspace.num_tokens
    keep = max(1, math.ceil(config.keep_schedule[layer] * n))
    chosen = topk_select(workspace.all_scores, keep)
    fg = np.sort(np.asarray(chosen, dtype=np.intp))
    workspace.fg_idx = fg
    workspace.fg_scores = workspace.all_scores[fg]


# -- attention parameter bundles ---------------------------------------------


@dataclass
class MhsaParams:
    w_q: Parameter
    b_q: Parameter
    w_k: Parameter
    b_k: Parameter
    w_v: Parameter
    b_v: Parameter
    w_out: Parameter
    b_out: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w_q, self.b_q, self.w_k, self.b_k,
                self.w_v, self.b_v, self.w_out, self.b_out]


@dataclass
class DeformParams:
    w_offset: Parameter
    b_offset: Parameter
    w_weight: Parameter
    b_weight: Parameter
    w_value: Parameter
    b_value: Parameter
    w_out: Parameter
    b_out: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.w_offset, self.b_offset, self.w_weight, self.b_weight,
                self.w_value, self.b_value, self.w_out, self.b_out]


@dataclass
class EncoderLayerParams:
    mhsa: MhsaParams
    norm_gain: Parameter
    norm_shift: Parameter
    deform: DeformParams

    def parameters(self) -> list[Parameter]:
        return (
            self.mhsa.parameters()
            + [self.norm_gain, self.norm_shift]
            + self.deform.parameters()
        )


@dataclass
class EncoderParams:
    layers: list[EncoderLayerParams]

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out


def _linear_params(
    rng: np.random.Generator, fan_in: int, fan_out: int, prefix: str
) -> tuple[Parameter, Parameter]:
    return (
        Parameter(glorot_uniform(rng, fan_in, fan_out), prefix + ".w"),
        Parameter(np.zeros(fan_out), prefix + ".b"),
    )


def init_mhsa_params(rng: np.random.Generator, c: int, prefix: str) -> MhsaParams:
    wq, bq = _linear_params(rng, c, c, prefix + ".q")
    wk, bk = _linear_params(rng, c, c, prefix + ".k")
    wv, bv = _linear_params(rng, c, c, prefix + ".v")
    wo, bo = _linear_params(rng, c, c, prefix + ".out")
    return MhsaParams(wq, bq, wk, bk, wv, bv, wo, bo)


def init_deform_params(
    rng: np.random.Generator, c: int, levels: int, heads: int, points: int, prefix: str
) -> DeformParams:
    w_off, b_off = _linear_params(rng, c, heads * levels * points * 2, prefix + ".offset")
    w_w, b_w = _linear_params(rng, c, heads * levels * points, prefix + ".weight")
    w_v, b_v = _linear_params(rng, c, c, prefix + ".value")
    w_o, b_o = _linear_params(rng, c, c, prefix + ".out")
    return DeformParams(w_off, b_off, w_w, b_w, w_v, b_v, w_o, b_o)


def init_encoder_params(
    config: EncoderConfig, num_levels: int, rng: np.random.Generator
) -> EncoderParams:
    layers = []
    c = config.embed_dim
    for layer in range(config.num_layers):
        prefix = f"encoder.layer{layer}"
        layers.append(
            EncoderLayerParams(
                mhsa=init_mhsa_params(rng, c, prefix + ".mhsa"),
                norm_gain=Parameter(np.ones(c), prefix + ".norm.gain"),
                norm_shift=Parameter(np.zeros(c), prefix + ".norm.shift"),
                deform=init_deform_params(
                    rng, c, num_levels, config.heads, config.points, prefix + ".deform"
                ),
            )
        )
    return EncoderParams(layers=layers)


# -- attention ops -----------------------------------------------------------


def mhsa(q: Tensor, k: Tensor, v: Tensor, params: MhsaParams, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention over full token rows."""
    c = q.shape[1]
    if c % heads != 0:
        raise ValueError(f"embed dim {c} not divisible by {heads} heads")
    dh = c // heads
    scale = 1.0 / math.sqrt(dh)
    qp = linear_forward(q, params.w_q, params.b_q)
    kp = linear_forward(k, params.w_k, params.b_k)
    vp = linear_forward(v, params.w_v, params.b_v)
    head_outs = []
    for h in range(heads):
        qh = slice_cols(qp, h * dh, (h + 1) * dh)
        kh = slice_cols(kp, h * dh, (h + 1) * dh)
        vh = slice_cols(vp, h * dh, (h + 1) * dh)
        logits = mul(matmul(qh, transpose(kh)), Tensor(scale))
        attn = softmax(logits, axis=1)
        head_outs.append(matmul(attn, vh))
    merged = concat(head_outs, axis=1)
    return linear_forward(merged, params.w_out, params.b_out)


def ms_deform_attn(
    queries: Tensor,
    ref_points: np.ndarray,
    value_pyramid: list[Tensor],
    params: DeformParams,
    heads: int,
    points: int,
) -> Tensor:
    """Deformable attention: sample K offsets per head per level around each query.

    Attention weights are one softmax across all levels-times-points per
    (query, head). Raw offsets are normalized by each level's map size
    before being added to the query's reference point.
    """
    nq, c = queries.shape
    if ref_points.shape != (nq, 2):
        raise ValueError(f"reference points {ref_points.shape} for {nq} queries")
    if np.any(ref_points < 0.0) or np.any(ref_points > 1.0):
        raise ValueError("reference points must lie in [0, 1]^2")
    num_levels = len(value_pyramid)
    dh = c // heads
    lk = num_levels * points

    offsets = linear_forward(queries, params.w_offset, params.b_offset)
    weight_logits = linear_forward(queries, params.w_weight, params.b_weight)

    value_slices: list[list[Tensor]] = []
    for vmap in value_pyramid:
        h, w, _ = vmap.shape
        rows = linear_forward(reshape(vmap, (h * w, c)), params.w_value, params.b_value)
        per_head = []
        for head in range(heads):
            sl = slice_cols(rows, head * dh, (head + 1) * dh)
            per_head.append(reshape(sl, (h, w, dh)))
        value_slices.append(per_head)

    ref_rep = np.repeat(ref_points, points, axis=0)
    head_outs = []
    for head in range(heads):
        weights = softmax(slice_cols(weight_logits, head * lk, (head + 1) * lk), axis=1)
        acc = None
        for level in range(num_levels):
            h, w, _ = value_slices[level][head].shape
            base = (head * num_levels + level) * points * 2
            raw = slice_cols(offsets, base, base + points * 2)
            raw = reshape(raw, (nq * points, 2))
            norm = mul(raw, Tensor(np.array([1.0 / w, 1.0 / h])))
            locs = norm + Tensor(ref_rep)
            sampled = bilinear_sample(value_slices[level][head], locs)
            sampled = reshape(sampled, (nq, points, dh))
            w_lvl = slice_cols(weights, level * points, (level + 1) * points)
            contrib = tensor_sum(mul(reshape(w_lvl, (nq, points, 1)), sampled), axis=1)
            acc = contrib if acc is None else acc + contrib
        head_outs.append(acc)
    merged = concat(head_outs, axis=1)
    return linear_forward(merged, params.w_out, params.b_out)


def deform_attention_weights(
    queries: Tensor, params: DeformParams, heads: int, num_levels: int, points: int
) -> np.ndarray:
    """Post-softmax sampling weights [N, heads, levels*points] (diagnostic)."""
    logits = linear_forward(queries, params.w_weight, params.b_weight)
    lk = num_levels * points
    out = np.empty((queries.shape[0], heads, lk))
    for head in range(heads):
        out[:, head, :] = softmax(
            slice_cols(logits, head * lk, (head + 1) * lk), axis=1
        ).data
    return out


# -- the dual-attention layer -------------------------------------------------


@dataclass
class TokenSelection:
    """Per-layer trace: retained foreground and enhanced object tokens."""

    layer: int
    kept: list[int]
    kept_scores: list[float]
    objects: list[int]
    object_scores: list[float]

    def to_jsonable(self) -> dict:
        return {
            "layer": self.layer,
            "kept": self.kept,
            "kept_scores": self.kept_scores,
            "objects": self.objects,
            "object_scores": self.object_scores,
        }


def dual_attention_layer(
    workspace: TokenWorkspace,
    layer_params: EncoderLayerParams,
    head: CategoryHead,
    config: EncoderConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """One encoder layer; returns (object flat indices, object scores).

    Mutates ``workspace.tokens``; rows outside the foreground set are
    bit-identical afterward.
    """
    fg = workspace.fg_idx
    if fg.size == 0:
        raise ValueError("foreground set is empty")
    if config.object_tokens < 1:
        raise ValueError("object token count must be at least 1")

    tokens_fg = take_rows(workspace.tokens, fg)
    cat = category_probs(tokens_fg, head)
    cat_best = tensor_max(cat, axis=1)
    stacked = cat_best.data * workspace.fg_scores
    k = min(config.object_tokens, fg.size)
    local_idx = np.asarray(topk_select(stacked, k), dtype=np.intp)

    obj_tokens = take_rows(tokens_fg, local_idx)
    obj_pe = Tensor(workspace.pos_embed[fg[local_idx]])
    q = obj_pe + obj_tokens
    attended = mhsa(q, q, obj_tokens, layer_params.mhsa, config.heads)
    enhanced = layer_norm(
        obj_tokens + attended, layer_params.norm_gain, layer_params.norm_shift
    )
    tokens_fg = scatter_rows(tokens_fg, local_idx, enhanced)

    value_pyramid = []
    geom = workspace.geometry
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        seg = take_rows(
            workspace.tokens,
            np.arange(workspace.offsets[level], workspace.offsets[level + 1], dtype=np.intp),
        )
        value_pyramid.append(reshape(seg, (h, w, geom.channels)))

    updated = ms_deform_attn(
        tokens_fg,
        workspace.ref_points[fg],
        value_pyramid,
        layer_params.deform,
        config.heads,
        config.points,
    )
    workspace.tokens = scatter_rows(workspace.tokens, fg, updated)
    return fg[local_idx], stacked[local_idx]


def encoder_forward(
    workspace: TokenWorkspace, params: EncoderParams, head: CategoryHead,
    config: EncoderConfig,
) -> tuple[Tensor, list[TokenSelection]]:
    """Run every layer: cascade selection, then dual attention; keep a trace."""
    if len(params.layers) != config.num_layers:
        raise ValueError(
            f"{len(params.layers)} layer params for {config.num_layers} layers"
        )
    trace: list[TokenSelection] = []
    for layer in range(config.num_layers):
        select_foreground(workspace, layer, config)
        obj_idx, obj_scores = dual_attention_layer(
            workspace, params.layers[layer], head, config
        )
        trace.append(
            TokenSelection(
                layer=layer,
                kept=[int(i) for i in workspace.fg_idx],
                kept_scores=[float(s) for s in workspace.fg_scores],
                objects=[int(i) for i in obj_idx],
                object_scores=[float(s) for s in obj_scores],
            )
        )
    return workspace.tokens, trace


# -- trace artifacts -----------------------------------------------------------


def write_trace(trace: list[TokenSelection], path: str | Path) -> None:
    payload = {"layers": [entry.to_jsonable() for entry in trace]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """Binary P5 portable graymap, maxval 255."""
    if image.ndim != 2:
        raise ValueError(f"PGM image must be 2-D, got {image.shape}")
    data = np.clip(image, 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes(order="C"))


def render_trace_heatmaps(
    trace: list[TokenSelection], geom: PyramidGeometry, directory: str | Path
) -> list[Path]:
    """One PGM per (layer, level): background 0, kept 128, object tokens 255."""
    outdir = Path(directory)
    outdir.mkdir(parents=True, exist_ok=True)
    offsets = level_offsets(geom)
    written = []
    for entry in trace:
        for level in range(geom.num_levels):
            h, w = geom.level_shape(level)
            img = np.zeros((h, w), dtype=np.uint8)
            lo, hi = offsets[level], offsets[level + 1]
            for flat in entry.kept:
                if lo <= flat < hi:
                    rel = flat - lo
                    img[rel // w, rel % w] = 128
            for flat in entry.objects:
                if lo <= flat < hi:
                    rel = flat - lo
                    img[rel // w, rel % w] = 255
            path = outdir / f"layer{entry.layer}_level{level}.pgm"
            write_pgm(path, img)
            written.append(path)
    return written
