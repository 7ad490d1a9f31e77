"""Two-level token scoring: foreground probabilities and stacked object scores.

The foreground scorer runs one shared MLP over every pyramid level, but
scores flow top-down: each level's features are scaled per token by
``1 + UP(alpha * S_upper)`` before scoring, so coarse-level evidence
modulates fine-level decisions. Foreground probability times the max
per-class probability gives the stacked object score used to pick tokens
for enhancement. Supervision is a class-balanced focal loss against the
geometry labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import LabelPyramid, PyramidGeometry
from .numerics import (
    MlpSpec,
    Parameter,
    Tensor,
    as_tensor,
    bilinear_upsample,
    clip,
    init_mlp_params,
    log,
    mlp_forward,
    mul,
    power,
    reshape,
    tensor_max,
    tensor_sum,
)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_CLAMP = 1e-7


@dataclass
class FeaturePyramid:
    """Per-level [H, W, C] feature maps tied to a pyramid geometry."""

    geometry: PyramidGeometry
    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != self.geometry.num_levels:
            raise ValueError(
                f"{len(self.levels)} feature maps for {self.geometry.num_levels} levels"
            )
        for level, feat in enumerate(self.levels):
            h, w = self.geometry.level_shape(level)
            expect = (h, w, self.geometry.channels)
            if feat.shape != expect:
                raise ValueError(f"level {level} features {feat.shape} != {expect}")


@dataclass
class ScorePyramid:
    """Per-level [H, W] foreground probabilities in [0, 1]."""

    levels: list[Tensor]

    def as_arrays(self) -> list[np.ndarray]:
        return [lvl.data for lvl in self.levels]

    def flat(self) -> np.ndarray:
        """Level-major, row-major concatenation of all scores."""
        return np.concatenate([lvl.data.reshape(-1) for lvl in self.levels])


@dataclass
class FtsParams:
    """Shared scorer MLP (sigmoid head) plus per-level modulation scalars."""

    spec: MlpSpec
    mlp: list[Parameter]
    alphas: list[Parameter]

    def parameters(self) -> list[Parameter]:
        return list(self.mlp) + list(self.alphas)


def init_fts_params(
    channels: int,
    num_levels: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (64,),
) -> FtsParams:
    if num_levels < 2:
        raise ValueError("top-down scoring needs at least 2 levels")
    spec = MlpSpec((channels, *hidden, 1), activation="relu", final_activation="sigmoid")
    mlp = init_mlp_params(spec, rng, "fts.mlp")
    alphas = [
        Parameter(np.array(1.0), f"fts.alpha{l}") for l in range(num_levels - 1)
    ]
    return FtsParams(spec=spec, mlp=mlp, alphas=alphas)


def _score_map(features: Tensor, params: FtsParams) -> Tensor:
    h, w, c = features.shape
    rows = reshape(features, (h * w, c))
    return reshape(mlp_forward(rows, params.spec, params.mlp), (h, w))


def fts_forward(pyramid: FeaturePyramid, params: FtsParams) -> ScorePyramid:
    """Score every level, threading modulation from the top level down.

    The top level is scored directly. Each lower level l sees its features
    scaled per token by ``1 + UP(alpha_l * S_{l+1})`` before the shared MLP.
    """
    num_levels = pyramid.geometry.num_levels
    if num_levels < 2:
        raise ValueError("pyramid must have at least 2 levels")
    if len(params.alphas) != num_levels - 1:
        raise ValueError(
            f"{len(params.alphas)} modulation coefficients for {num_levels} levels"
        )
    scores: list[Tensor | None] = [None] * num_levels
    scores[-1] = _score_map(pyramid.levels[-1], params)
    for level in range(num_levels - 2, -1, -1):
        h, w = pyramid.geometry.level_shape(level)
        upper = mul(params.alphas[level].tensor, scores[level + 1])
        factor = bilinear_upsample(upper, (h, w)) + 1.0
        modulated = pyramid.levels[level] * reshape(factor, (h, w, 1))
        scores[level] = _score_map(modulated, params)
    return ScorePyramid(levels=list(scores))


def focal_loss(
    scores: ScorePyramid,
    labels: LabelPyramid,
    alpha_f: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> Tensor:
    """Class-balanced focal loss, averaged over every token of every level."""
    if len(scores.levels) != len(labels.levels):
        raise ValueError(
            f"{len(scores.levels)} score maps vs {len(labels.levels)} label maps"
        )
    total = as_tensor(0.0)
    count = 0
    for s, lbl in zip(scores.levels, labels.levels):
        if s.shape != lbl.shape:
            raise ValueError(f"score map {s.shape} vs label map {lbl.shape}")
        p = clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
        pos = lbl.data
        neg = 1.0 - lbl.data
        pos_term = Tensor(alpha_f * pos) * power(1.0 - p, gamma) * log(p)
        neg_term = Tensor((1.0 - alpha_f) * neg) * power(p, gamma) * log(1.0 - p)
        total = total - tensor_sum(pos_term + neg_term)
        count += s.size
    return total * (1.0 / count)


@dataclass
class CategoryHead:
    """Per-class sigmoid scorer over token features; no background class."""

    spec: MlpSpec
    params: list[Parameter]

    @property
    def num_classes(self) -> int:
        return self.spec.widths[-1]

    def parameters(self) -> list[Parameter]:
        return list(self.params)


def init_category_head(
    channels: int,
    num_classes: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = (),
) -> CategoryHead:
    if num_classes < 1:
        raise ValueError("need at least one category")
    spec = MlpSpec(
        (channels, *hidden, num_classes), activation="relu", final_activation="sigmoid"
    )
    return CategoryHead(spec=spec, params=init_mlp_params(spec, rng, "category.mlp"))


def category_probs(tokens: Tensor, head: CategoryHead) -> Tensor:
    """Per-class probabilities [N, num_classes] for token rows [N, C]."""
    return mlp_forward(tokens, head.spec, head.params)


def object_score(fg_scores: Tensor, tokens: Tensor, head: CategoryHead) -> Tensor:
    """Stacked score: foreground probability times best category probability."""
    if fg_scores.shape[0] != tokens.shape[0]:
        raise ValueError(
            f"{fg_scores.shape[0]} scores for {tokens.shape[0]} tokens"
        )
    best = tensor_max(category_probs(tokens, head), axis=1)
    return fg_scores * best


@dataclass(frozen=True)
class LossWeights:
    """Scale factors for the loss terms; only the scoring term is active here."""

    match: float = 0.0
    dn: float = 0.0
    f: float = 1.5
    enc: float = 0.0

    def __post_init__(self):
        for name in ("match", "dn", "f", "enc"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name!r} must be nonnegative")


def total_loss(parts: dict[str, Tensor], weights: LossWeights) -> Tensor:
    """Weighted sum of the named loss terms; absent terms contribute zero."""
    if "f" not in parts:
        raise ValueError("parts must include the scoring loss under key 'f'")
    unknown = set(parts) - {"match", "dn", "f", "enc"}
    if unknown:
        raise ValueError(f"unknown loss terms: {sorted(unknown)}")
    total = as_tensor(0.0)
    for key in ("match", "dn", "f", "enc"):
        if key in parts:
            total = total + mul(as_tensor(getattr(weights, key)), parts[key])
    return total
