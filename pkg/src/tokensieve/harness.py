"""Synthetic scenes, scorer training, selection metrics, and the full pipeline.

Scenes substitute for real detection data: each box renders a Gaussian
blob (in a per-class signature direction) onto every pyramid level whose
scale interval contains the box, on top of seeded noise, so the geometry
labels are learnable from the features alone. Training minimizes the
weighted focal loss with plain constant-rate gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderParams,
    TokenSelection,
    encoder_forward,
    flatten_pyramid,
)
from .geometry import (
    Box,
    BoxSet,
    LabelPyramid,
    PyramidGeometry,
    ScaleIntervals,
    assign_labels,
    default_intervals,
)
from .numerics import (
    SgdTrainer,
    Tensor,
    backward,
    no_grad,
    read_tensor,
    topk_select,
    write_tensor,
)
from .scoring import (
    CategoryHead,
    FeaturePyramid,
    FtsParams,
    LossWeights,
    focal_loss,
    fts_forward,
    total_loss,
)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic recipe for a family of synthetic scenes."""

    image_w: int = 64
    image_h: int = 64
    channels: int = 32
    strides: tuple[int, ...] = (8, 16, 32, 64)
    min_boxes: int = 1
    max_boxes: int = 1
    min_half_scale: float = 4.0
    max_half_scale: float = 900.0
    num_classes: int = 2
    noise_sigma: float = 0.5
    blob_amplitude: float = 3.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.min_boxes < 0 or self.max_boxes < self.min_boxes:
            raise ValueError(
                f"invalid box count range ({self.min_boxes}, {self.max_boxes})"
            )
        if not 0 < self.min_half_scale < self.max_half_scale:
            raise ValueError("half-scale range must be positive and increasing")
        if self.num_classes < 1:
            raise ValueError("need at least one class")
        if self.noise_sigma < 0 or self.blob_amplitude <= 0:
            raise ValueError("noise_sigma must be >= 0 and blob_amplitude > 0")

    @property
    def geometry(self) -> PyramidGeometry:
        return PyramidGeometry(
            image_w=self.image_w,
            image_h=self.image_h,
            strides=self.strides,
            channels=self.channels,
        )

    @property
    def class_names(self) -> list[str]:
        return [f"class{i}" for i in range(self.num_classes)]

    def to_jsonable(self) -> dict:
        return {
            "image_w": self.image_w,
            "image_h": self.image_h,
            "channels": self.channels,
            "strides": list(self.strides),
            "min_boxes": self.min_boxes,
            "max_boxes": self.max_boxes,
            "min_half_scale": self.min_half_scale,
            "max_half_scale": self.max_half_scale,
            "num_classes": self.num_classes,
            "noise_sigma": self.noise_sigma,
            "blob_amplitude": self.blob_amplitude,
            "seed": self.seed,
        }

    @classmethod
    def from_jsonable(cls, raw: dict) -> "SceneSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown scene spec keys: {sorted(unknown)}")
        raw = dict(raw)
        if "strides" in raw:
            raw["strides"] = tuple(raw["strides"])
        return cls(**raw)


@dataclass
class SyntheticScene:
    boxes: BoxSet
    pyramid: FeaturePyramid

    @property
    def geometry(self) -> PyramidGeometry:
        return self.pyramid.geometry


def class_signatures(spec: SceneSpec) -> np.ndarray:
    """Fixed unit feature directions, one per class, shared by all scenes."""
    root = np.random.SeedSequence(spec.seed)
    rng = np.random.Generator(np.random.SFC64(root.spawn(1)[0]))
    sig = rng.normal(size=(spec.num_classes, spec.channels))
    return sig / np.linalg.norm(sig, axis=1, keepdims=True)


def _sample_boxes(spec: SceneSpec, rng: np.random.Generator) -> BoxSet:
    count = int(rng.integers(spec.min_boxes, spec.max_boxes + 1))
    boxes = []
    log_lo = math.log(spec.min_half_scale)
    log_hi = math.log(spec.max_half_scale)
    for _ in range(count):
        d = math.exp(rng.uniform(log_lo, log_hi))
        aspect = rng.uniform(0.5, 1.0)
        if rng.integers(2) == 0:
            w, h = 2.0 * d, 2.0 * d * aspect
        else:
            w, h = 2.0 * d * aspect, 2.0 * d
        # center stays inside the image, so no box is fully outside
        x = rng.uniform(0.0, spec.image_w)
        y = rng.uniform(0.0, spec.image_h)
        cls = int(rng.integers(spec.num_classes))
        boxes.append(Box(x=x, y=y, w=w, h=h, cls=cls))
    return BoxSet(tuple(boxes))


def _render_features(
    spec: SceneSpec,
    boxes: BoxSet,
    intervals: ScaleIntervals,
    signatures: np.ndarray,
    rng: np.random.Generator,
) -> FeaturePyramid:
    geom = spec.geometry
    levels = []
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        s = geom.strides[level]
        feat = rng.normal(0.0, spec.noise_sigma, size=(h, w, geom.channels))
        anchor_x = s // 2 + np.arange(w) * s
        anchor_y = s // 2 + np.arange(h) * s
        for box in boxes:
            d = max(box.h / 2.0, box.w / 2.0)
            if not intervals.contains(level, d):
                continue
            dx = np.abs(anchor_x - box.x) / (box.w / 2.0)
            dy = np.abs(anchor_y - box.y) / (box.h / 2.0)
            # plateau inside the box extent, steep falloff just outside, so
            # the label boundary is recoverable from the features
            r = np.maximum(dy[:, None], dx[None, :]) / 1.05
            blob = spec.blob_amplitude * np.exp(-(r**16))
            feat += blob[:, :, None] * signatures[box.cls][None, None, :]
        levels.append(Tensor(feat))
    return FeaturePyramid(geometry=geom, levels=levels)


def generate_scenes(
    spec: SceneSpec, n: int, intervals: ScaleIntervals | None = None
) -> list[SyntheticScene]:
    """``n`` reproducible scenes: same (spec, seed) gives bit-identical output."""
    if n < 1:
        raise ValueError(f"scene count must be >= 1, got {n}")
    if intervals is None:
        intervals = default_intervals(spec.geometry.num_levels)
    signatures = class_signatures(spec)
    root = np.random.SeedSequence(spec.seed)
    children = root.spawn(n + 1)[1:]
    scenes = []
    for child in children:
        rng = np.random.Generator(np.random.SFC64(child))
        boxes = _sample_boxes(spec, rng)
        pyramid = _render_features(spec, boxes, intervals, signatures, rng)
        scenes.append(SyntheticScene(boxes=boxes, pyramid=pyramid))
    return scenes


def scene_labels(scene: SyntheticScene, intervals: ScaleIntervals) -> LabelPyramid:
    return assign_labels(scene.boxes, scene.geometry, intervals)


# -- scene files ---------------------------------------------------------------

SCENE_SUFFIX = ".scene.json"


def save_scene(scene: SyntheticScene, directory: str | Path, stem: str) -> Path:
    """Write ``<stem>.scene.json`` plus one ``.ftsr`` per feature level."""
    outdir = Path(directory)
    outdir.mkdir(parents=True, exist_ok=True)
    geom = scene.geometry
    feature_files = []
    for level, feat in enumerate(scene.pyramid.levels):
        name = f"{stem}_l{level}.ftsr"
        write_tensor(outdir / name, feat)
        feature_files.append(name)
    classes = sorted({box.cls for box in scene.boxes} | {0})
    payload = {
        "image_size": [geom.image_w, geom.image_h],
        "channels": geom.channels,
        "strides": list(geom.strides),
        "class_names": [f"class{i}" for i in range(max(classes) + 1)],
        "boxes": [
            {"x": b.x, "y": b.y, "w": b.w, "h": b.h, "class": b.cls}
            for b in scene.boxes
        ],
        "features": feature_files,
    }
    path = outdir / (stem + SCENE_SUFFIX)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def load_scene(path: str | Path) -> SyntheticScene:
    path = Path(path)
    payload = json.loads(path.read_text())
    geom = PyramidGeometry(
        image_w=payload["image_size"][0],
        image_h=payload["image_size"][1],
        strides=tuple(payload["strides"]),
        channels=payload["channels"],
    )
    boxes = BoxSet(
        tuple(
            Box(x=b["x"], y=b["y"], w=b["w"], h=b["h"], cls=b["class"])
            for b in payload["boxes"]
        )
    )
    levels = [Tensor(read_tensor(path.parent / name)) for name in payload["features"]]
    return SyntheticScene(boxes=boxes, pyramid=FeaturePyramid(geometry=geom, levels=levels))


def load_scene_dir(directory: str | Path) -> list[SyntheticScene]:
    paths = sorted(Path(directory).glob("*" + SCENE_SUFFIX))
    if not paths:
        raise FileNotFoundError(f"no {SCENE_SUFFIX} files under {directory}")
    return [load_scene(p) for p in paths]


# -- training and evaluation ----------------------------------------------------


def train_fts(
    scenes: list[SyntheticScene],
    params: FtsParams,
    epochs: int,
    lr: float,
    lambda_f: float = 1.5,
    intervals: ScaleIntervals | None = None,
) -> tuple[FtsParams, list[float]]:
    """Per-scene gradient descent on the weighted focal loss.

    Returns the (in-place updated) params and the per-epoch mean loss.
    """
    if not scenes:
        raise ValueError("cannot train on an empty scene list")
    if intervals is None:
        intervals = default_intervals(scenes[0].geometry.num_levels)
    weights = LossWeights(f=lambda_f)
    labels = [scene_labels(s, intervals) for s in scenes]
    trainer = SgdTrainer(params=params.parameters(), lr=lr)
    curve: list[float] = []
    for epoch in range(epochs):
        epoch_losses = []
        for scene, lbl in zip(scenes, labels):
            try:
                scores = fts_forward(scene.pyramid, params)
                loss = total_loss({"f": focal_loss(scores, lbl)}, weights)
                value = loss.item()
                backward(loss)
                trainer.step()
            except ValueError as exc:
                raise TrainingDivergedError(
                    f"non-finite values at epoch {epoch}: {exc}"
                ) from exc
            if not math.isfinite(value):
                raise TrainingDivergedError(f"loss diverged at epoch {epoch}: {value}")
            epoch_losses.append(value)
        curve.append(float(np.mean(epoch_losses)))
    return params, curve


@dataclass
class SelectionMetrics:
    """Quality of top-budget token selection against the geometry labels.

    ``recall`` and ``precision`` are per-scene averages (scenes without a
    single positive token are skipped for recall); ``budget``, ``positives``
    and ``hits`` are raw totals over all scenes.
    """

    ratio: float
    num_scenes: int
    budget: int
    positives: int
    hits: int
    recall: float
    precision: float
    per_level_recall: list[float]
    mean_positive_score: float
    mean_negative_score: float

    def to_jsonable(self) -> dict:
        return {
            "ratio": self.ratio,
            "num_scenes": self.num_scenes,
            "budget": self.budget,
            "positives": self.positives,
            "hits": self.hits,
            "recall": self.recall,
            "precision": self.precision,
            "per_level_recall": self.per_level_recall,
            "mean_positive_score": self.mean_positive_score,
            "mean_negative_score": self.mean_negative_score,
        }


def selection_metrics(
    per_scene: list[tuple[np.ndarray, np.ndarray]],
    level_sizes: list[int],
    ratio: float,
) -> SelectionMetrics:
    """Compute metrics from (flat scores, flat 0/1 labels) pairs, one per scene."""
    if not per_scene:
        raise ValueError("cannot evaluate on an empty scene list")
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"keep ratio must lie in (0, 1], got {ratio}")
    num_levels = len(level_sizes)
    hits_total = 0
    positives_total = 0
    budget_total = 0
    scene_recalls: list[float] = []
    scene_precisions: list[float] = []
    level_recalls: list[list[float]] = [[] for _ in range(num_levels)]
    pos_scores: list[np.ndarray] = []
    neg_scores: list[np.ndarray] = []
    for flat_scores, flat_labels in per_scene:
        n = flat_scores.shape[0]
        if n != sum(level_sizes) or flat_labels.shape[0] != n:
            raise ValueError("scores/labels do not match the level sizes")
        budget = max(1, math.ceil(ratio * n))
        chosen = np.asarray(topk_select(flat_scores, budget), dtype=np.intp)
        selected = np.zeros(n, dtype=bool)
        selected[chosen] = True
        pos_mask = flat_labels > 0.5
        hits = int(np.count_nonzero(selected & pos_mask))
        positives = int(np.count_nonzero(pos_mask))
        hits_total += hits
        positives_total += positives
        budget_total += budget
        if positives > 0:
            scene_recalls.append(hits / positives)
        scene_precisions.append(hits / budget)
        offset = 0
        for level in range(num_levels):
            sl = slice(offset, offset + level_sizes[level])
            lpos = int(np.count_nonzero(pos_mask[sl]))
            if lpos > 0:
                lhits = int(np.count_nonzero(selected[sl] & pos_mask[sl]))
                level_recalls[level].append(lhits / lpos)
            offset += level_sizes[level]
        pos_scores.append(flat_scores[pos_mask])
        neg_scores.append(flat_scores[~pos_mask])
    pos_all = np.concatenate(pos_scores) if pos_scores else np.empty(0)
    neg_all = np.concatenate(neg_scores) if neg_scores else np.empty(0)
    per_level = [
        float(np.mean(level_recalls[l])) if level_recalls[l] else 1.0
        for l in range(num_levels)
    ]
    return SelectionMetrics(
        ratio=ratio,
        num_scenes=len(per_scene),
        budget=budget_total,
        positives=positives_total,
        hits=hits_total,
        recall=float(np.mean(scene_recalls)) if scene_recalls else 1.0,
        precision=float(np.mean(scene_precisions)),
        per_level_recall=per_level,
        mean_positive_score=float(pos_all.mean()) if pos_all.size else 0.0,
        mean_negative_score=float(neg_all.mean()) if neg_all.size else 0.0,
    )


def evaluate_selection(
    scenes: list[SyntheticScene],
    params: FtsParams,
    ratio: float,
    intervals: ScaleIntervals | None = None,
) -> SelectionMetrics:
    """Metrics of the top-``ceil(ratio*N)`` tokens by scorer output, per scene."""
    if not scenes:
        raise ValueError("cannot evaluate on an empty scene list")
    geom = scenes[0].geometry
    if intervals is None:
        intervals = default_intervals(geom.num_levels)
    level_sizes = [w * h for _, w, h in geom.levels]
    per_scene = []
    for scene in scenes:
        with no_grad():
            scores = fts_forward(scene.pyramid, params)
        lbl = scene_labels(scene, intervals)
        flat_labels = np.concatenate([m.reshape(-1) for m in lbl.as_arrays()])
        per_scene.append((scores.flat(), flat_labels))
    return selection_metrics(per_scene, level_sizes, ratio)


METRICS_COLUMNS = (
    "ratio",
    "num_scenes",
    "budget",
    "positives",
    "hits",
    "recall",
    "precision",
    "mean_positive_score",
    "mean_negative_score",
)


def metrics_csv_text(metrics: SelectionMetrics) -> str:
    """Single-row CSV with a documented header (per-level recalls appended)."""
    levels = len(metrics.per_level_recall)
    header = ",".join(METRICS_COLUMNS + tuple(f"recall_level{l}" for l in range(levels)))
    row = [
        repr(metrics.ratio),
        str(metrics.num_scenes),
        str(metrics.budget),
        str(metrics.positives),
        str(metrics.hits),
        repr(metrics.recall),
        repr(metrics.precision),
        repr(metrics.mean_positive_score),
        repr(metrics.mean_negative_score),
    ] + [repr(v) for v in metrics.per_level_recall]
    return header + "\n" + ",".join(row) + "\n"


# -- full pipeline ----------------------------------------------------------------


@dataclass
class PipelineResult:
    tokens: Tensor
    trace: list[TokenSelection]
    metrics: SelectionMetrics
    scores_flat: np.ndarray


def run_pipeline(
    scene: SyntheticScene,
    fts_params: FtsParams,
    encoder_params: EncoderParams,
    head: CategoryHead,
    config: EncoderConfig,
    eval_ratio: float = 0.3,
    intervals: ScaleIntervals | None = None,
) -> PipelineResult:
    """Score, prune, and encode one scene; collect the layer trace and metrics."""
    if intervals is None:
        intervals = default_intervals(scene.geometry.num_levels)
    with no_grad():
        scores = fts_forward(scene.pyramid, fts_params)
        workspace = flatten_pyramid(scene.pyramid, scores)
        tokens, trace = encoder_forward(workspace, encoder_params, head, config)
    metrics = evaluate_selection([scene], fts_params, eval_ratio, intervals)
    return PipelineResult(
        tokens=tokens, trace=trace, metrics=metrics, scores_flat=scores.flat()
    )
