"""Multi-scale pyramid geometry and scale-aware ground-truth label assignment.

Each pyramid level covers the image at one stride; a token is the feature
vector at one (level, column, row) cell. A token is labeled foreground when
its anchor pixel falls inside some box whose half-scale ``max(h/2, w/2)``
lies in that level's (overlapping) scale interval. ``assign_labels_oracle``
re-derives the same labels with a deliberately literal triple loop that
shares no code with the vectorized path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import Tensor

DEFAULT_STRIDES = (8, 16, 32, 64)
INFINITY_SENTINEL = 999999.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned box: center (x, y), size (w, h) in pixels, class index."""

    x: float
    y: float
    w: float
    h: float
    cls: int = 0

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box sides must be positive, got w={self.w}, h={self.h}")
        if self.cls < 0:
            raise ValueError(f"class index must be nonnegative, got {self.cls}")


@dataclass(frozen=True)
class BoxSet:
    boxes: tuple[Box, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self):
        return iter(self.boxes)


@dataclass(frozen=True)
class PyramidGeometry:
    """Image size plus the per-level (stride, map width, map height) triples."""

    image_w: int
    image_h: int
    strides: tuple[int, ...] = DEFAULT_STRIDES
    channels: int = 32

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError(f"image size must be positive, got {self.image_w}x{self.image_h}")
        if any(s <= 0 for s in self.strides):
            raise ValueError(f"strides must be positive, got {self.strides}")
        if any(a >= b for a, b in zip(self.strides, self.strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {self.strides}")
        if self.channels <= 0:
            raise ValueError("channel dim must be positive")

    @property
    def num_levels(self) -> int:
        return len(self.strides)

    def level_shape(self, level: int) -> tuple[int, int]:
        """(height, width) of the level's map."""
        s = self.strides[level]
        return math.ceil(self.image_h / s), math.ceil(self.image_w / s)

    @property
    def levels(self) -> list[tuple[int, int, int]]:
        """Per-level (stride, map width, map height)."""
        out = []
        for level, s in enumerate(self.strides):
            h, w = self.level_shape(level)
            out.append((s, w, h))
        return out

    @property
    def num_tokens(self) -> int:
        return sum(w * h for _, w, h in self.levels)


@dataclass(frozen=True)
class ScaleIntervals:
    """Per-level half-scale intervals (r_b, r_e]; the last one is unbounded."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        if not ivs:
            raise ValueError("at least one interval required")
        for rb, re_ in ivs:
            if rb >= re_:
                raise ValueError(f"interval lower bound {rb} >= upper bound {re_}")
        lowers = [rb for rb, _ in ivs]
        if any(a >= b for a, b in zip(lowers, lowers[1:])):
            raise ValueError(f"interval lower bounds must strictly increase: {lowers}")
        if ivs[-1][1] < INFINITY_SENTINEL:
            raise ValueError(
                f"last interval must be unbounded (upper >= {INFINITY_SENTINEL})"
            )

    def __len__(self) -> int:
        return len(self.intervals)

    def contains(self, level: int, d: float) -> bool:
        rb, re_ = self.intervals[level]
        return rb < d <= re_

    def eligible_levels(self, d: float) -> list[int]:
        return [l for l in range(len(self.intervals)) if self.contains(l, d)]


_DEFAULT_INTERVAL_TABLE = (
    (-1.0, 64.0),
    (64.0, 256.0),
    (128.0, 512.0),
    (256.0, INFINITY_SENTINEL),
)


def default_intervals(num_levels: int = 4) -> ScaleIntervals:
    """Overlapping half-scale intervals; lower bound -1 makes d=0 assignable.

    For fewer than four levels the table is truncated and the last interval
    made unbounded.
    """
    if not 1 <= num_levels <= len(_DEFAULT_INTERVAL_TABLE):
        raise ValueError(
            f"no default intervals for {num_levels} levels "
            f"(1..{len(_DEFAULT_INTERVAL_TABLE)} supported)"
        )
    rows = list(_DEFAULT_INTERVAL_TABLE[:num_levels])
    rows[-1] = (rows[-1][0], INFINITY_SENTINEL)
    return ScaleIntervals(tuple(rows))


def overlap_recurrence_intervals(
    upper_bounds: list[float], first_lower: float = 0.0
) -> ScaleIntervals:
    """Alternative generator: each lower bound is the previous interval's midpoint.

    Not the default; the concrete overlapping table disagrees with this
    recurrence, so ``default_intervals`` is preferred.
    """
    lowers = [float(first_lower)]
    for ub in upper_bounds[:-1]:
        lowers.append((lowers[-1] + float(ub)) / 2.0)
    return ScaleIntervals(tuple(zip(lowers, [float(u) for u in upper_bounds])))


@dataclass
class LabelPyramid:
    """Per-level binary maps: 1 marks a foreground token."""

    levels: list[Tensor] = field(default_factory=list)

    def as_arrays(self) -> list[np.ndarray]:
        return [lvl.data for lvl in self.levels]

    @property
    def num_positive(self) -> int:
        return int(sum(lvl.data.sum() for lvl in self.levels))


def token_coordinate(level: int, i: int, j: int, geom: PyramidGeometry) -> tuple[int, int]:
    """Image-pixel anchor of token (level, column i, row j)."""
    h, w = geom.level_shape(level)
    if not (0 <= i < w and 0 <= j < h):
        raise IndexError(f"token ({i}, {j}) outside {w}x{h} map at level {level}")
    s = geom.strides[level]
    return (s // 2 + i * s, s // 2 + j * s)


def box_scale(box: Box) -> float:
    """Half-scale of a box: max of half-height and half-width."""
    return max(box.h / 2.0, box.w / 2.0)


def assign_labels(
    boxes: BoxSet, geom: PyramidGeometry, intervals: ScaleIntervals
) -> LabelPyramid:
    """Label each token 1 iff its anchor sits in a box of matching scale."""
    if len(intervals) != geom.num_levels:
        raise ValueError(
            f"{len(intervals)} intervals for {geom.num_levels} pyramid levels"
        )
    out = LabelPyramid()
    for level in range(geom.num_levels):
        h, w = geom.level_shape(level)
        s = geom.strides[level]
        anchor_x = s // 2 + np.arange(w) * s
        anchor_y = s // 2 + np.arange(h) * s
        labels = np.zeros((h, w))
        for box in boxes:
            if not intervals.contains(level, box_scale(box)):
                continue
            in_x = (anchor_x >= box.x - box.w / 2.0) & (anchor_x <= box.x + box.w / 2.0)
            in_y = (anchor_y >= box.y - box.h / 2.0) & (anchor_y <= box.y + box.h / 2.0)
            labels[np.outer(in_y, in_x)] = 1.0
        out.levels.append(Tensor(labels))
    return out


def assign_labels_oracle(
    boxes: BoxSet, geom: PyramidGeometry, intervals: ScaleIntervals
) -> LabelPyramid:
    """Most-literal re-derivation of ``assign_labels``: one token, one box at a time."""
    if len(intervals) != geom.num_levels:
        raise ValueError(
            f"{len(intervals)} intervals for {geom.num_levels} pyramid levels"
        )
    out = LabelPyramid()
    for level in range(geom.num_levels):
        stride = geom.strides[level]
        height = math.ceil(geom.image_h / stride)
        width = math.ceil(geom.image_w / stride)
        rb, re_ = intervals.intervals[level]
        labels = np.zeros((height, width))
        for j in range(height):
            for i in range(width):
                x = stride // 2 + i * stride
                y = stride // 2 + j * stride
                hit = 0.0
                for box in boxes:
                    d = box.h / 2.0
                    if box.w / 2.0 > d:
                        d = box.w / 2.0
                    if not (rb < d <= re_):
                        continue
                    if x < box.x - box.w / 2.0 or x > box.x + box.w / 2.0:
                        continue
                    if y < box.y - box.h / 2.0 or y > box.y + box.h / 2.0:
                        continue
                    hit = 1.0
                    break
                labels[j, i] = hit
        out.levels.append(Tensor(labels))
    return out
