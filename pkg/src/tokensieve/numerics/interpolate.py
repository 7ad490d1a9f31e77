"""Differentiable bilinear sampling and upsampling.

Both ops use align-corners-false semantics: the center of pixel ``i`` on an
axis of length ``n`` sits at normalized coordinate ``(i + 0.5) / n``.
Out-of-range coordinates clamp to the border (border replication).
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, _make, reshape


def bilinear_sample(inputs: Tensor, points: Tensor) -> Tensor:
    """Sample ``inputs`` [H, W, C] at ``points`` [P, 2] of normalized (u, v).

    ``u`` runs along width, ``v`` along height. Differentiable with respect
    to both the map and the points; the point gradient is zero where a
    coordinate is clamped at the border.
    """
    if inputs.ndim != 3:
        raise ValueError(f"bilinear_sample expects [H, W, C] input, got {inputs.shape}")
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"points must be [P, 2], got {points.shape}")
    H, W, C = inputs.shape
    V = inputs.data

    u = points.data[:, 0]
    v = points.data[:, 1]
    xc = u * W - 0.5
    yc = v * H - 0.5
    # clamp zone kills the point gradient (constant w.r.t. the coordinate)
    in_x = (xc >= 0.0) & (xc <= W - 1.0)
    in_y = (yc >= 0.0) & (yc <= H - 1.0)
    x = np.clip(xc, 0.0, W - 1.0)
    y = np.clip(yc, 0.0, H - 1.0)

    x0 = np.clip(np.floor(x), 0, max(W - 2, 0)).astype(np.intp)
    y0 = np.clip(np.floor(y), 0, max(H - 2, 0)).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    tx = (x - x0)[:, None]
    ty = (y - y0)[:, None]

    v00 = V[y0, x0]
    v01 = V[y0, x1]
    v10 = V[y1, x0]
    v11 = V[y1, x1]
    out_data = (
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01)
        + ty * ((1.0 - tx) * v10 + tx * v11)
    )

    def bw(g):
        g_map = np.zeros_like(V).reshape(H * W, C)
        flat00 = y0 * W + x0
        flat01 = y0 * W + x1
        flat10 = y1 * W + x0
        flat11 = y1 * W + x1
        np.add.at(g_map, flat00, (1.0 - ty) * (1.0 - tx) * g)
        np.add.at(g_map, flat01, (1.0 - ty) * tx * g)
        np.add.at(g_map, flat10, ty * (1.0 - tx) * g)
        np.add.at(g_map, flat11, ty * tx * g)

        d_dx = ((1.0 - ty) * (v01 - v00) + ty * (v11 - v10)) * g
        d_dy = ((1.0 - tx) * (v10 - v00) + tx * (v11 - v01)) * g
        g_pts = np.empty_like(points.data)
        g_pts[:, 0] = d_dx.sum(axis=1) * W * in_x
        g_pts[:, 1] = d_dy.sum(axis=1) * H * in_y
        return g_map.reshape(H, W, C), g_pts

    return _make(out_data, (inputs, points), bw)


def upsample_grid(target_h: int, target_w: int) -> np.ndarray:
    """Normalized pixel-center coordinates [H2*W2, 2] of the target grid."""
    u = (np.arange(target_w) + 0.5) / target_w
    v = (np.arange(target_h) + 0.5) / target_h
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu.reshape(-1), vv.reshape(-1)], axis=1)


def bilinear_upsample(inputs: Tensor, target: tuple[int, int]) -> Tensor:
    """Resize a 2-D map [H, W] to [H2, W2] with H2 >= H, W2 >= W."""
    if inputs.ndim != 2:
        raise ValueError(f"bilinear_upsample expects a 2-D map, got {inputs.shape}")
    H, W = inputs.shape
    H2, W2 = int(target[0]), int(target[1])
    if H2 <= 0 or W2 <= 0:
        raise ValueError(f"target size must be positive, got {(H2, W2)}")
    if H2 < H or W2 < W:
        raise ValueError(f"upsample target {(H2, W2)} smaller than source {(H, W)}")
    points = Tensor(upsample_grid(H2, W2))
    sampled = bilinear_sample(reshape(inputs, (H, W, 1)), points)
    return reshape(sampled, (H2, W2))
