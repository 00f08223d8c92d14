"""Procedural stick-figure dataset for toy-scale training and evaluation.

Each sample is a rigid canonical skeleton translated to a random position,
drawn in white on a background whose colors depend on the figure position
(so scene content is genuinely pose-correlated). Because the skeleton is
rigid, an oracle pose extractor can recover the full pose from the figure
centroid alone.
"""

from __future__ import annotations

from typing import List, Optional, Tuple

import numpy as np
import torch

from .pose import K, Pose

# canonical skeleton, neck at the origin, y down, roughly 30px tall before scaling
_CANONICAL = np.array([
    (0.0, -6.0),    # nose
    (0.0, 0.0),     # neck
    (-4.0, 0.0), (-5.0, 5.0), (-6.0, 10.0),   # right arm
    (4.0, 0.0), (5.0, 5.0), (6.0, 10.0),      # left arm
    (-2.5, 10.0), (-3.0, 16.0), (-3.0, 22.0),  # right leg
    (2.5, 10.0), (3.0, 16.0), (3.0, 22.0),     # left leg
    (-1.5, -7.0), (1.5, -7.0),                 # eyes
    (-3.0, -6.0), (3.0, -6.0),                 # ears
])

_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7),
    (1, 8), (8, 9), (9, 10), (1, 11), (11, 12), (12, 13),
    (0, 14), (0, 15), (14, 16), (15, 17),
]


def canonical_skeleton(resolution: int) -> np.ndarray:
    """Canonical keypoint offsets scaled to the working resolution."""
    return _CANONICAL * (resolution / 32.0) * 0.7


def _draw_figure(img: np.ndarray, keypoints: np.ndarray) -> None:
    r = img.shape[-1]
    for a, b in _EDGES:
        pa, pb = keypoints[a], keypoints[b]
        n = max(2, int(np.ceil(np.linalg.norm(pb - pa) * 3)))
        for t in np.linspace(0.0, 1.0, n):
            x, y = pa + t * (pb - pa)
            i, j = int(y), int(x)
            if 0 <= i < r and 0 <= j < r:
                img[:, i, j] = 1.0


def _figure_centroid_offset(resolution: int) -> np.ndarray:
    """Centroid of the rasterized canonical figure, relative to the neck."""
    skel = canonical_skeleton(resolution)
    center = np.array([resolution * 4.0, resolution * 4.0])
    img = np.full((1, resolution * 8, resolution * 8), -1.0, dtype=np.float64)
    _draw_figure(img, skel + center)
    ys, xs = np.nonzero(img[0] > 0)
    centroid = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
    return centroid - center


def _background(resolution: int, center: np.ndarray) -> np.ndarray:
    """Dark background whose hue encodes the figure position."""
    r = resolution
    fx, fy = center[0] / r, center[1] / r
    base = np.array([fx, fy, 1.0 - fx]) * 0.7  # in [0, 0.7]
    grad = np.linspace(0.0, 0.2, r)[None, :, None]  # vertical gradient
    img = np.broadcast_to(base[:, None, None], (3, r, r)).copy()
    img = img + np.transpose(grad, (2, 1, 0))
    return (img * 0.8 - 1.0).astype(np.float64)  # values in [-1, -0.28]


class ToyPoseDataset:
    """~2k stick figures on pose-correlated backgrounds, default 32x32."""

    def __init__(self, n: int = 2000, resolution: int = 32, seed: int = 0):
        self.resolution = resolution
        self.skeleton = canonical_skeleton(resolution)
        rng = np.random.default_rng(seed)
        lo = -self.skeleton.min(axis=0) + 1.0
        hi = resolution - self.skeleton.max(axis=0) - 2.0
        self.images: List[np.ndarray] = []
        self.poses: List[Pose] = []
        for _ in range(n):
            center = rng.uniform(lo, hi)
            kp = self.skeleton + center
            img = _background(resolution, center)
            _draw_figure(img, kp)
            self.images.append(img.astype(np.float32))
            self.poses.append(Pose(keypoints=kp, visibility=np.ones(K, dtype=bool),
                                   reference_resolution=resolution))

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int) -> Tuple[np.ndarray, Pose]:
        return self.images[i], self.poses[i]


def make_oracle_extractor(resolution: int, threshold: float = 0.3):
    """Pose extractor exploiting the rigid toy skeleton.

    Locates the figure by the centroid of bright pixels and places the
    canonical skeleton there. Falls back to the brightest pixels when
    nothing clears the threshold, so it never fails.
    """
    skel = canonical_skeleton(resolution)
    offset = _figure_centroid_offset(resolution)

    def extract(img) -> Optional[Pose]:
        arr = img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
        lum = arr.mean(axis=0)
        ys, xs = np.nonzero(lum > threshold)
        if len(xs) == 0:
            flat = np.argsort(lum, axis=None)[-20:]
            ys, xs = np.unravel_index(flat, lum.shape)
        centroid = np.array([xs.mean() + 0.5, ys.mean() + 0.5])
        kp = skel + (centroid - offset)
        vis = (kp[:, 0] >= 0) & (kp[:, 0] < resolution) & \
              (kp[:, 1] >= 0) & (kp[:, 1] < resolution)
        kp = kp * vis[:, None]
        return Pose(keypoints=kp, visibility=vis, reference_resolution=resolution)

    return extract
