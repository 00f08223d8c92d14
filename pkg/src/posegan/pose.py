"""2D pose representation, keypoint heatmap rendering, and pose-space transforms.

Poses use the 18-keypoint OpenPose BODY layout. Heatmaps are radial basis
bumps rendered on a pixel-center grid, re-rendered analytically at every
resolution (the kernel width depends on the target resolution).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

K = 18

KEYPOINT_NAMES = [
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
]

# (right, left) index pairs swapped under horizontal flip
FLIP_PAIRS = [(2, 5), (3, 6), (4, 7), (8, 11), (9, 12), (10, 13), (14, 15), (16, 17)]

# indices counted for the "8 of 14" curation rule (everything but eyes/ears)
BODY_14 = list(range(14))
NECK = 1
NOSE = 0


def sigma_squared(resolution: int) -> float:
    """Kernel variance for heatmaps at a given resolution: max(0.5, 0.005 R^2)."""
    return max(0.5, 0.005 * resolution * resolution)


@dataclass(frozen=True)
class Pose:
    """18 keypoints in pixel units of a square reference resolution."""

    keypoints: np.ndarray  # (18, 2) float
    visibility: np.ndarray  # (18,) bool
    reference_resolution: int

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(K, 2)
        vis = np.asarray(self.visibility, dtype=bool).reshape(K)
        if self.reference_resolution <= 0:
            raise ValueError("reference_resolution must be positive")
        r = float(self.reference_resolution)
        if vis.any():
            v = kp[vis]
            if (v < 0).any() or (v >= r).any():
                raise ValueError("visible keypoints must lie in [0, reference_resolution)")
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "visibility", vis)

    def to_json(self) -> dict:
        return {
            "keypoints": [[float(x), float(y)] for x, y in self.keypoints],
            "visibility": [bool(v) for v in self.visibility],
            "ref": int(self.reference_resolution),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Pose":
        return cls(
            keypoints=np.asarray(obj["keypoints"], dtype=np.float64),
            visibility=np.asarray(obj["visibility"], dtype=bool),
            reference_resolution=int(obj["ref"]),
        )


@dataclass(frozen=True)
class HeatmapStack:
    """K per-keypoint RBF images at one resolution, values in [0, 1]."""

    resolution: int
    data: np.ndarray  # (K, R, R) float64

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.shape != (K, self.resolution, self.resolution):
            raise ValueError(f"heatmap data must have shape ({K}, R, R)")
        object.__setattr__(self, "data", d)


@dataclass(frozen=True)
class SpatialTransform:
    """Flip/scale/translate applied jointly to image pixels and keypoints.

    Translation is a fraction of the image size; cutout (when present) is a
    (cx, cy, half_w, half_h) rectangle in fractional units and does not move
    the pose. Half-extents are fixed at 1/4 per axis (half-size cutout).
    """

    horizontal_flip: bool = False
    scale: float = 1.0
    translation: tuple = (0.0, 0.0)
    cutout: Optional[tuple] = None  # (cx, cy, half_w, half_h) fractions

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")


def render_heatmaps(pose: Pose, resolution: int) -> HeatmapStack:
    """Render the K radial-basis heatmaps of a pose at the given resolution.

    Channel k at grid point q (pixel centers, q = index + 0.5) is
    exp(-||q - p_k||^2 / (2 sigma^2)) for visible keypoints and identically
    zero otherwise. Keypoints are rescaled linearly from the pose's reference
    resolution to `resolution`.
    """
    if resolution < 1:
        raise ValueError("resolution must be a positive integer")
    r = int(resolution)
    s2 = sigma_squared(r)
    scale = r / pose.reference_resolution
    coords = (np.arange(r, dtype=np.float64) + 0.5)
    gy, gx = np.meshgrid(coords, coords, indexing="ij")
    data = np.zeros((K, r, r), dtype=np.float64)
    for k in range(K):
        if not pose.visibility[k]:
            continue
        px, py = pose.keypoints[k] * scale
        d2 = (gx - px) ** 2 + (gy - py) ** 2
        data[k] = np.exp(-d2 / (2.0 * s2))
    return HeatmapStack(resolution=r, data=data)


def render_pyramid(pose: Pose, resolutions: Sequence[int]) -> list:
    """Render one heatmap stack per resolution, each with its own sigma^2."""
    res = list(resolutions)
    if not res:
        raise ValueError("resolutions must be a non-empty ascending list")
    if any(b <= a for a, b in zip(res, res[1:])):
        raise ValueError("resolutions must be strictly increasing")
    return [render_heatmaps(pose, r) for r in res]


def flatten_pose(pose: Pose) -> np.ndarray:
    """Flatten to [x1, y1, ..., xK, yK, v1, ..., vK], coordinates in [0, 1].

    Invisible keypoints have their coordinate slots zeroed so the embedding
    ignores whatever values they carry.
    """
    vis = pose.visibility.astype(np.float64)
    xy = pose.keypoints / pose.reference_resolution
    xy = xy * vis[:, None]
    return np.concatenate([xy.reshape(-1), vis])


def transform_pose(pose: Pose, t: SpatialTransform, image_size: int) -> Pose:
    """Apply flip, then scale about the image center, then translate.

    Mirrors the pixel-space warp used by the augmentation pipeline. Flip is
    about the continuous image center (x -> W - x) so it matches an exact
    pixel-array reversal on the pixel-center grid, and swaps left/right
    keypoint labels. Keypoints that land outside [0, W) become invisible.
    Cutout never changes the pose.
    """
    if image_size <= 0:
        raise ValueError("image_size must be positive")
    w = float(image_size)
    kp = pose.keypoints.copy()
    vis = pose.visibility.copy()
    if t.horizontal_flip:
        kp[:, 0] = w - kp[:, 0]
        for a, b in FLIP_PAIRS:
            kp[[a, b]] = kp[[b, a]]
            vis[[a, b]] = vis[[b, a]]
    c = w / 2.0
    kp = c + t.scale * (kp - c)
    kp[:, 0] += t.translation[0] * w
    kp[:, 1] += t.translation[1] * w
    out = (kp[:, 0] < 0) | (kp[:, 0] >= w) | (kp[:, 1] < 0) | (kp[:, 1] >= w)
    vis = vis & ~out
    kp[~vis] = 0.0
    return Pose(keypoints=kp, visibility=vis, reference_resolution=image_size)


def all_invisible_pose(reference_resolution: int) -> Pose:
    """Pose carrying no keypoints; renders to all-zero heatmaps."""
    return Pose(
        keypoints=np.zeros((K, 2)),
        visibility=np.zeros(K, dtype=bool),
        reference_resolution=reference_resolution,
    )
