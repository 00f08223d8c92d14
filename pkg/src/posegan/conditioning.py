"""Pose-latent conditioning: learned pose projection + MLP mapping, and
conditional truncation toward per-pose latent means."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable, Optional, Sequence, Union

import numpy as np
import torch
from torch import nn

from .layers import EqualLinear, leaky
from .pose import K, Pose, flatten_pose

POSE_DIM = 3 * K


def pose_features(poses: Union[Pose, Sequence[Pose]]) -> torch.Tensor:
    """Flattened pose vectors as a (B, 54) float tensor."""
    if isinstance(poses, Pose):
        poses = [poses]
    feats = np.stack([flatten_pose(p) for p in poses])
    return torch.from_numpy(feats).to(torch.get_default_dtype())


class MappingNetwork(nn.Module):
    """Maps (pose, z) to the scene latent w.

    The pose is flattened, linearly projected to `embed_dim`, concatenated
    with z, normalized, and passed through an MLP. The discriminator uses its
    own instance with z_dim=0 (pose embedding only). The projection has no
    bias so a zero pose maps to a zero embedding.
    """

    def __init__(self, z_dim=512, w_dim=512, embed_dim=512, depth=8, lr_mul=0.01):
        super().__init__()
        self.z_dim = z_dim
        self.w_dim = w_dim
        self.embed_dim = embed_dim
        self.pose_projection = EqualLinear(POSE_DIM, embed_dim, bias=False)
        dims = [embed_dim + z_dim] + [w_dim] * depth
        self.mlp = nn.ModuleList(
            EqualLinear(a, b, lr_mul=lr_mul) for a, b in zip(dims[:-1], dims[1:])
        )

    def embed_pose(self, pose_feat: torch.Tensor) -> torch.Tensor:
        return self.pose_projection(pose_feat)

    def forward(self, z: Optional[torch.Tensor], pose_feat: torch.Tensor) -> torch.Tensor:
        e = self.embed_pose(pose_feat)
        if self.z_dim:
            if z is None or z.shape[-1] != self.z_dim:
                raise ValueError(f"z must have dimension {self.z_dim}")
            x = torch.cat([e, z], dim=-1)
        else:
            x = e
        x = x * torch.rsqrt(x.pow(2).mean(dim=-1, keepdim=True) + 1e-8)
        for layer in self.mlp:
            x = leaky(layer(x))
        return x


def map_latent(mapping: MappingNetwork, z: torch.Tensor, pose: Pose) -> torch.Tensor:
    squeeze = z.dim() == 1
    if squeeze:
        z = z[None]
    w = mapping(z, pose_features(pose).expand(z.shape[0], -1))
    return w[0] if squeeze else w


def conditional_mean(mapping, pose: Pose, n: int = 1000, seed: int = 0) -> torch.Tensor:
    """Monte-Carlo estimate of E_z[w | pose] over n fresh noise draws.

    `mapping` may be a MappingNetwork or any callable (z, pose_feat) -> w.
    """
    if n < 1:
        raise ValueError("sample count must be >= 1")
    g = torch.Generator().manual_seed(seed)
    z_dim = mapping.z_dim if hasattr(mapping, "z_dim") else 512
    feat = pose_features(pose)
    total = None
    with torch.no_grad():
        for start in range(0, n, 1024):
            b = min(1024, n - start)
            z = torch.randn(b, z_dim, generator=g)
            w = mapping(z, feat.expand(b, -1))
            s = w.sum(dim=0)
            total = s if total is None else total + s
    return total / n


def unconditional_mean(mapping, poses: Sequence[Pose], n: int = 10000, seed: int = 0) -> torch.Tensor:
    """Mean latent over random (pose, z) pairs, poses drawn from `poses`."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    if not poses:
        raise ValueError("need at least one pose")
    g = torch.Generator().manual_seed(seed)
    z_dim = mapping.z_dim if hasattr(mapping, "z_dim") else 512
    feats = pose_features(list(poses))
    total = None
    with torch.no_grad():
        for start in range(0, n, 1024):
            b = min(1024, n - start)
            idx = torch.randint(len(poses), (b,), generator=g)
            z = torch.randn(b, z_dim, generator=g)
            w = mapping(z, feats[idx])
            s = w.sum(dim=0)
            total = s if total is None else total + s
    return total / n


def truncate(w, w_mean, psi: float):
    """Interpolate w toward a mean latent: w' = w_mean + psi * (w - w_mean)."""
    return w_mean + psi * (w - w_mean)


def pose_hash(pose: Pose, decimals: int = 2) -> str:
    """Stable key for a pose, quantized so float jitter does not split cache entries."""
    kp = np.round(pose.keypoints / pose.reference_resolution, decimals)
    kp = kp * pose.visibility[:, None]
    payload = kp.tobytes() + pose.visibility.tobytes()
    return hashlib.sha1(payload).hexdigest()[:16]


class MeanCache:
    """Per-pose conditional-mean table, exportable as JSON for the CLI."""

    def __init__(self, mapping=None, n: int = 1000, seed: int = 0):
        self.mapping = mapping
        self.n = n
        self.seed = seed
        self._table: dict = {}

    def get(self, pose: Pose) -> torch.Tensor:
        key = pose_hash(pose)
        if key not in self._table:
            if self.mapping is None:
                raise KeyError(f"no cached mean for pose {key}")
            self._table[key] = conditional_mean(self.mapping, pose, self.n, self.seed)
        return self._table[key]

    def save(self, path):
        obj = {k: v.tolist() for k, v in self._table.items()}
        with open(path, "w") as f:
            json.dump(obj, f)

    @classmethod
    def load(cls, path, mapping=None, n: int = 1000, seed: int = 0) -> "MeanCache":
        cache = cls(mapping, n, seed)
        with open(path) as f:
            obj = json.load(f)
        cache._table = {k: torch.tensor(v) for k, v in obj.items()}
        return cache
