"""Placement accuracy (PCKh) and realism (Fréchet distance over deep
features) metrics, with pluggable pose and feature extractors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .conditioning import MeanCache, pose_features, truncate
from .networks import Generator, heatmap_pyramid
from .pose import K, NECK, NOSE, Pose


def head_size(pose: Pose) -> Optional[float]:
    """Nose-to-neck distance, or None when either keypoint is invisible."""
    if not (pose.visibility[NOSE] and pose.visibility[NECK]):
        return None
    return float(np.linalg.norm(pose.keypoints[NOSE] - pose.keypoints[NECK]))


def pckh(predicted: Sequence[Pose], reference: Sequence[Pose], alpha: float = 0.5) -> float:
    """Percent of reference-visible keypoints predicted within alpha * head size.

    Frames whose reference head size is undefined or zero are excluded. A
    reference-visible keypoint with an invisible prediction counts as
    incorrect.
    """
    if len(predicted) != len(reference):
        raise ValueError("predicted and reference lists must have equal length")
    correct = 0
    evaluated = 0
    for pred, ref in zip(predicted, reference):
        hs = head_size(ref)
        if hs is None or hs == 0.0:
            continue
        radius = alpha * hs
        for k in range(K):
            if not ref.visibility[k]:
                continue
            evaluated += 1
            if not pred.visibility[k]:
                continue
            d = np.linalg.norm(pred.keypoints[k] - ref.keypoints[k])
            if d <= radius:
                correct += 1
    if evaluated == 0:
        return 0.0
    return 100.0 * correct / evaluated


@dataclass
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape must match the mean dimension")


def fit_gaussian(features: np.ndarray) -> GaussianFit:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need an (N, d) feature matrix with N >= 2")
    return GaussianFit(mean=x.mean(axis=0), cov=np.cov(x, rowvar=False))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric matrix square root, clamping negative eigenvalues at 0."""
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a: GaussianFit, b: GaussianFit) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).

    The cross-covariance square root is computed through the symmetric
    product sqrt(Sa) Sb sqrt(Sa), so only eigendecompositions of symmetric
    matrices are involved.
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("Gaussian fits must share the feature dimension")
    diff = a.mean - b.mean
    sa_half = _psd_sqrt(a.cov)
    cross = _psd_sqrt(sa_half @ b.cov @ sa_half)
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross))


def fid(features_real: np.ndarray, features_fake: np.ndarray) -> float:
    fr = np.asarray(features_real)
    ff = np.asarray(features_fake)
    if fr.shape[-1] != ff.shape[-1]:
        raise ValueError("feature sets must share the embedding dimension")
    return frechet_distance(fit_gaussian(fr), fit_gaussian(ff))


class RandomConvEmbedder(nn.Module):
    """Deterministic fixed-seed convolutional feature extractor.

    Stands in for an Inception network in tests and toy evaluations; the
    random weights are frozen so features are reproducible.
    """

    def __init__(self, feature_dim: int = 64, seed: int = 0):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        chans = [3, 16, 32, feature_dim]
        self.convs = nn.ModuleList()
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=g) /
                                  math.sqrt(cin * 9))
                conv.bias.zero_()
            self.convs.append(conv)
        self.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = torch.relu(conv(x)) if conv is not self.convs[-1] else conv(x)
        return x.mean(dim=(2, 3))


def extract_features(images: Sequence[torch.Tensor], extractor: nn.Module,
                     batch_size: int = 64) -> np.ndarray:
    feats = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            batch = torch.stack([torch.as_tensor(im, dtype=torch.float32)
                                 for im in images[i:i + batch_size]])
            feats.append(extractor(batch).cpu().numpy())
    return np.concatenate(feats, axis=0)


def evaluate_model(generator: Generator, test_poses: Sequence[Pose],
                   pose_extractor: Callable[[torch.Tensor], Optional[Pose]],
                   feature_extractor: nn.Module,
                   real_images: Optional[Sequence[torch.Tensor]] = None,
                   psi: float = 0.75, alpha: float = 0.5, mean_samples: int = 1000,
                   seed: int = 0) -> dict:
    """Generate one psi-truncated image per test pose, then score PCKh
    against the input poses and FID against real images (when provided)."""
    cache = MeanCache(generator.mapping, n=mean_samples, seed=seed)
    g = torch.Generator().manual_seed(seed)
    images, preds, refs = [], [], []
    n_skipped = 0
    with torch.no_grad():
        for pose in test_poses:
            z = torch.randn(1, generator.cfg.z_dim, generator=g)
            w = generator.mapping(z, pose_features(pose))
            w = truncate(w, cache.get(pose)[None], psi)
            heat = heatmap_pyramid([pose], generator.cfg.scales)
            img = generator.synthesis(w, heat)[0]
            images.append(img)
            pred = pose_extractor(img)
            if pred is None:
                n_skipped += 1
                continue
            preds.append(pred)
            refs.append(pose)
    result = {
        "pckh": pckh(preds, refs, alpha) if refs else float("nan"),
        "n_eval": len(refs),
        "n_skipped": n_skipped,
        "alpha": alpha,
        "psi": psi,
    }
    if real_images is not None:
        fr = extract_features(list(real_images), feature_extractor)
        ff = extract_features(images, feature_extractor)
        result["fid"] = fid(fr, ff)
    return result
