"""Latent composition: render scene-only / subject-only images, place the
person from one generated image into another scene by optimizing a
per-scale latent, and animate a pose sequence with a fixed scene latent."""

from __future__ import annotations

from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import pose_features
from .networks import Generator, heatmap_pyramid
from .pose import Pose

Latent = Union[torch.Tensor, List[torch.Tensor]]


def _as_ws(generator: Generator, latent: Latent) -> List[torch.Tensor]:
    n = len(generator.cfg.scales)
    if isinstance(latent, (list, tuple)):
        if len(latent) != n:
            raise ValueError(f"per-scale latent needs {n} entries")
        return [w if w.dim() == 2 else w[None] for w in latent]
    w = latent if latent.dim() == 2 else latent[None]
    return [w] * n


def render_scene_only(generator: Generator, latent: Latent) -> torch.Tensor:
    """Generate with an all-zero heatmap pyramid: the scene without the human."""
    ws = _as_ws(generator, latent)
    b = ws[0].shape[0]
    heat = heatmap_pyramid([None] * b, generator.cfg.scales, zero=True)
    return generator.synthesis(ws, heat)


def render_subject_only(generator: Generator, latent: Latent, pose: Pose) -> torch.Tensor:
    """Generate with the learned constant input zeroed; isolates the subject."""
    ws = _as_ws(generator, latent)
    heat = heatmap_pyramid([pose] * ws[0].shape[0], generator.cfg.scales)
    return generator.synthesis(ws, heat, zero_constant=True)


def person_crop(pose: Pose, margin: float = 0.1) -> tuple:
    """Axis-aligned box around the visible keypoints, expanded by a margin
    fraction of the box size and clamped to the frame. Returns (x0, y0, x1, y1)."""
    if not pose.visibility.any():
        raise ValueError("pose has no visible keypoints")
    kp = pose.keypoints[pose.visibility]
    r = float(pose.reference_resolution)
    x0, y0 = kp.min(axis=0)
    x1, y1 = kp.max(axis=0)
    mx = margin * max(x1 - x0, 1.0)
    my = margin * max(y1 - y0, 1.0)
    return (max(0.0, x0 - mx), max(0.0, y0 - my),
            min(r, x1 + mx), min(r, y1 + my))


def _crop_patch(img: torch.Tensor, box: tuple, resolution: int,
                patch_size: int = 64) -> torch.Tensor:
    """Crop a (possibly fractional) box and resize to a fixed patch."""
    x0, y0, x1, y1 = box
    size = img.shape[-1]
    s = size / resolution
    ix0, iy0 = int(np.floor(x0 * s)), int(np.floor(y0 * s))
    ix1, iy1 = max(ix0 + 1, int(np.ceil(x1 * s))), max(iy0 + 1, int(np.ceil(y1 * s)))
    patch = img[..., iy0:iy1, ix0:ix1]
    if patch.dim() == 3:
        patch = patch[None]
    return F.interpolate(patch, size=(patch_size, patch_size), mode="bilinear",
                         align_corners=False)


class PerceptualLoss(nn.Module):
    """Layered feature distance using a frozen extractor.

    The default extractor in tests is a fixed-seed random network; any
    module returning a feature map or a list of feature maps works.
    """

    def __init__(self, extractor: nn.Module):
        super().__init__()
        self.extractor = extractor

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        fa, fb = self.extractor(a), self.extractor(b)
        if not isinstance(fa, (list, tuple)):
            fa, fb = [fa], [fb]
        return sum(F.mse_loss(x, y) for x, y in zip(fa, fb))


def compose(generator: Generator, latent_person: Latent, latent_scene: Latent,
            pose: Pose, perceptual: PerceptualLoss, steps: int = 1000,
            lr: float = 0.05, log_fn: Optional[Callable[[int, float], None]] = None):
    """Optimize a per-scale latent whose subject matches one image and whose
    scene matches another.

    Minimizes perceptual loss between subject-only crops (person source) and
    scene-only renders (scene source). The latent is initialized from the
    scene source broadcast to every scale. Returns (per-scale latent list,
    composite image, loss history).
    """
    generator.requires_grad_(False)
    with torch.no_grad():
        target_subject = render_subject_only(generator, latent_person, pose)
        target_scene = render_scene_only(generator, latent_scene)
    box = person_crop(pose)
    res = pose.reference_resolution
    target_patch = _crop_patch(target_subject, box, res)

    init = _as_ws(generator, latent_scene)
    ws = [w.detach().clone().requires_grad_(True) for w in init]
    if steps == 0:
        with torch.no_grad():
            composite = generator.synthesis([w.detach() for w in ws],
                                            heatmap_pyramid([pose], generator.cfg.scales))
        return [w.detach() for w in ws], composite[0], []

    opt = torch.optim.Adam(ws, lr=lr)
    history = []
    for step in range(steps):
        subject = render_subject_only(generator, ws, pose)
        scene = render_scene_only(generator, ws)
        loss = perceptual(_crop_patch(subject, box, res), target_patch) \
            + perceptual(scene, target_scene)
        if not torch.isfinite(loss):
            raise RuntimeError(f"non-finite composition loss at step {step}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        history.append(loss.item())
        if log_fn:
            log_fn(step, history[-1])
    ws = [w.detach() for w in ws]
    with torch.no_grad():
        composite = generator.synthesis(ws, heatmap_pyramid([pose], generator.cfg.scales))
    return ws, composite[0], history


def animate(generator: Generator, pose_sequence: Sequence[Pose],
            z: Optional[torch.Tensor] = None, w: Optional[torch.Tensor] = None) -> List[torch.Tensor]:
    """Infer the scene latent from the first pose only, then render every
    pose in the sequence with that fixed latent."""
    if not pose_sequence:
        raise ValueError("pose sequence is empty")
    with torch.no_grad():
        if w is None:
            if z is None:
                raise ValueError("provide either z or w")
            if z.dim() == 1:
                z = z[None]
            w = generator.mapping(z, pose_features(pose_sequence[0]))
        elif w.dim() == 1:
            w = w[None]
        frames = []
        for pose in pose_sequence:
            heat = heatmap_pyramid([pose], generator.cfg.scales)
            frames.append(generator.synthesis(w, heat)[0])
    return frames
