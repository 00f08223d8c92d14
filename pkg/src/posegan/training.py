"""Adversarial training: non-saturating logistic losses with mismatch
discrimination, R1 and path-length regularization (lazy), differentiable
augmentation of discriminator inputs, and an EMA generator copy."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .conditioning import pose_features
from .networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
                       heatmap_pyramid, save_checkpoint)
from .pose import K, Pose, SpatialTransform, transform_pose


@dataclass
class AugmentConfig:
    color: bool = True
    spatial: bool = True
    cutout: bool = True

    @property
    def enabled(self) -> bool:
        return self.color or self.spatial or self.cutout


@dataclass
class TrainConfig:
    learning_rate: float = 2.5e-3
    batch_size: int = 40
    r1_gamma: float = 0.05
    ema_beta: float = 0.995
    ema_warmup_steps: int = 150000
    d_reg_interval: int = 16
    g_reg_interval: int = 8
    pl_decay: float = 0.99
    pl_weight: float = 2.0
    total_steps: int = 1000
    mismatch: bool = True
    # "both" | "latent_only" | "heatmap_only"
    conditioning: str = "both"
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    adam_betas: Tuple[float, float] = (0.0, 0.99)
    seed: int = 0
    checkpoint_interval: int = 0  # 0: only final
    log_interval: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError("learning_rate and batch_size must be positive")
        if self.r1_gamma < 0:
            raise ValueError("r1_gamma must be >= 0")
        if not 0 < self.ema_beta < 1:
            raise ValueError("ema_beta must lie in (0, 1)")
        if self.conditioning not in ("both", "latent_only", "heatmap_only"):
            raise ValueError(f"unknown conditioning mode {self.conditioning!r}")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)


def sample_transform(rng: np.random.Generator, aug: AugmentConfig) -> SpatialTransform:
    flip, scale, tx, ty = False, 1.0, 0.0, 0.0
    if aug.spatial:
        flip = rng.random() < 0.5
        scale = rng.uniform(0.8, 1.25)
        tx = rng.uniform(-0.125, 0.125)
        ty = rng.uniform(-0.125, 0.125)
    cut = None
    if aug.cutout:
        # quarter half-extents; center constrained so the box stays in frame
        cut = (rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), 0.25, 0.25)
    return SpatialTransform(horizontal_flip=flip, scale=scale, translation=(tx, ty), cutout=cut)


def _warp_images(images: torch.Tensor, transforms: Sequence[SpatialTransform]) -> torch.Tensor:
    """Per-sample flip/scale/translate, matching transform_pose's convention."""
    b, _, h, w = images.shape
    theta = torch.zeros(b, 2, 3, dtype=images.dtype)
    for i, t in enumerate(transforms):
        f = -1.0 if t.horizontal_flip else 1.0
        theta[i, 0, 0] = f / t.scale
        theta[i, 0, 2] = -f * 2.0 * t.translation[0] / t.scale
        theta[i, 1, 1] = 1.0 / t.scale
        theta[i, 1, 2] = -2.0 * t.translation[1] / t.scale
    grid = F.affine_grid(theta, list(images.shape), align_corners=False)
    return F.grid_sample(images, grid, mode="bilinear", padding_mode="zeros",
                         align_corners=False)


def _apply_cutout(images: torch.Tensor, transforms: Sequence[SpatialTransform]) -> torch.Tensor:
    b, _, h, w = images.shape
    mask = torch.ones(b, 1, h, w, dtype=images.dtype)
    for i, t in enumerate(transforms):
        if t.cutout is None:
            continue
        cx, cy, hw, hh = t.cutout
        x0 = int(round((cx - hw) * w))
        y0 = int(round((cy - hh) * h))
        mask[i, :, y0:y0 + h // 2, x0:x0 + w // 2] = 0.0
    return images * mask


def augment_batch(images: torch.Tensor, poses: Sequence[Pose], rng: np.random.Generator,
                  aug: AugmentConfig) -> Tuple[torch.Tensor, List[Pose]]:
    """Color, spatial and cutout augmentation; spatial parts move the pose too.

    Differentiable with respect to the images. Brightness offsets by up to a
    quarter of full scale, saturation pulls channels toward the per-pixel
    mean, contrast toward the per-image mean.
    """
    b = images.shape[0]
    size = images.shape[-1]
    x = images
    if aug.color:
        bright = torch.as_tensor(rng.uniform(-0.25, 0.25, b), dtype=x.dtype) * 2.0
        sat = torch.as_tensor(rng.uniform(0.0, 2.0, b), dtype=x.dtype)
        con = torch.as_tensor(rng.uniform(0.5, 1.5, b), dtype=x.dtype)
        x = x + bright[:, None, None, None]
        px_mean = x.mean(dim=1, keepdim=True)
        x = px_mean + sat[:, None, None, None] * (x - px_mean)
        im_mean = x.mean(dim=(1, 2, 3), keepdim=True)
        x = im_mean + con[:, None, None, None] * (x - im_mean)
    transforms = [sample_transform(rng, aug) for _ in range(b)]
    new_poses = [transform_pose(p, t, size) for p, t in zip(poses, transforms)]
    if aug.spatial:
        x = _warp_images(x, transforms)
    if aug.cutout:
        x = _apply_cutout(x, transforms)
    return x, new_poses


def augment(image: torch.Tensor, pose: Pose, rng: np.random.Generator,
            aug: Optional[AugmentConfig] = None) -> Tuple[torch.Tensor, Pose]:
    """Single-sample convenience wrapper around augment_batch."""
    aug = aug if aug is not None else AugmentConfig()
    x, poses = augment_batch(image[None], [pose], rng, aug)
    return x[0], poses[0]


def _cond_features(poses: Sequence[Pose], mode: str) -> torch.Tensor:
    feat = pose_features(list(poses))
    if mode == "heatmap_only":
        feat = torch.zeros_like(feat)
    return feat


def _cond_heatmaps(poses: Sequence[Pose], scales: Sequence[int], mode: str):
    return heatmap_pyramid(list(poses), scales, zero=(mode == "latent_only"))


def generate_fakes(g: Generator, poses: Sequence[Pose], z: torch.Tensor, mode: str = "both"):
    feat = _cond_features(poses, mode)
    heat = _cond_heatmaps(poses, g.cfg.scales, mode)
    w = g.mapping(z, feat)
    return g.synthesis(w, heat)


def _d_logits(d: Discriminator, images: torch.Tensor, poses: Sequence[Pose], mode: str):
    feat = _cond_features(poses, mode)
    heat = _cond_heatmaps(poses, [d.cfg.input_resolution], mode)[0]
    return d(images, heat, feat)


def d_loss(real_images: torch.Tensor, poses: Sequence[Pose], g: Generator, d: Discriminator,
           rng: np.random.Generator, torch_rng: torch.Generator, cfg: TrainConfig):
    """Non-saturating discriminator loss with optional mismatch branch.

    Real, fake and mismatched-real branches are each augmented independently
    with pose-consistent transforms; the mismatch branch pairs each real
    image with the next sample's pose (roll by one).
    """
    b = real_images.shape[0]
    if b < 2:
        raise ValueError("mismatch discrimination needs a batch of at least 2")
    mode = cfg.conditioning
    z = torch.randn(b, g.cfg.z_dim, generator=torch_rng)
    with torch.no_grad():
        fake = generate_fakes(g, poses, z, mode)

    real_a, poses_ra = augment_batch(real_images, poses, rng, cfg.augment)
    fake_a, poses_fa = augment_batch(fake, poses, rng, cfg.augment)
    logit_real = _d_logits(d, real_a, poses_ra, mode)
    logit_fake = _d_logits(d, fake_a, poses_fa, mode)
    loss = F.softplus(-logit_real).mean() + F.softplus(logit_fake).mean()
    diag = {
        "logit_real": logit_real.mean().item(),
        "logit_fake": logit_fake.mean().item(),
    }
    if cfg.mismatch:
        rolled = list(poses[1:]) + list(poses[:1])
        mis_a, poses_ma = augment_batch(real_images, rolled, rng, cfg.augment)
        logit_mis = _d_logits(d, mis_a, poses_ma, mode)
        loss = loss + F.softplus(logit_mis).mean()
        diag["logit_mismatch"] = logit_mis.mean().item()
    return loss, diag


def g_loss(poses: Sequence[Pose], g: Generator, d: Discriminator, rng: np.random.Generator,
           torch_rng: torch.Generator, cfg: TrainConfig):
    mode = cfg.conditioning
    z = torch.randn(len(poses), g.cfg.z_dim, generator=torch_rng)
    fake = generate_fakes(g, poses, z, mode)
    fake_a, poses_fa = augment_batch(fake, poses, rng, cfg.augment)
    logit = _d_logits(d, fake_a, poses_fa, mode)
    return F.softplus(-logit).mean()


def r1_penalty(d: Discriminator, real_images: torch.Tensor, poses: Sequence[Pose],
               gamma: float, mode: str = "both") -> torch.Tensor:
    """(gamma / 2) * E[ ||grad_x D(x, pose)||^2 ] on real images."""
    x = real_images.detach().requires_grad_(True)
    logits = _d_logits(d, x, poses, mode)
    (grad,) = torch.autograd.grad(logits.sum(), x, create_graph=True)
    return 0.5 * gamma * grad.pow(2).flatten(1).sum(dim=1).mean()


def path_length_penalty(g: Generator, poses: Sequence[Pose], z: torch.Tensor,
                        pl_ema: torch.Tensor, decay: float = 0.99, mode: str = "both"):
    """E[ (||J_w^T y|| - a)^2 ] with a the running average of the norm.

    Returns (penalty, updated a). y is unit-variance noise in image space.
    """
    feat = _cond_features(poses, mode)
    heat = _cond_heatmaps(poses, g.cfg.scales, mode)
    w = g.mapping(z, feat)
    w = w.detach().requires_grad_(True)
    img = g.synthesis(w, heat)
    y = torch.randn_like(img)
    (grad,) = torch.autograd.grad((img * y).sum(), w, create_graph=True)
    norms = grad.pow(2).sum(dim=1).sqrt()
    penalty = (norms - pl_ema).pow(2).mean()
    new_ema = pl_ema * decay + (1.0 - decay) * norms.detach().mean()
    return penalty, new_ema


def ema_beta_at(step: int, beta: float, warmup: int) -> float:
    """Linear ramp of the EMA decay from 0 to beta over the warmup."""
    if warmup <= 0:
        return beta
    return beta * min(1.0, step / warmup)


@torch.no_grad()
def ema_update(g_ema: Generator, g: Generator, step: int, beta: float, warmup: int) -> None:
    bt = ema_beta_at(step, beta, warmup)
    for pe, p in zip(g_ema.parameters(), g.parameters()):
        pe.mul_(bt).add_(p, alpha=1.0 - bt)
    for be, b in zip(g_ema.buffers(), g.buffers()):
        be.copy_(b)


class Trainer:
    """Owns generator/discriminator/EMA state and runs the alternating loop."""

    def __init__(self, g_cfg: GeneratorConfig, d_cfg: DiscriminatorConfig, cfg: TrainConfig):
        torch.manual_seed(cfg.seed)
        self.cfg = cfg
        self.g = Generator(g_cfg)
        self.d = Discriminator(d_cfg)
        self.g_ema = Generator(g_cfg)
        self.g_ema.load_state_dict(self.g.state_dict())
        self.g_ema.requires_grad_(False)
        self.opt_g = torch.optim.Adam(self.g.parameters(), lr=cfg.learning_rate,
                                      betas=cfg.adam_betas)
        self.opt_d = torch.optim.Adam(self.d.parameters(), lr=cfg.learning_rate,
                                      betas=cfg.adam_betas)
        self.step = 0
        self.pl_ema = torch.zeros(())
        self.rng = np.random.default_rng(cfg.seed)
        self.torch_rng = torch.Generator().manual_seed(cfg.seed + 1)

    def _batch(self, dataset):
        idx = self.rng.integers(len(dataset), size=self.cfg.batch_size)
        images, poses = [], []
        for i in idx:
            img, pose = dataset[int(i)]
            images.append(torch.as_tensor(img, dtype=torch.float32))
            poses.append(pose)
        return torch.stack(images), poses

    def train_step(self, dataset) -> dict:
        cfg = self.cfg
        log = {"step": self.step}

        images, poses = self._batch(dataset)
        self.d.requires_grad_(True)
        self.g.requires_grad_(False)
        loss_d, diag = d_loss(images, poses, self.g, self.d, self.rng, self.torch_rng, cfg)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        self.opt_d.step()
        log["d_loss"] = loss_d.item()
        log.update(diag)

        if cfg.r1_gamma > 0 and self.step % cfg.d_reg_interval == 0:
            images_r, poses_r = self._batch(dataset)
            penalty = r1_penalty(self.d, images_r, poses_r, cfg.r1_gamma, cfg.conditioning)
            self.opt_d.zero_grad(set_to_none=True)
            (penalty * cfg.d_reg_interval).backward()
            self.opt_d.step()
            log["r1"] = penalty.item()

        self.d.requires_grad_(False)
        self.g.requires_grad_(True)
        _, poses_g = self._batch(dataset)
        loss_g = g_loss(poses_g, self.g, self.d, self.rng, self.torch_rng, cfg)
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        log["g_loss"] = loss_g.item()

        if cfg.pl_weight > 0 and self.step % cfg.g_reg_interval == 0:
            _, poses_p = self._batch(dataset)
            z = torch.randn(len(poses_p), self.g.cfg.z_dim, generator=self.torch_rng)
            penalty, self.pl_ema = path_length_penalty(
                self.g, poses_p, z, self.pl_ema, cfg.pl_decay, cfg.conditioning)
            self.opt_g.zero_grad(set_to_none=True)
            (penalty * cfg.pl_weight * cfg.g_reg_interval).backward()
            self.opt_g.step()
            log["pl"] = penalty.item()

        self.step += 1
        ema_update(self.g_ema, self.g, self.step, cfg.ema_beta, cfg.ema_warmup_steps)
        log["ema_beta"] = ema_beta_at(self.step, cfg.ema_beta, cfg.ema_warmup_steps)

        if not math.isfinite(log["d_loss"]) or not math.isfinite(log["g_loss"]):
            raise RuntimeError(f"non-finite loss at step {self.step}: {log}")
        return log


def train(g_cfg: GeneratorConfig, d_cfg: DiscriminatorConfig, cfg: TrainConfig,
          dataset, out_dir: Optional[str] = None, log_fn=None) -> Trainer:
    """Run the full loop; writes metric logs and checkpoints when out_dir is set."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    trainer = Trainer(g_cfg, d_cfg, cfg)
    log_file = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "train_config.json"), "w") as f:
            json.dump(dataclasses.asdict(cfg), f, indent=2)
        log_file = open(os.path.join(out_dir, "metrics.jsonl"), "w")
    try:
        for _ in range(cfg.total_steps):
            log = trainer.train_step(dataset)
            if log_file and (log["step"] % cfg.log_interval == 0 or
                             log["step"] + 1 == cfg.total_steps):
                log_file.write(json.dumps(log) + "\n")
                log_file.flush()
            if log_fn:
                log_fn(log)
            if out_dir and cfg.checkpoint_interval and \
                    trainer.step % cfg.checkpoint_interval == 0:
                save_checkpoint(os.path.join(out_dir, f"ckpt_{trainer.step:07d}"),
                                trainer.g, trainer.d, trainer.g_ema, step=trainer.step)
        if out_dir:
            save_checkpoint(os.path.join(out_dir, "ckpt_final"),
                            trainer.g, trainer.d, trainer.g_ema, step=trainer.step)
    finally:
        if log_file:
            log_file.close()
    return trainer
