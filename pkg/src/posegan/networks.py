"""Conditional generator and discriminator.

StyleGAN2-flavored synthesis (skip generator, residual discriminator,
weight demodulation, equalized learning rates) with two conditioning paths:
keypoint heatmaps concatenated at every scale, and a pose-derived latent.
Spatial noise injection and style mixing are structurally absent; the
generator is a deterministic function of (w, heatmaps, parameters).
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .conditioning import MappingNetwork, pose_features
from .layers import EqualConv2d, EqualLinear, ModulatedConv2d, downsample2x, leaky, upsample2x
from .pose import K, Pose, render_heatmaps


def channel_schedule(resolution, channel_base, channel_max, multiplier):
    res = 4
    sched = {}
    while res <= resolution:
        sched[res] = min(channel_base // res, channel_max) * multiplier
        res *= 2
    return sched


@dataclass
class GeneratorConfig:
    output_resolution: int = 64
    channel_base: int = 16384
    channel_max: int = 512
    channel_multiplier: int = 1
    w_dim: int = 512
    z_dim: int = 512
    mapping_depth: int = 8
    mapping_embed_dim: int = 512
    img_channels: int = 3
    use_spatial_noise: bool = False  # must stay False

    def __post_init__(self):
        r = self.output_resolution
        if r < 16 or r > 128 or (r & (r - 1)) != 0:
            raise ValueError("output_resolution must be a power of two in [16, 128]")
        if self.use_spatial_noise:
            raise ValueError("spatial noise maps are not supported")

    @property
    def scales(self) -> List[int]:
        return [4 * 2 ** i for i in range(int(math.log2(self.output_resolution)) - 1)]


@dataclass
class DiscriminatorConfig:
    input_resolution: int = 64
    channel_base: int = 16384
    channel_max: int = 512
    channel_multiplier: int = 1
    w_dim: int = 512
    mapping_depth: int = 8
    mapping_embed_dim: int = 512
    cmap_dim: int = 512
    img_channels: int = 3


class StyleConv(nn.Module):
    def __init__(self, in_ch, out_ch, w_dim, kernel=3):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, out_ch, kernel, w_dim)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w):
        return leaky(self.conv(x, w) + self.bias[None, :, None, None])


class ToRGB(nn.Module):
    def __init__(self, in_ch, w_dim, img_channels=3):
        super().__init__()
        self.conv = ModulatedConv2d(in_ch, img_channels, 1, w_dim, demodulate=False)
        self.bias = nn.Parameter(torch.zeros(img_channels))

    def forward(self, x, w):
        return self.conv(x, w) + self.bias[None, :, None, None]


class SynthesisNetwork(nn.Module):
    """Image synthesis from w and a heatmap pyramid.

    Heatmaps are concatenated onto the activations at each scale, right
    before that scale's convolutions. One w drives all scales unless a
    per-scale latent list is supplied.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        ch = channel_schedule(cfg.output_resolution, cfg.channel_base, cfg.channel_max,
                              cfg.channel_multiplier)
        self.scales = cfg.scales
        self.const = nn.Parameter(torch.randn(ch[4], 4, 4))
        self.convs1 = nn.ModuleList()
        self.convs2 = nn.ModuleList()
        self.to_rgb = nn.ModuleList()
        prev = ch[4]
        for res in self.scales:
            out_ch = ch[res]
            self.convs1.append(StyleConv(prev + K, out_ch, cfg.w_dim))
            self.convs2.append(StyleConv(out_ch, out_ch, cfg.w_dim) if res > 4 else None)
            self.to_rgb.append(ToRGB(out_ch, cfg.w_dim, cfg.img_channels))
            prev = out_ch

    def forward(self, w, heatmaps: Sequence[torch.Tensor], zero_constant: bool = False):
        """w: (B, w_dim) tensor or a list of per-scale (B, w_dim) tensors."""
        ws = list(w) if isinstance(w, (list, tuple)) else [w] * len(self.scales)
        if len(ws) != len(self.scales):
            raise ValueError(f"need {len(self.scales)} per-scale latents, got {len(ws)}")
        if len(heatmaps) != len(self.scales):
            raise ValueError(f"heatmap pyramid must have {len(self.scales)} levels")
        b = ws[0].shape[0]
        for h, res in zip(heatmaps, self.scales):
            if h.shape[-3:] != (K, res, res):
                raise ValueError(f"expected heatmap shape ({K}, {res}, {res}), got {tuple(h.shape[-3:])}")
        const = torch.zeros_like(self.const) if zero_constant else self.const
        x = const[None].expand(b, -1, -1, -1)
        rgb = None
        for i, res in enumerate(self.scales):
            if res > 4:
                x = upsample2x(x)
            x = torch.cat([x, heatmaps[i].to(x.dtype)], dim=1)
            x = self.convs1[i](x, ws[i])
            if self.convs2[i] is not None:
                x = self.convs2[i](x, ws[i])
            y = self.to_rgb[i](x, ws[i])
            rgb = y if rgb is None else upsample2x(rgb) + y
        return rgb


class Generator(nn.Module):
    """Mapping network f_G plus synthesis; the full conditional generator."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(z_dim=cfg.z_dim, w_dim=cfg.w_dim,
                                      embed_dim=cfg.mapping_embed_dim,
                                      depth=cfg.mapping_depth)
        self.synthesis = SynthesisNetwork(cfg)

    def forward(self, z, pose_feat, heatmaps):
        w = self.mapping(z, pose_feat)
        return self.synthesis(w, heatmaps)


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = EqualConv2d(in_ch, in_ch, 3)
        self.conv2 = EqualConv2d(in_ch, out_ch, 3)
        self.skip = EqualConv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        y = leaky(self.conv1(x))
        y = leaky(self.conv2(y))
        y = downsample2x(y)
        s = downsample2x(self.skip(x))
        return (y + s) / math.sqrt(2.0)


class Discriminator(nn.Module):
    """Pose-conditional discriminator.

    Consumes the image concatenated with heatmaps at input resolution; the
    pose additionally conditions the output through a projection head:
    logit = b(phi(x)) + <f_D(pose), h(phi(x))> / sqrt(cmap_dim). f_D sees
    only the pose embedding (no noise input). No minibatch statistics are
    used, so a batch of logits equals per-item evaluation.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        ch = channel_schedule(cfg.input_resolution, cfg.channel_base, cfg.channel_max,
                              cfg.channel_multiplier)
        res = cfg.input_resolution
        self.from_rgb = EqualConv2d(cfg.img_channels + K, ch[res], 1)
        blocks = []
        while res > 4:
            blocks.append(DiscriminatorBlock(ch[res], ch[res // 2]))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        self.final_conv = EqualConv2d(ch[4], ch[4], 3)
        self.final_dense = EqualLinear(ch[4] * 16, ch[4])
        self.uncond_head = EqualLinear(ch[4], 1)
        self.cond_head = EqualLinear(ch[4], cfg.cmap_dim)
        self.mapping = MappingNetwork(z_dim=0, w_dim=cfg.cmap_dim,
                                      embed_dim=cfg.mapping_embed_dim,
                                      depth=cfg.mapping_depth)

    def forward(self, img, heatmaps, pose_feat):
        if img.shape[-1] != self.cfg.input_resolution or heatmaps.shape[-1] != img.shape[-1]:
            raise ValueError("image and heatmap resolution must match the discriminator input")
        x = torch.cat([img, heatmaps.to(img.dtype)], dim=1)
        x = leaky(self.from_rgb(x))
        for block in self.blocks:
            x = block(x)
        x = leaky(self.final_conv(x))
        x = leaky(self.final_dense(x.flatten(1)))
        cmap = self.mapping(None, pose_feat)
        logit = self.uncond_head(x)[:, 0]
        logit = logit + (self.cond_head(x) * cmap).sum(dim=1) / math.sqrt(self.cfg.cmap_dim)
        return logit


def heatmap_pyramid(poses: Sequence[Pose], scales: Sequence[int],
                    zero: bool = False, dtype=None) -> List[torch.Tensor]:
    """Render batched heatmap tensors at each synthesis scale."""
    dtype = dtype if dtype is not None else torch.get_default_dtype()
    out = []
    for res in scales:
        if zero:
            out.append(torch.zeros(len(poses), K, res, res, dtype=dtype))
        else:
            stacks = [render_heatmaps(p, res).data for p in poses]
            out.append(torch.from_numpy(np.stack(stacks)).to(dtype))
    return out


def conv_parameter_count(module: nn.Module) -> int:
    """Number of convolutional weight parameters (modulated + plain)."""
    total = 0
    for m in module.modules():
        if isinstance(m, (ModulatedConv2d, EqualConv2d)):
            total += m.weight.numel()
    return total


def image_to_uint8(img: torch.Tensor) -> np.ndarray:
    """Map [-1, 1] float images to HWC uint8 via round(127.5 * (x + 1))."""
    arr = img.detach().cpu().numpy()
    arr = np.rint(127.5 * (arr + 1.0)).clip(0, 255).astype(np.uint8)
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    return arr


def save_image_png(img: torch.Tensor, path) -> None:
    from PIL import Image

    Image.fromarray(image_to_uint8(img)).save(path)


def save_checkpoint(path, generator: Generator, discriminator: Optional[Discriminator] = None,
                    generator_ema: Optional[Generator] = None, extra: Optional[dict] = None,
                    step: int = 0) -> None:
    """Write a checkpoint directory: config snapshot + parameter blobs."""
    os.makedirs(path, exist_ok=True)
    cfg = {
        "generator": dataclasses.asdict(generator.cfg),
        "discriminator": dataclasses.asdict(discriminator.cfg) if discriminator else None,
        "step": step,
    }
    with open(os.path.join(path, "config.json"), "w") as f:
        json.dump(cfg, f, indent=2)
    blobs = {"generator": generator.state_dict()}
    if discriminator is not None:
        blobs["discriminator"] = discriminator.state_dict()
    if generator_ema is not None:
        blobs["generator_ema"] = generator_ema.state_dict()
    if extra:
        blobs.update(extra)
    torch.save(blobs, os.path.join(path, "params.pt"))


def load_checkpoint(path):
    """Load a checkpoint directory; returns (generator, discriminator, generator_ema, blobs)."""
    with open(os.path.join(path, "config.json")) as f:
        cfg = json.load(f)
    blobs = torch.load(os.path.join(path, "params.pt"), map_location="cpu", weights_only=True)
    g = Generator(GeneratorConfig(**cfg["generator"]))
    g.load_state_dict(blobs["generator"])
    d = None
    if cfg.get("discriminator") and "discriminator" in blobs:
        d = Discriminator(DiscriminatorConfig(**cfg["discriminator"]))
        d.load_state_dict(blobs["discriminator"])
    g_ema = None
    if "generator_ema" in blobs:
        g_ema = Generator(GeneratorConfig(**cfg["generator"]))
        g_ema.load_state_dict(blobs["generator_ema"])
    return g, d, g_ema, blobs
