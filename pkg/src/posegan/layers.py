"""Building blocks shared by the mapping, generator and discriminator networks.

All learnable layers use the equalized learning-rate parameterization:
weights are stored at unit scale and multiplied by a fixed constant at
runtime, so every parameter sees the same effective learning rate.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class EqualLinear(nn.Module):
    def __init__(self, in_dim, out_dim, bias=True, bias_init=0.0, lr_mul=1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_dim,), float(bias_init))) if bias else None
        self.scale = lr_mul / math.sqrt(in_dim)
        self.lr_mul = lr_mul

    def forward(self, x):
        b = self.bias * self.lr_mul if self.bias is not None else None
        return F.linear(x, self.weight * self.scale, b)


class EqualConv2d(nn.Module):
    def __init__(self, in_ch, out_ch, kernel, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch)) if bias else None
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.padding = kernel // 2

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, padding=self.padding)


class ModulatedConv2d(nn.Module):
    """3x3 (or 1x1) convolution whose weights are modulated per-sample by a
    style vector derived from w, with optional demodulation."""

    def __init__(self, in_ch, out_ch, kernel, w_dim, demodulate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.style = EqualLinear(w_dim, in_ch, bias_init=1.0)
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.demodulate = demodulate
        self.padding = kernel // 2
        self.out_ch = out_ch

    def forward(self, x, w):
        b, in_ch, h, wd = x.shape
        s = self.style(w)  # (B, in_ch)
        weight = self.scale * self.weight[None] * s[:, None, :, None, None]
        if self.demodulate:
            d = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * d[:, :, None, None, None]
        # grouped conv: one filter bank per sample
        weight = weight.reshape(b * self.out_ch, in_ch, *self.weight.shape[2:])
        x = x.reshape(1, b * in_ch, h, wd)
        out = F.conv2d(x, weight, padding=self.padding, groups=b)
        return out.reshape(b, self.out_ch, *out.shape[2:])


def leaky(x):
    # gain keeps output variance at 1 under lrelu(0.2)
    return F.leaky_relu(x, 0.2) * math.sqrt(2.0)


def upsample2x(x):
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


def downsample2x(x):
    return F.avg_pool2d(x, 2)
