"""Pose-conditioned scene generation toolkit."""

from .pose import (K, KEYPOINT_NAMES, HeatmapStack, Pose, SpatialTransform,
                   flatten_pose, render_heatmaps, render_pyramid, transform_pose)
from .conditioning import MappingNetwork, MeanCache, conditional_mean, truncate
from .networks import (Discriminator, DiscriminatorConfig, Generator, GeneratorConfig,
                       heatmap_pyramid, load_checkpoint, save_checkpoint)
from .evaluation import fid, frechet_distance, head_size, pckh

__all__ = [
    "K", "KEYPOINT_NAMES", "HeatmapStack", "Pose", "SpatialTransform",
    "flatten_pose", "render_heatmaps", "render_pyramid", "transform_pose",
    "MappingNetwork", "MeanCache", "conditional_mean", "truncate",
    "Discriminator", "DiscriminatorConfig", "Generator", "GeneratorConfig",
    "heatmap_pyramid", "load_checkpoint", "save_checkpoint",
    "fid", "frechet_distance", "head_size", "pckh",
]

__version__ = "0.1.0"
