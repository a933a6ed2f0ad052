"""Toy spatio-temporal clip encoder with a {4, 8, 16} stride pyramid.

A factored design: per-frame strided convolutions build the spatial pyramid,
then lightweight temporal convolutions mix information across the window at
the two coarsest levels. Group normalization keeps outputs independent of
batch composition, so eval-mode forwards are bitwise deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

PYRAMID_STRIDES = (4, 8, 16)


@dataclass
class VideoFeatureMap:
    features: torch.Tensor  # (T, H', W', C_v) at the fusion stride
    stride: int
    pyramid: dict[int, torch.Tensor] = field(default_factory=dict)  # stride -> (T, C, h, w)


def _conv_block(c_in: int, c_out: int) -> nn.Sequential:
    groups = math.gcd(8, c_out)
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
        nn.GroupNorm(groups, c_out),
        nn.GELU(),
    )


class TemporalMix(nn.Module):
    """Residual temporal convolution over the window axis at one pyramid level."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv1d(channels, channels, kernel_size=3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, C, h, w)
        b, t, c, h, w = x.shape
        seq = x.permute(0, 3, 4, 2, 1).reshape(b * h * w, c, t)
        mixed = self.conv(seq).reshape(b, h, w, c, t).permute(0, 4, 3, 1, 2)
        return x + mixed


class ToyVideoEncoder(nn.Module):
    """Maps a normalized clip (B, T, 3, H, W) to a multi-scale feature pyramid."""

    def __init__(
        self,
        pyramid_channels: tuple[int, int, int] = (32, 64, 96),
        stem_channels: int = 16,
        fusion_stride: int = 16,
        temporal_mixing: bool = True,
        pixel_mean: tuple[float, float, float] = (0.5, 0.5, 0.5),
        pixel_std: tuple[float, float, float] = (0.25, 0.25, 0.25),
    ):
        super().__init__()
        if fusion_stride not in PYRAMID_STRIDES:
            raise ValueError(f"fusion_stride must be one of {PYRAMID_STRIDES}")
        c4, c8, c16 = pyramid_channels
        self.fusion_stride = fusion_stride
        self.pyramid_channels = dict(zip(PYRAMID_STRIDES, pyramid_channels))
        self.temporal_mixing = temporal_mixing
        self.stem = _conv_block(3, stem_channels)  # stride 2
        self.down4 = _conv_block(stem_channels, c4)  # stride 4
        self.down8 = _conv_block(c4, c8)  # stride 8
        self.down16 = _conv_block(c8, c16)  # stride 16
        self.mix8 = TemporalMix(c8)
        self.mix16 = TemporalMix(c16)
        self.register_buffer("mean", torch.tensor(pixel_mean).view(1, 1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(pixel_std).view(1, 1, 3, 1, 1))

    @property
    def feature_dim(self) -> int:
        return self.pyramid_channels[self.fusion_stride]

    def normalize(self, clip: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, H, W) float in [0, 1] -> normalized."""
        return (clip - self.mean) / self.std

    def forward_pyramid(self, clip: torch.Tensor) -> dict[int, torch.Tensor]:
        """Normalized clip (B, T, 3, H, W) -> {stride: (B, T, C, h, w)}."""
        b, t = clip.shape[:2]
        x = clip.reshape(b * t, *clip.shape[2:])
        x = self.stem(x)
        p4 = self.down4(x)
        p8 = self.down8(p4)
        p16 = self.down16(p8)

        def unflatten(p):
            return p.reshape(b, t, *p.shape[1:])

        p4, p8, p16 = unflatten(p4), unflatten(p8), unflatten(p16)
        if self.temporal_mixing:
            p8 = self.mix8(p8)
            p16 = self.mix16(p16)
        return {4: p4, 8: p8, 16: p16}

    def encode_video_clip(self, clip) -> VideoFeatureMap:
        """Encode one clip of T same-sized RGB frames.

        ``clip``: (T, H, W, 3) uint8 array/tensor, or (T, 3, H, W) float in [0, 1].
        """
        clip = _as_clip_tensor(clip)
        pyramid = self.forward_pyramid(self.normalize(clip[None]))
        level = pyramid[self.fusion_stride][0]  # (T, C, h, w)
        return VideoFeatureMap(
            features=level.permute(0, 2, 3, 1),
            stride=self.fusion_stride,
            pyramid={s: p[0] for s, p in pyramid.items()},
        )


def _as_clip_tensor(clip) -> torch.Tensor:
    if not torch.is_tensor(clip):
        clip = torch.as_tensor(clip)
    if clip.ndim != 4:
        raise ValueError(f"expected a (T, H, W, 3) or (T, 3, H, W) clip, got {tuple(clip.shape)}")
    if clip.shape[-1] == 3:  # (T, H, W, 3) image layout
        clip = clip.permute(0, 3, 1, 2)
    if clip.shape[1] != 3:
        raise ValueError(f"expected 3 channels, got {clip.shape[1]}")
    if clip.dtype == torch.uint8:
        clip = clip.float() / 255.0
    return clip


def frames_to_clip(frames: list) -> torch.Tensor:
    """Stack per-frame (H, W, 3) images into a (T, 3, H, W) float clip; mixed sizes error."""
    tensors = [torch.as_tensor(f) for f in frames]
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) != 1:
        raise ValueError(f"mixed frame sizes in clip: {sorted(shapes)}")
    return _as_clip_tensor(torch.stack(tensors, dim=0))


def stack_clip_batch(clips: list[torch.Tensor]) -> torch.Tensor:
    """Stack same-sized (T, 3, H, W) clips into (B, T, 3, H, W); mixed sizes error."""
    shapes = {tuple(c.shape) for c in clips}
    if len(shapes) != 1:
        raise ValueError(f"mixed frame sizes in batch: {sorted(shapes)}")
    return torch.stack(clips, dim=0)
