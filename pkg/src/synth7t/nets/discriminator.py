"""Patch discriminator: a stack of strided conv blocks scoring each
H/2^n x W/2^n patch of the input slice."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class DiscriminatorConfig:
    n_layers: int = 5
    c1: int = 64
    leaky_slope: float = 0.2
    in_channels: int = 1

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.c1 <= 0 or self.in_channels <= 0:
            raise ValueError("channel counts must be positive")

    @property
    def spatial_divisor(self) -> int:
        return 2 ** self.n_layers


class LayerNorm2d(nn.GroupNorm):
    """Layer normalization for conv features: normalize each sample over
    (C, H, W) with a per-channel affine."""

    def __init__(self, channels):
        super().__init__(1, channels)


class PatchDiscriminator(nn.Module):
    """n_layers blocks of (4x4 stride-2 conv -> LeakyReLU -> LayerNorm),
    then a stride-1 conv emitting one score per patch.

    Channel width doubles per block, capped at 8x the initial width.
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        layers = []
        prev = config.in_channels
        for i in range(config.n_layers):
            ch = config.c1 * min(2 ** i, 8)
            layers += [
                nn.Conv2d(prev, ch, 4, stride=2, padding=1),
                nn.LeakyReLU(config.leaky_slope),
                LayerNorm2d(ch),
            ]
            prev = ch
        # spatial-size-preserving 4x4 head (pad 1+2 per side in total)
        layers += [nn.ZeroPad2d((1, 0, 1, 0)), nn.Conv2d(prev, 1, 4, padding=1)]
        self.net = nn.Sequential(*layers)
        for m in self.net.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.normal_(m.weight, 0.0, 0.02)
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected input (batch, {self.config.in_channels}, H, W), got {tuple(x.shape)}"
            )
        div = self.config.spatial_divisor
        h, w = x.shape[2], x.shape[3]
        if h % div or w % div:
            raise ValueError(f"spatial dims ({h},{w}) must be divisible by {div}")
        return self.net(x)
