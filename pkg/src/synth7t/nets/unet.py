"""Conditional attention U-Net generator.

The encoder runs ``n_res`` residual blocks per stage and halves the
resolution after every stage; the bottleneck is two residual blocks around a
self-attention block; the decoder mirrors the encoder with skip
concatenation. Stages listed in ``ca_stages`` follow every residual block
with a cross-attention block over the conditioning vector. There is no final
normalization layer (it blurs the output).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import CrossAttentionBlock, Downsample, ResidualBlock, SelfAttentionBlock, Upsample

# Context entry order produced by volumes.ContextVector.as_array().
CONTEXT_ENTRIES_WITH_DIAG = ("age_scaled", "gender_code", "diagnosis_code", "slice_location")
CONTEXT_ENTRIES_NO_DIAG = ("age_scaled", "gender_code", "slice_location")


@dataclass(frozen=True)
class ModelConfig:
    """Generator hyperparameters.

    ``channel_mult`` gives the per-stage channel multiplier: stage i has
    ``c_init * channel_mult[i]`` channels. ``ca_stages`` holds 1-based stage
    indices that receive cross-attention conditioning. ``context_len`` is the
    number of conditioning entries (3 for the "no diag" variant, else 4).
    """

    c_init: int = 256
    channel_mult: tuple = (1, 2, 2, 2)
    n_groups: int = 64
    n_res: int = 3
    ca_stages: tuple = (3, 4)
    n_input_slices: int = 3
    context_len: int = 4
    context_dim: int = 256
    use_final_norm: bool = False

    def __post_init__(self):
        if self.c_init <= 0 or self.n_res <= 0 or self.context_dim <= 0:
            raise ValueError("c_init, n_res and context_dim must be positive")
        if self.n_input_slices <= 0 or self.n_input_slices % 2 == 0:
            raise ValueError(f"n_input_slices must be odd and positive, got {self.n_input_slices}")
        if any(b < a for a, b in zip(self.channel_mult, self.channel_mult[1:])):
            raise ValueError(f"channel_mult must be nondecreasing, got {self.channel_mult}")
        if any(k <= 0 for k in self.channel_mult):
            raise ValueError(f"channel_mult entries must be positive, got {self.channel_mult}")
        for k in self.channel_mult:
            if (self.c_init * k) % self.n_groups:
                raise ValueError(
                    f"n_groups={self.n_groups} does not divide stage channel count {self.c_init * k}"
                )
        n = self.n_stages
        bad = [s for s in self.ca_stages if not 1 <= s <= n]
        if bad:
            raise ValueError(f"ca_stages {bad} outside 1..{n}")
        if self.context_len not in (3, 4):
            raise ValueError(f"context_len must be 3 (no diagnosis) or 4, got {self.context_len}")

    @property
    def n_stages(self) -> int:
        return len(self.channel_mult)

    @property
    def stage_channels(self) -> tuple:
        return tuple(self.c_init * k for k in self.channel_mult)

    @property
    def spatial_divisor(self) -> int:
        return 2 ** self.n_stages


def default_unet_config(**overrides) -> ModelConfig:
    """Published configuration of the plain U-Net generator."""
    base = dict(c_init=256, channel_mult=(1, 2, 2, 2), n_groups=64, n_res=3,
                ca_stages=(3, 4), n_input_slices=3, context_len=4, context_dim=256)
    base.update(overrides)
    return ModelConfig(**base)


def default_gan_config(**overrides) -> ModelConfig:
    """Published configuration of the GAN generator (cross-attention only at
    the deepest stage; the discriminator eats the memory headroom)."""
    base = dict(c_init=256, channel_mult=(1, 2, 2, 2), n_groups=64, n_res=3,
                ca_stages=(4,), n_input_slices=3, context_len=4, context_dim=256)
    base.update(overrides)
    return ModelConfig(**base)


class _Stage(nn.Module):
    """n_res residual blocks, each optionally followed by cross-attention."""

    def __init__(self, c_in, c_out, config, with_ca):
        super().__init__()
        self.res = nn.ModuleList(
            [ResidualBlock(c_in if i == 0 else c_out, c_out, config.n_groups)
             for i in range(config.n_res)]
        )
        self.ca = nn.ModuleList(
            [CrossAttentionBlock(c_out, config.context_len, config.context_dim, config.n_groups)
             for _ in range(config.n_res)]
        ) if with_ca else None

    def forward(self, x, context):
        for i, res in enumerate(self.res):
            x = res(x)
            if self.ca is not None:
                x = self.ca[i](x, context)
        return x


class ConditionalUNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        ch = config.stage_channels
        n = config.n_stages

        self.conv_in = nn.Conv2d(config.n_input_slices, ch[0], 3, padding=1)
        nn.init.normal_(self.conv_in.weight, 0.0, 0.02)
        nn.init.zeros_(self.conv_in.bias)

        self.enc_stages = nn.ModuleList()
        self.downs = nn.ModuleList()
        for i in range(n):
            c_in = ch[0] if i == 0 else ch[i - 1]
            self.enc_stages.append(_Stage(c_in, ch[i], config, (i + 1) in config.ca_stages))
            self.downs.append(Downsample(ch[i]))

        self.mid_res1 = ResidualBlock(ch[-1], ch[-1], config.n_groups)
        self.mid_attn = SelfAttentionBlock(ch[-1], config.n_groups)
        self.mid_res2 = ResidualBlock(ch[-1], ch[-1], config.n_groups)

        self.ups = nn.ModuleList()
        self.dec_stages = nn.ModuleList()
        for i in reversed(range(n)):
            c_below = ch[-1] if i == n - 1 else ch[i + 1]
            self.ups.append(Upsample(c_below))
            self.dec_stages.append(
                _Stage(c_below + ch[i], ch[i], config, (i + 1) in config.ca_stages)
            )

        self.final_norm = nn.GroupNorm(config.n_groups, ch[0]) if config.use_final_norm else None
        self.conv_out = nn.Conv2d(ch[0], 1, 3, padding=1)
        nn.init.normal_(self.conv_out.weight, 0.0, 0.02)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != self.config.n_input_slices:
            raise ValueError(
                f"expected input (batch, {self.config.n_input_slices}, H, W), got {tuple(x.shape)}"
            )
        div = self.config.spatial_divisor
        h, w = x.shape[2], x.shape[3]
        if h % div or w % div:
            raise ValueError(f"spatial dims ({h},{w}) must be divisible by {div}")
        if context.ndim != 2 or context.shape[1] != self.config.context_len:
            raise ValueError(
                f"expected context (batch, {self.config.context_len}), got {tuple(context.shape)}; "
                "the model's conditioning variables must match the context exactly"
            )

        h_ = self.conv_in(x)
        skips = []
        for stage, down in zip(self.enc_stages, self.downs):
            h_ = stage(h_, context)
            skips.append(h_)
            h_ = down(h_)

        h_ = self.mid_res2(self.mid_attn(self.mid_res1(h_)))

        for up, stage in zip(self.ups, self.dec_stages):
            h_ = up(h_)
            h_ = torch.cat([h_, skips.pop()], dim=1)
            h_ = stage(h_, context)

        if self.final_norm is not None:
            h_ = self.final_norm(h_)
        return self.conv_out(F.silu(h_))
