"""Building blocks of the attention U-Net: positional encoding, dot-product
attention, AdaDM-modulated residual blocks, self/cross attention and the
up/down sampling layers."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def positional_encoding(c: int, d: int, device=None, dtype=None) -> torch.Tensor:
    """Sinusoidal positional encoding matrix of shape (c, d).

    Row 2i holds sin(pos / 10000^(2i/c)) and row 2i+1 the matching cosine,
    for flattened pixel positions pos = 0..d-1.
    """
    if c % 2 != 0:
        raise ValueError(f"channel count must be even for positional encoding, got {c}")
    if d < 1:
        raise ValueError(f"need at least one position, got d={d}")
    pos = torch.arange(d, device=device, dtype=dtype or torch.float32)
    i2 = torch.arange(0, c, 2, device=device, dtype=dtype or torch.float32)
    angles = pos[None, :] / torch.pow(10000.0, i2 / c)[:, None]  # (c/2, d)
    pe = torch.empty(c, d, device=device, dtype=dtype or torch.float32)
    pe[0::2] = torch.sin(angles)
    pe[1::2] = torch.cos(angles)
    return pe


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q kᵀ / sqrt(d_k)) v with a row-wise softmax.

    q: (..., n, d_k), k: (..., m, d_k), v: (..., m, d_v) -> (..., n, d_v).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key dims differ: {q.shape[-1]} vs {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value counts differ: {k.shape[-2]} vs {v.shape[-2]}")
    d_k = q.shape[-1]
    logits = q @ k.transpose(-2, -1) / math.sqrt(d_k)
    return torch.softmax(logits, dim=-1) @ v


class AdaDM(nn.Module):
    """Rescales normalized features by a learned power of the pre-normalization
    spatial standard deviation, reinjecting the magnitude information the
    normalization discards (which otherwise blurs edges).

    Contract: given the per-sample std sigma of the block input (over C, H, W,
    population form, floored at 1e-8), the normalized features are multiplied
    by exp(gamma * log(sigma) + beta). At init gamma = beta = 0, so the
    modulation starts as the identity.
    """

    EPS = 1e-8

    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.zeros(1))
        self.beta = nn.Parameter(torch.zeros(1))

    def modulation(self, sigma: torch.Tensor) -> torch.Tensor:
        return torch.exp(self.gamma * torch.log(sigma.clamp_min(self.EPS)) + self.beta)

    def forward(self, normed: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        return normed * self.modulation(sigma).view(-1, 1, 1, 1)


def input_std(x: torch.Tensor) -> torch.Tensor:
    """Per-sample population std over (C, H, W), shape (B,)."""
    return x.std(dim=(1, 2, 3), unbiased=False)


class ResidualBlock(nn.Module):
    """Two (GroupNorm -> AdaDM -> Swish -> 3x3 conv) legs plus a skip
    connection, with a 1x1 projection on the skip when the channel count
    changes. The second conv is zero-initialized so the block starts as the
    (projected) identity."""

    def __init__(self, c_in: int, c_out: int, n_groups: int):
        super().__init__()
        for c in (c_in, c_out):
            if c % n_groups:
                raise ValueError(f"n_groups={n_groups} does not divide channel count {c}")
        self.norm1 = nn.GroupNorm(n_groups, c_in)
        self.adadm1 = AdaDM()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(n_groups, c_out)
        self.adadm2 = AdaDM()
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

        nn.init.normal_(self.conv1.weight, 0.0, 0.02)
        nn.init.zeros_(self.conv1.bias)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)
        if isinstance(self.skip, nn.Conv2d):
            nn.init.normal_(self.skip.weight, 0.0, 0.02)
            nn.init.zeros_(self.skip.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        sigma = input_std(x)
        h = self.conv1(F.silu(self.adadm1(self.norm1(x), sigma)))
        h = self.conv2(F.silu(self.adadm2(self.norm2(h), sigma)))
        return h + self.skip(x)


class FeedForward(nn.Module):
    """Linear -> Swish -> Linear on token vectors (hidden width = input width)."""

    def __init__(self, dim: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, dim)
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.silu(self.fc1(t)))


class SelfAttentionBlock(nn.Module):
    """Single-head self-attention over flattened pixels.

    GroupNorm -> flatten -> add positional encoding -> unbiased Q/K/V
    projections -> attention -> output projection, residual; then a
    GroupNorm + feed-forward leg, residual again.
    """

    def __init__(self, channels: int, n_groups: int):
        super().__init__()
        if channels % 2:
            raise ValueError(f"attention channels must be even, got {channels}")
        self.channels = channels
        self.norm1 = nn.GroupNorm(n_groups, channels)
        self.wq = nn.Linear(channels, channels, bias=False)
        self.wk = nn.Linear(channels, channels, bias=False)
        self.wv = nn.Linear(channels, channels, bias=False)
        self.proj = nn.Linear(channels, channels)
        self.norm2 = nn.GroupNorm(n_groups, channels)
        self.ff = FeedForward(channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        pe = positional_encoding(c, h * w, device=x.device, dtype=x.dtype)
        y = self.norm1(x).flatten(2).transpose(1, 2) + pe.T  # (b, hw, c)
        a = attention(self.wq(y), self.wk(y), self.wv(y))
        t = x.flatten(2).transpose(1, 2) + self.proj(a)
        z = self.norm2(t.transpose(1, 2).reshape(b, c, h, w)).flatten(2).transpose(1, 2)
        t = t + self.ff(z)
        return t.transpose(1, 2).reshape(b, c, h, w)


class CrossAttentionBlock(nn.Module):
    """Cross-attention between pixel features and the conditioning vector.

    Each context entry (age, gender, optional diagnosis, slice location) is
    linearly embedded into its own token; those tokens feed the key/value
    projections while the queries come from the flattened feature map.
    """

    def __init__(self, channels: int, context_len: int, context_dim: int, n_groups: int):
        super().__init__()
        if channels % 2:
            raise ValueError(f"attention channels must be even, got {channels}")
        self.context_len = context_len
        self.norm1 = nn.GroupNorm(n_groups, channels)
        # one embedding per context entry: token_i = ctx_i * weight_i + bias_i
        self.ctx_weight = nn.Parameter(torch.randn(context_len, context_dim) * 0.02)
        self.ctx_bias = nn.Parameter(torch.zeros(context_len, context_dim))
        self.wq = nn.Linear(channels, channels, bias=False)
        self.wk = nn.Linear(context_dim, channels, bias=False)
        self.wv = nn.Linear(context_dim, channels, bias=False)
        self.proj = nn.Linear(channels, channels)
        self.norm2 = nn.GroupNorm(n_groups, channels)
        self.ff = FeedForward(channels)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        if context.ndim != 2 or context.shape[1] != self.context_len:
            raise ValueError(
                f"expected context of shape (batch, {self.context_len}), got {tuple(context.shape)}"
            )
        b, c, h, w = x.shape
        pe = positional_encoding(c, h * w, device=x.device, dtype=x.dtype)
        y = self.norm1(x).flatten(2).transpose(1, 2) + pe.T
        tokens = context[:, :, None] * self.ctx_weight[None] + self.ctx_bias[None]
        a = attention(self.wq(y), self.wk(tokens), self.wv(tokens))
        t = x.flatten(2).transpose(1, 2) + self.proj(a)
        z = self.norm2(t.transpose(1, 2).reshape(b, c, h, w)).flatten(2).transpose(1, 2)
        t = t + self.ff(z)
        return t.transpose(1, 2).reshape(b, c, h, w)


class Downsample(nn.Module):
    """Halve the spatial resolution with a stride-2 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)
        nn.init.normal_(self.conv.weight, 0.0, 0.02)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    """Double the spatial resolution: nearest-neighbor x2 then a 3x3 conv."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)
        nn.init.normal_(self.conv.weight, 0.0, 0.02)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))
