"""Training losses: L1, perceptual, adversarial with gradient penalty, and
their weighted combination.

Sign conventions (the literature is loose here, so they are pinned once):

* ``discriminator_adversarial`` is log D(I) + log(1 - D(I')) with D the mean
  per-patch probability. It is maximal (-> 0 from below) for a perfect
  discriminator. ``discriminator_loss`` returns this term plus
  lambda_gp * gradient_penalty, i.e. the combined expression as usually
  written.
* What the training loop minimizes for the discriminator is
  ``discriminator_objective`` = -adversarial + lambda_gp * penalty.
* The generator's adversarial term is the non-saturating -log D(I').
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class LossWeights:
    lambda_perc: float = 0.0
    lambda_gan: float = 0.0
    lambda_gp: float = 10.0

    def __post_init__(self):
        for name in ("lambda_perc", "lambda_gan", "lambda_gp"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _check_shapes(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all pixels."""
    _check_shapes(a, b)
    return (a - b).abs().mean()


class ConvFeatureExtractor(nn.Module):
    """Frozen strided conv encoder used as the default perceptual feature
    source. Weights are drawn from a fixed seed, so the loss is reproducible
    without any external checkpoint; a pretrained extractor can be plugged in
    through the same ``features`` interface."""

    def __init__(self, in_channels=1, widths=(8, 16, 32, 64), seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        prev = in_channels
        for w in widths:
            conv = nn.Conv2d(prev, w, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * 0.2)
                conv.bias.zero_()
            convs.append(conv)
            prev = w
        self.convs = nn.ModuleList(convs)
        self.requires_grad_(False)
        self.eval()

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for conv in self.convs:
            x = torch.tanh(conv(x))
            out.append(x)
        return out


class IdentityFeatureExtractor(nn.Module):
    """Single identity layer; perceptual loss collapses to pixel MSE."""

    def features(self, x):
        return [x]


EXTRACTORS = {
    "conv4": ConvFeatureExtractor,
    "identity": IdentityFeatureExtractor,
}


def build_feature_extractor(name: str, checkpoint=None, **kwargs):
    """Instantiate a registered feature extractor, optionally loading weights."""
    if name not in EXTRACTORS:
        raise ValueError(f"unknown feature extractor {name!r}; known: {sorted(EXTRACTORS)}")
    extractor = EXTRACTORS[name](**kwargs)
    if checkpoint is not None:
        extractor.load_state_dict(torch.load(checkpoint, weights_only=True))
    return extractor


def perceptual_loss(a: torch.Tensor, b: torch.Tensor, extractor) -> torch.Tensor:
    """Mean over extractor layers of the mean squared feature difference."""
    _check_shapes(a, b)
    fa = extractor.features(a)
    fb = extractor.features(b)
    if len(fa) != len(fb) or not fa:
        raise ValueError("extractor returned mismatched or empty feature lists")
    per_layer = [((x - y) ** 2).mean() for x, y in zip(fa, fb)]
    return torch.stack(per_layer).mean()


def _patch_probability(d, x: torch.Tensor) -> torch.Tensor:
    """Per-sample mean of sigmoid-mapped patch scores, validated to (0, 1)."""
    probs = torch.sigmoid(d(x))
    p = probs.reshape(probs.shape[0], -1).mean(dim=1)
    if ((p <= 0) | (p >= 1)).any():
        raise ValueError("discriminator probability saturated outside (0, 1)")
    return p


def gradient_penalty(d, real: torch.Tensor, fake: torch.Tensor, seed=None) -> torch.Tensor:
    """(||grad_x D(x)||_2 - 1)^2 at x = alpha*real + (1-alpha)*fake.

    One alpha ~ U(0,1) is drawn per batch sample (seedable); D(x) is the mean
    patch score. Averaged over the batch.
    """
    _check_shapes(real, fake)
    gen = None
    if seed is not None:
        gen = torch.Generator(device=real.device).manual_seed(int(seed))
    alpha_shape = (real.shape[0],) + (1,) * (real.ndim - 1)
    alpha = torch.rand(alpha_shape, generator=gen, device=real.device, dtype=real.dtype)
    x = (alpha * real + (1 - alpha) * fake).detach().requires_grad_(True)
    score = d(x).reshape(x.shape[0], -1).mean(dim=1).sum()
    (grads,) = torch.autograd.grad(score, x, create_graph=True, allow_unused=True)
    if grads is None:  # critic ignores its input entirely
        grads = torch.zeros_like(x)
    norms = grads.reshape(x.shape[0], -1).norm(2, dim=1)
    return ((norms - 1) ** 2).mean()


def discriminator_adversarial(d, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """log D(I) + log(1 - D(I')), batch-averaged. 0 is the supremum."""
    p_real = _patch_probability(d, real)
    p_fake = _patch_probability(d, fake)
    return (torch.log(p_real) + torch.log(1 - p_fake)).mean()


def discriminator_loss(d, real, fake, lambda_gp: float, seed=None) -> torch.Tensor:
    """Adversarial term plus weighted gradient penalty (see module docstring
    for the sign convention)."""
    return discriminator_adversarial(d, real, fake) + lambda_gp * gradient_penalty(
        d, real, fake.detach(), seed=seed
    )


def discriminator_objective(d, real, fake, lambda_gp: float, seed=None) -> torch.Tensor:
    """What gradient descent minimizes when training the discriminator."""
    return -discriminator_adversarial(d, real, fake.detach()) + lambda_gp * gradient_penalty(
        d, real, fake.detach(), seed=seed
    )


def generator_adversarial(d, fake: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator term -log D(I')."""
    return -torch.log(_patch_probability(d, fake)).mean()


def generator_loss(real, fake, weights: LossWeights, extractor=None, d=None) -> torch.Tensor:
    """L1 + lambda_perc * perceptual + lambda_gan * (-log D(fake)).

    With lambda_gan = 0 this is exactly the plain (non-adversarial) training
    loss.
    """
    _check_shapes(real, fake)
    loss = l1_loss(real, fake)
    if weights.lambda_perc > 0:
        if extractor is None:
            raise ValueError("lambda_perc > 0 requires a feature extractor")
        loss = loss + weights.lambda_perc * perceptual_loss(real, fake, extractor)
    if weights.lambda_gan > 0:
        if d is None:
            raise ValueError("lambda_gan > 0 requires a discriminator")
        loss = loss + weights.lambda_gan * generator_adversarial(d, fake)
    return loss
