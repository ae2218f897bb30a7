from .blocks import (
    AdaDM,
    CrossAttentionBlock,
    FeedForward,
    ResidualBlock,
    SelfAttentionBlock,
    attention,
    positional_encoding,
)
from .discriminator import DiscriminatorConfig, PatchDiscriminator
from .unet import ConditionalUNet, ModelConfig, default_gan_config, default_unet_config

__all__ = [
    "AdaDM",
    "ConditionalUNet",
    "CrossAttentionBlock",
    "DiscriminatorConfig",
    "FeedForward",
    "ModelConfig",
    "PatchDiscriminator",
    "ResidualBlock",
    "SelfAttentionBlock",
    "attention",
    "default_gan_config",
    "default_unet_config",
    "positional_encoding",
]
