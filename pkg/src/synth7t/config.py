"""Declarative run configuration.

One YAML file per run with ``model``, ``train`` and (for the adversarial
arch) ``discriminator`` sections. Field names follow the hyperparameter
tables (n_epochs, c, channel_mult, n_groups, n_res, ca_stages, batch_size,
n_input_slices, lambda_perc, lr, betas, n_critic, lambda_gan, lambda_gp,
n_layers); omitted fields fall back to the published defaults for the chosen
architecture. Unknown keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .nets import DiscriminatorConfig, ModelConfig, default_gan_config, default_unet_config
from .training import TrainConfig, default_gan_train_config, default_unet_train_config


class ConfigError(ValueError):
    pass


_MODEL_ALIASES = {"c": "c_init"}
_MODEL_FIELDS = {"c_init", "channel_mult", "n_groups", "n_res", "ca_stages",
                 "n_input_slices", "context_len", "context_dim", "use_final_norm"}
_TRAIN_ALIASES = {"lr": "lr_init", "lr_schedule": "lr_decay_per_epoch",
                  "betas": "betas_generator"}
_TRAIN_FIELDS = {"n_epochs", "batch_size", "lr_init", "lr_decay_per_epoch",
                 "betas_generator", "betas_discriminator", "lr_discriminator",
                 "n_critic", "warmup_epochs", "warmup_lambda_gan_divisor",
                 "lambda_perc", "lambda_gan", "lambda_gp", "feature_extractor",
                 "extractor_checkpoint", "seed", "n_devices", "log_every"}
_DISC_ALIASES = {"c": "c1"}
_DISC_FIELDS = {"n_layers", "c1", "leaky_slope", "in_channels"}


@dataclass(frozen=True)
class RunConfig:
    arch: str
    model: ModelConfig
    train: TrainConfig
    discriminator: DiscriminatorConfig | None


def _normalize(section, aliases, fields, where):
    out = {}
    for key, value in (section or {}).items():
        name = aliases.get(key, key)
        if name == "dropout":
            if value not in (0, 0.0):
                raise ConfigError("dropout must be 0 (it degrades low-level synthesis tasks)")
            continue
        if name not in fields:
            raise ConfigError(f"unknown {where} field {key!r}")
        if isinstance(value, list):
            value = tuple(value)
        out[name] = value
    return out


def load_run_config(path, arch: str) -> RunConfig:
    """Load and validate a run config for ``arch`` in {"unet", "gan"}."""
    if arch not in ("unet", "gan"):
        raise ConfigError(f"arch must be 'unet' or 'gan', got {arch!r}")
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - {"model", "train", "discriminator"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    model_kw = _normalize(raw.get("model"), _MODEL_ALIASES, _MODEL_FIELDS, "model")
    train_kw = _normalize(raw.get("train"), _TRAIN_ALIASES, _TRAIN_FIELDS, "train")
    disc_kw = _normalize(raw.get("discriminator"), _DISC_ALIASES, _DISC_FIELDS, "discriminator")

    if arch == "unet":
        if raw.get("discriminator"):
            raise ConfigError("a discriminator section is only valid for --arch gan")
        model = default_unet_config(**model_kw)
        train = default_unet_train_config(**train_kw)
        return RunConfig("unet", model, train, None)

    model = default_gan_config(**model_kw)
    train = default_gan_train_config(**train_kw)
    disc = DiscriminatorConfig(**disc_kw)
    return RunConfig("gan", model, train, disc)
