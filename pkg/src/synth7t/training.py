"""Training loops and schedules for the plain and adversarial generators.

Reproducibility contract: every random choice (epoch shuffles, gradient
penalty interpolation) is a pure function of (config.seed, epoch, step), so
resuming from a checkpoint replays exactly the trajectory of an
uninterrupted run.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import pandas as pd
import torch

from .losses import (
    LossWeights,
    build_feature_extractor,
    discriminator_adversarial,
    generator_loss,
    gradient_penalty,
    l1_loss,
)
from .nets import ConditionalUNet, DiscriminatorConfig, ModelConfig, PatchDiscriminator

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "synth7t-checkpoint-v1"


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    """Raised when a loss goes non-finite; carries the offending step."""


@dataclass(frozen=True)
class TrainConfig:
    n_epochs: int = 4
    batch_size: int = 56
    lr_init: float = 1e-4
    lr_decay_per_epoch: float = 0.5
    betas_generator: tuple = (0.9, 0.999)
    betas_discriminator: tuple = (0.0, 0.9)
    lr_discriminator: float = 2e-5
    n_critic: int = 5
    warmup_epochs: int = 1          # first epochs run n_critic=1 and a reduced lambda_gan
    warmup_lambda_gan_divisor: float = 10.0
    lambda_perc: float = 5e-2
    lambda_gan: float = 0.0
    lambda_gp: float = 10.0
    feature_extractor: str = "conv4"
    extractor_checkpoint: str | None = None
    seed: int = 0
    n_devices: int = 1              # hook for data parallelism; loops are single-device
    log_every: int = 50

    def __post_init__(self):
        if self.n_epochs < 1 or self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("n_epochs, batch_size and n_critic must be >= 1")
        if not 0 < self.lr_decay_per_epoch <= 1:
            raise ValueError(f"lr decay must be in (0, 1], got {self.lr_decay_per_epoch}")
        if self.lr_init <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")

    def loss_weights(self, epoch: int | None = None) -> LossWeights:
        lam_gan = self.lambda_gan
        if epoch is not None and epoch < self.warmup_epochs:
            lam_gan = lam_gan / self.warmup_lambda_gan_divisor
        return LossWeights(self.lambda_perc, lam_gan, self.lambda_gp)


def default_unet_train_config(**overrides) -> TrainConfig:
    base = dict(n_epochs=4, lr_init=1e-4, lr_decay_per_epoch=0.5, lambda_perc=5e-2,
                lambda_gan=0.0)
    base.update(overrides)
    return TrainConfig(**base)


def default_gan_train_config(**overrides) -> TrainConfig:
    base = dict(n_epochs=22, lr_init=1e-4, lr_decay_per_epoch=0.9, lambda_perc=1e-2,
                lambda_gan=0.1, lambda_gp=10.0, n_critic=5, lr_discriminator=2e-5)
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(epoch: int, lr_init: float, decay: float) -> float:
    """Learning rate in effect during ``epoch`` (0-based): lr_init * decay^epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr_init * decay**epoch


def effective_n_critic(epoch: int, config: TrainConfig) -> int:
    return 1 if epoch < config.warmup_epochs else config.n_critic


class SlicePairs:
    """In-memory tensor dataset of (input stack, target, context) triples."""

    def __init__(self, inputs, targets, contexts):
        self.inputs = torch.as_tensor(inputs, dtype=torch.float32)
        self.targets = torch.as_tensor(targets, dtype=torch.float32)
        self.contexts = torch.as_tensor(contexts, dtype=torch.float32)
        if not len(self.inputs) == len(self.targets) == len(self.contexts):
            raise ValueError("inputs, targets and contexts must have equal length")

    @classmethod
    def from_samples(cls, samples):
        if not samples:
            raise TrainingError("dataset is empty")
        return cls(
            torch.stack([torch.as_tensor(s.input) for s in samples]),
            torch.stack([torch.as_tensor(s.target) for s in samples]),
            torch.stack([torch.as_tensor(s.context.as_array()) for s in samples]),
        )

    def __len__(self):
        return len(self.inputs)

    def batch(self, idx):
        return self.inputs[idx], self.targets[idx], self.contexts[idx]


def _epoch_order(seed: int, epoch: int, n: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
    return torch.randperm(n, generator=gen)


def _step_seed(seed: int, step: int) -> int:
    return seed * 2_000_003 + step


def _config_hash(model_config: ModelConfig, train_config: TrainConfig,
                 disc_config: DiscriminatorConfig | None) -> str:
    payload = {
        "model": asdict(model_config),
        "train": asdict(train_config),
        "discriminator": None if disc_config is None else asdict(disc_config),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=list).encode()).hexdigest()


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    model_state: dict
    optimizer_state: dict
    epoch: int
    global_step: int
    config_hash: str
    history: list = field(default_factory=list)
    step_log: list = field(default_factory=list)
    disc_config: DiscriminatorConfig | None = None
    disc_state: dict | None = None
    disc_optimizer_state: dict | None = None

    def save(self, path):
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "model_config": asdict(self.model_config),
                "train_config": asdict(self.train_config),
                "model_state": self.model_state,
                "optimizer_state": self.optimizer_state,
                "epoch": self.epoch,
                "global_step": self.global_step,
                "config_hash": self.config_hash,
                "history": self.history,
                "step_log": self.step_log,
                "disc_config": None if self.disc_config is None else asdict(self.disc_config),
                "disc_state": self.disc_state,
                "disc_optimizer_state": self.disc_optimizer_state,
            },
            path,
        )

    @classmethod
    def load(cls, path):
        payload = torch.load(path, map_location="cpu", weights_only=False)
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise TrainingError(
                f"unrecognized checkpoint format {payload.get('format')!r} in {path}"
            )
        def detuple(d):
            return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(
            model_config=ModelConfig(**detuple(payload["model_config"])),
            train_config=TrainConfig(**detuple(payload["train_config"])),
            model_state=payload["model_state"],
            optimizer_state=payload["optimizer_state"],
            epoch=payload["epoch"],
            global_step=payload["global_step"],
            config_hash=payload["config_hash"],
            history=payload["history"],
            step_log=payload["step_log"],
            disc_config=None if payload["disc_config"] is None
            else DiscriminatorConfig(**payload["disc_config"]),
            disc_state=payload["disc_state"],
            disc_optimizer_state=payload["disc_optimizer_state"],
        )

    def build_model(self) -> ConditionalUNet:
        model = ConditionalUNet(self.model_config)
        model.load_state_dict(self.model_state)
        model.eval()
        return model


def _check_finite(value: float, what: str, epoch: int, step: int):
    if not torch.isfinite(torch.as_tensor(value)):
        raise TrainingDiverged(
            f"{what} became non-finite ({value}) at epoch {epoch}, step {step}; aborting"
        )


def write_history_csv(history: list[dict], path):
    pd.DataFrame(history).to_csv(path, index=False)


def train_unet(model_config: ModelConfig, config: TrainConfig, dataset: SlicePairs,
               val_dataset: SlicePairs | None = None, resume: Checkpoint | None = None,
               max_steps: int | None = None) -> Checkpoint:
    """Train the plain generator on L1 + lambda_perc * perceptual loss.

    Adam with the configured betas; the learning rate is lr_init *
    decay^epoch, fixed within an epoch.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    torch.manual_seed(config.seed)
    model = ConditionalUNet(model_config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr_init, betas=config.betas_generator)
    extractor = None
    if config.lambda_perc > 0:
        extractor = build_feature_extractor(config.feature_extractor,
                                            checkpoint=config.extractor_checkpoint)
    start_epoch, global_step = 0, 0
    history, step_log = [], []
    steps_per_epoch = max(1, (len(dataset) + config.batch_size - 1) // config.batch_size)
    if resume is not None:
        model.load_state_dict(resume.model_state)
        opt.load_state_dict(resume.optimizer_state)
        global_step = resume.global_step
        # position is derived from the step counter so a boundary checkpoint
        # does not replay its last epoch
        start_epoch = global_step // steps_per_epoch
        history, step_log = list(resume.history), list(resume.step_log)

    weights = config.loss_weights()
    model.train()
    done = False
    for epoch in range(start_epoch, config.n_epochs):
        lr = lr_at(epoch, config.lr_init, config.lr_decay_per_epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        order = _epoch_order(config.seed, epoch, len(dataset))
        epoch_losses = []
        start_pos = global_step % steps_per_epoch if epoch == start_epoch else 0
        for pos in range(start_pos, steps_per_epoch):
            idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
            inputs, targets, contexts = dataset.batch(idx)
            opt.zero_grad()
            fake = model(inputs, contexts)
            loss = generator_loss(targets, fake, weights, extractor=extractor)
            loss.backward()
            opt.step()
            value = float(loss.detach())
            _check_finite(value, "generator loss", epoch, global_step)
            epoch_losses.append(value)
            step_log.append({"epoch": epoch, "step": global_step, "role": "generator",
                             "loss": value, "lr": lr})
            global_step += 1
            if global_step % config.log_every == 0:
                log.info("epoch %d step %d loss %.5f", epoch, global_step, value)
            if max_steps is not None and global_step >= max_steps:
                done = True
                break
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": sum(epoch_losses) / max(1, len(epoch_losses))}
        if val_dataset is not None:
            record["val_l1"] = evaluate_l1(model, val_dataset)
        history.append(record)
        if done:
            break

    model.eval()
    return Checkpoint(
        model_config=model_config,
        train_config=config,
        model_state=model.state_dict(),
        optimizer_state=opt.state_dict(),
        epoch=epoch + (0 if done else 1),
        global_step=global_step,
        config_hash=_config_hash(model_config, config, None),
        history=history,
        step_log=step_log,
    )


def evaluate_l1(model, dataset: SlicePairs, batch_size: int = 8) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = torch.arange(start, min(start + batch_size, len(dataset)))
            inputs, targets, contexts = dataset.batch(idx)
            total += float(l1_loss(targets, model(inputs, contexts))) * len(idx)
            count += len(idx)
    model.train()
    return total / count


def train_gan(model_config: ModelConfig, disc_config: DiscriminatorConfig,
              config: TrainConfig, dataset: SlicePairs,
              val_dataset: SlicePairs | None = None, resume: Checkpoint | None = None,
              max_steps: int | None = None) -> Checkpoint:
    """Adversarial training.

    Per generator step the discriminator takes ``n_critic`` steps (1 during
    the warm-up epoch, where lambda_gan is also divided by 10). The
    discriminator minimizes -[log D(I) + log(1 - D(I'))] + lambda_gp * GP;
    its learning rate stays fixed while the generator's decays per epoch.
    ``max_steps`` counts generator steps.
    """
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    if config.lambda_gan <= 0:
        raise TrainingError("train_gan needs lambda_gan > 0 (use train_unet otherwise)")
    torch.manual_seed(config.seed)
    model = ConditionalUNet(model_config)
    disc = PatchDiscriminator(disc_config)
    opt_g = torch.optim.Adam(model.parameters(), lr=config.lr_init, betas=config.betas_generator)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_discriminator,
                             betas=config.betas_discriminator)
    extractor = None
    if config.lambda_perc > 0:
        extractor = build_feature_extractor(config.feature_extractor,
                                            checkpoint=config.extractor_checkpoint)

    start_epoch, global_step = 0, 0
    history, step_log = [], []
    steps_per_epoch = max(1, (len(dataset) + config.batch_size - 1) // config.batch_size)
    if resume is not None:
        model.load_state_dict(resume.model_state)
        opt_g.load_state_dict(resume.optimizer_state)
        disc.load_state_dict(resume.disc_state)
        opt_d.load_state_dict(resume.disc_optimizer_state)
        global_step = resume.global_step
        start_epoch = global_step // steps_per_epoch
        history, step_log = list(resume.history), list(resume.step_log)
    model.train()
    disc.train()
    done = False
    for epoch in range(start_epoch, config.n_epochs):
        lr_g = lr_at(epoch, config.lr_init, config.lr_decay_per_epoch)
        for group in opt_g.param_groups:
            group["lr"] = lr_g
        n_critic = effective_n_critic(epoch, config)
        weights = config.loss_weights(epoch)
        order = _epoch_order(config.seed, epoch, len(dataset))
        # dedicated stream of batches for discriminator steps
        disc_order = _epoch_order(config.seed + 1, epoch, len(dataset))
        disc_pos = (global_step % steps_per_epoch) * n_critic if epoch == start_epoch else 0
        epoch_losses = []
        start_pos = global_step % steps_per_epoch if epoch == start_epoch else 0
        for pos in range(start_pos, steps_per_epoch):
            for j in range(n_critic):
                lo = ((disc_pos + j) * config.batch_size) % len(dataset)
                didx = disc_order[lo : lo + config.batch_size]
                if len(didx) == 0:
                    didx = disc_order[: config.batch_size]
                inputs, targets, contexts = dataset.batch(didx)
                with torch.no_grad():
                    fake = model(inputs, contexts)
                opt_d.zero_grad()
                adv = discriminator_adversarial(disc, targets, fake)
                gp = gradient_penalty(disc, targets, fake,
                                      seed=_step_seed(config.seed, global_step * 16 + j))
                d_obj = -adv + weights.lambda_gp * gp
                d_obj.backward()
                opt_d.step()
                value = float(d_obj.detach())
                _check_finite(value, "discriminator objective", epoch, global_step)
                step_log.append({"epoch": epoch, "step": global_step, "role": "discriminator",
                                 "loss": value, "lambda_gan": weights.lambda_gan,
                                 "n_critic": n_critic, "lr": config.lr_discriminator})
            disc_pos += n_critic

            idx = order[pos * config.batch_size : (pos + 1) * config.batch_size]
            inputs, targets, contexts = dataset.batch(idx)
            opt_g.zero_grad()
            fake = model(inputs, contexts)
            loss = generator_loss(targets, fake, weights, extractor=extractor, d=disc)
            loss.backward()
            opt_g.step()
            value = float(loss.detach())
            _check_finite(value, "generator loss", epoch, global_step)
            epoch_losses.append(value)
            step_log.append({"epoch": epoch, "step": global_step, "role": "generator",
                             "loss": value, "lambda_gan": weights.lambda_gan,
                             "n_critic": n_critic, "lr": lr_g})
            global_step += 1
            if global_step % config.log_every == 0:
                log.info("epoch %d gen step %d loss %.5f", epoch, global_step, value)
            if max_steps is not None and global_step >= max_steps:
                done = True
                break
        record = {"epoch": epoch, "lr": lr_g, "n_critic": n_critic,
                  "lambda_gan": weights.lambda_gan,
                  "train_loss": sum(epoch_losses) / max(1, len(epoch_losses))}
        if val_dataset is not None:
            record["val_l1"] = evaluate_l1(model, val_dataset)
        history.append(record)
        if done:
            break

    model.eval()
    disc.eval()
    return Checkpoint(
        model_config=model_config,
        train_config=config,
        model_state=model.state_dict(),
        optimizer_state=opt_g.state_dict(),
        epoch=epoch + (0 if done else 1),
        global_step=global_step,
        config_hash=_config_hash(model_config, config, disc_config),
        history=history,
        step_log=step_log,
        disc_config=disc_config,
        disc_state=disc.state_dict(),
        disc_optimizer_state=opt_d.state_dict(),
    )
