"""Two-stage training: autoencoder pretraining, then joint autoencoder plus
noise-predictor training with interleaved gradient steps.

Each joint iteration takes one reconstruction gradient step on the
autoencoder, then embeds the batch (detached), draws exactly one uniform
step index and one Gaussian noise tensor, and takes one gradient step on
the noise-prediction loss. All randomness flows through a single explicit
generator so a fixed (seed, config, data) triple reproduces checkpoints
bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np
import torch

from .checkpoint import (
    ModelCheckpoint,
    decode_rng_state,
    encode_rng_state,
)
from .data import TrafficMatrixSeries
from .denoiser import NoisePredictor
from .diffusion import NoiseSchedule, diffusion_loss, forward_noise, linear_schedule
from .errors import ConfigError, TrainingError, ValidationError
from .preprocess import TrafficAutoencoder, reconstruction_loss


@dataclass(frozen=True)
class TrainConfig:
    """Model dimensions and optimization settings for both training stages."""

    latent_dim: int
    hidden_dim: int | None = None
    step_dim: int = 32
    diffusion_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    pretrain_epochs: int = 100
    joint_epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    # Optional exponential decay mode (off by default; the flat rate wins).
    lr_decay: bool = False
    lr_decay_start: float = 1e-3
    lr_decay_end: float = 1e-5
    seed: int = 0
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if self.joint_epochs < 1:
            raise ConfigError("joint_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in [0, 1)")


@dataclass
class PretrainResult:
    model: TrafficAutoencoder
    epoch_losses: list[float] = field(default_factory=list)
    holdout_losses: list[float] = field(default_factory=list)


def make_generator(seed: int) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return generator


def _holdout_split(series: TrafficMatrixSeries, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    total = series.num_timepoints
    if total == 0:
        raise ValidationError("training series is empty")
    n_hold = int(round(config.holdout_fraction * total))
    n_hold = min(n_hold, total - 1)
    fit = series.values[: total - n_hold] if n_hold else series.values
    hold = series.values[total - n_hold :] if n_hold else series.values
    return fit, hold


def _epoch_batches(num_rows: int, batch_size: int, generator: torch.Generator) -> Iterator[torch.Tensor]:
    perm = torch.randperm(num_rows, generator=generator)
    for start in range(0, num_rows, batch_size):
        yield perm[start : start + batch_size]


def _apply_lr(optimizer: torch.optim.Optimizer, config: TrainConfig, epoch: int, total: int) -> None:
    if not config.lr_decay:
        return
    if total <= 1:
        lr = config.lr_decay_start
    else:
        ratio = config.lr_decay_end / config.lr_decay_start
        lr = config.lr_decay_start * ratio ** (epoch / (total - 1))
    for group in optimizer.param_groups:
        group["lr"] = lr


def _check_finite(value: float, stage: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"{stage} loss became non-finite at epoch {epoch}: {value}")


def pretrain_autoencoder(
    config: TrainConfig,
    series: TrafficMatrixSeries,
    *,
    model: TrafficAutoencoder | None = None,
    generator: torch.Generator | None = None,
) -> PretrainResult:
    """Reconstruction-only pretraining; zero epochs returns params untouched."""
    generator = generator if generator is not None else make_generator(config.seed)
    fit_vals, hold_vals = _holdout_split(series, config)
    if model is None:
        model = TrafficAutoencoder(series.n, config.latent_dim, config.hidden_dim)
        model.init_weights(generator)
        model.fit_scaler(fit_vals)
    dtype = model.log_mean.dtype
    fit = torch.tensor(fit_vals, dtype=dtype)
    hold = torch.tensor(hold_vals, dtype=dtype)
    result = PretrainResult(model=model)
    with torch.no_grad():
        result.holdout_losses.append(float(reconstruction_loss(model, hold)))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    for epoch in range(config.pretrain_epochs):
        _apply_lr(optimizer, config, epoch, config.pretrain_epochs)
        batch_losses = []
        for idx in _epoch_batches(fit.shape[0], config.batch_size, generator):
            loss = reconstruction_loss(model, fit[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss.detach()))
        epoch_loss = float(np.mean(batch_losses))
        _check_finite(epoch_loss, "pretrain reconstruction", epoch)
        result.epoch_losses.append(epoch_loss)
        with torch.no_grad():
            result.holdout_losses.append(float(reconstruction_loss(model, hold)))
    return result


def holdout_diffusion_loss(
    sched: NoiseSchedule,
    denoiser: NoisePredictor,
    autoencoder: TrafficAutoencoder,
    hold: torch.Tensor,
    seed: int,
    probes: int = 8,
) -> float:
    """Deterministic noise-prediction loss on held-out rows (fixed probe draws)."""
    generator = make_generator(seed ^ 0x5EED)
    with torch.no_grad():
        h0 = autoencoder.embed(hold)
        total = 0.0
        for _ in range(probes):
            t = int(torch.randint(1, sched.num_steps + 1, (1,), generator=generator).item())
            eps = torch.randn(h0.shape, generator=generator, dtype=h0.dtype)
            pred = denoiser(forward_noise(sched, h0, t, eps), t)
            total += float(((eps - pred) ** 2).mean())
    return total / probes


def _snapshot_optimizer(optimizer: torch.optim.Optimizer) -> dict:
    state = {}
    for idx, entry in optimizer.state_dict()["state"].items():
        state[idx] = {
            "step": float(entry["step"]),
            "exp_avg": entry["exp_avg"].clone(),
            "exp_avg_sq": entry["exp_avg_sq"].clone(),
        }
    groups = []
    for group in optimizer.state_dict()["param_groups"]:
        groups.append(
            {
                "lr": group["lr"],
                "betas": list(group["betas"]),
                "eps": group["eps"],
                "weight_decay": group["weight_decay"],
                "params": group["params"],
            }
        )
    return {"state": state, "param_groups": groups}


def _restore_optimizer(optimizer: torch.optim.Optimizer, snapshot: dict) -> None:
    state_dict = optimizer.state_dict()
    groups = []
    for stored, current in zip(snapshot["param_groups"], state_dict["param_groups"]):
        merged = dict(current)
        merged.update(
            lr=stored["lr"],
            betas=tuple(stored["betas"]),
            eps=stored["eps"],
            weight_decay=stored["weight_decay"],
            params=stored["params"],
        )
        groups.append(merged)
    state = {}
    for idx, entry in snapshot["state"].items():
        state[int(idx)] = {
            "step": torch.tensor(entry["step"], dtype=torch.float32),
            "exp_avg": entry["exp_avg"].clone(),
            "exp_avg_sq": entry["exp_avg_sq"].clone(),
        }
    optimizer.load_state_dict({"state": state, "param_groups": groups})


def train_joint(
    config: TrainConfig,
    series: TrafficMatrixSeries,
    autoencoder: TrafficAutoencoder | None,
    denoiser: NoisePredictor | None,
    *,
    generator: torch.Generator | None = None,
    resume_from: ModelCheckpoint | None = None,
    pretrain: PretrainResult | None = None,
) -> ModelCheckpoint:
    """Joint training up to config.joint_epochs; resumable bit-exactly.

    Within each iteration the autoencoder gradient step precedes the
    noise-predictor gradient step; the embedding fed to the diffusion loss
    is detached so that step updates the noise predictor only.
    """
    sched = linear_schedule(config.diffusion_steps, config.beta_start, config.beta_end)
    history: dict = {
        "joint_recon": [],
        "joint_diffusion": [],
        "holdout_recon": [],
        "holdout_diffusion": [],
    }
    start_epoch = 0
    if resume_from is not None:
        autoencoder = resume_from.autoencoder
        denoiser = resume_from.denoiser
        stored_dims = (
            autoencoder.input_dim,
            autoencoder.latent_dim,
            denoiser.step_dim,
            resume_from.schedule.num_steps,
        )
        wanted_dims = (
            series.n,
            config.latent_dim,
            config.step_dim,
            config.diffusion_steps,
        )
        if stored_dims != wanted_dims:
            raise ConfigError(
                f"resume dimensions {stored_dims} do not match config {wanted_dims}"
            )
        generator = torch.Generator()
        generator.set_state(decode_rng_state(resume_from.meta["rng_state"]))
        start_epoch = resume_from.meta["joint_epochs"]
        history = resume_from.meta["history"]
    else:
        if autoencoder is None or denoiser is None:
            raise ValidationError("train_joint needs a pretrained autoencoder and a denoiser")
        generator = generator if generator is not None else make_generator(config.seed)

    fit_vals, hold_vals = _holdout_split(series, config)
    dtype = autoencoder.log_mean.dtype
    fit = torch.tensor(fit_vals, dtype=dtype)
    hold = torch.tensor(hold_vals, dtype=dtype)

    opt_ae = torch.optim.Adam(autoencoder.parameters(), lr=config.learning_rate)
    opt_d = torch.optim.Adam(denoiser.parameters(), lr=config.learning_rate)
    if resume_from is not None:
        _restore_optimizer(opt_ae, resume_from.optimizer_state["ae"])
        _restore_optimizer(opt_d, resume_from.optimizer_state["d"])

    if start_epoch == 0:
        with torch.no_grad():
            history["holdout_recon"].append(float(reconstruction_loss(autoencoder, hold)))
        history["holdout_diffusion"].append(
            holdout_diffusion_loss(sched, denoiser, autoencoder, hold, config.seed)
        )

    for epoch in range(start_epoch, config.joint_epochs):
        _apply_lr(opt_ae, config, epoch, config.joint_epochs)
        _apply_lr(opt_d, config, epoch, config.joint_epochs)
        recon_losses = []
        diff_losses = []
        for idx in _epoch_batches(fit.shape[0], config.batch_size, generator):
            batch = fit[idx]
            loss_r = reconstruction_loss(autoencoder, batch)
            opt_ae.zero_grad()
            loss_r.backward()
            opt_ae.step()
            with torch.no_grad():  # embedding treated as constant for this step
                x0 = autoencoder.embed(batch)
            t_s = int(torch.randint(1, sched.num_steps + 1, (1,), generator=generator).item())
            eps = torch.randn(x0.shape, generator=generator, dtype=dtype)
            loss_d = diffusion_loss(sched, denoiser, x0, t=t_s, eps=eps)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
            recon_losses.append(float(loss_r.detach()))
            diff_losses.append(float(loss_d.detach()))
        recon_epoch = float(np.mean(recon_losses))
        diff_epoch = float(np.mean(diff_losses))
        _check_finite(recon_epoch, "joint reconstruction", epoch)
        _check_finite(diff_epoch, "joint diffusion", epoch)
        history["joint_recon"].append(recon_epoch)
        history["joint_diffusion"].append(diff_epoch)
        with torch.no_grad():
            history["holdout_recon"].append(float(reconstruction_loss(autoencoder, hold)))
        history["holdout_diffusion"].append(
            holdout_diffusion_loss(sched, denoiser, autoencoder, hold, config.seed)
        )

    meta = {
        "seed": config.seed,
        "train_config": asdict(config),
        "pretrain_epochs": len(pretrain.epoch_losses) if pretrain else config.pretrain_epochs,
        "joint_epochs": config.joint_epochs,
        "final_recon_loss": history["joint_recon"][-1] if history["joint_recon"] else None,
        "final_diffusion_loss": history["joint_diffusion"][-1] if history["joint_diffusion"] else None,
        "history": history,
        "rng_state": encode_rng_state(generator),
    }
    if pretrain is not None:
        meta["pretrain_history"] = {
            "epoch_losses": pretrain.epoch_losses,
            "holdout_losses": pretrain.holdout_losses,
        }
    return ModelCheckpoint(
        autoencoder=autoencoder,
        denoiser=denoiser,
        schedule=sched,
        meta=meta,
        optimizer_state={"ae": _snapshot_optimizer(opt_ae), "d": _snapshot_optimizer(opt_d)},
    )


def train_pipeline(config: TrainConfig, series: TrafficMatrixSeries) -> ModelCheckpoint:
    """Pretrain then joint-train with one shared generator (the CLI path)."""
    generator = make_generator(config.seed)
    pre = pretrain_autoencoder(config, series, generator=generator)
    denoiser = NoisePredictor(config.latent_dim, config.step_dim)
    denoiser.init_weights(generator)
    return train_joint(
        config, series, pre.model, denoiser, generator=generator, pretrain=pre
    )
