"""Noise schedule, closed-form forward process, training loss, and samplers.

Noise is never drawn inside sampler steps: every random ingredient of a
sampled traffic matrix lives in a NoiseBundle supplied by the caller, so
sampling is a pure, differentiable function of (parameters, bundle). The
estimator relies on this to run gradient descent on bundles through a
frozen model.

Step indices are 1-based: t runs over 1..T_s, and step 0 denotes the clean
sample (cumulative alpha of 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import RangeError, ShapeError, ValidationError


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule and its derived per-step quantities (immutable)."""

    betas: np.ndarray

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValidationError("schedule needs at least one beta")
        if (betas <= 0).any() or (betas >= 1).any():
            raise ValidationError("betas must lie strictly inside (0, 1)")
        if (np.diff(betas) < 0).any():
            raise ValidationError("betas must be non-decreasing")
        betas = betas.copy()
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        sigmas = np.sqrt(betas)
        for arr in (alphas, alpha_bars, sigmas):
            arr.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def num_steps(self) -> int:
        return self.betas.size

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise RangeError(f"step {t} outside 1..{self.num_steps}")

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_step(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of alphas; alpha_bar(0) = 1 by convention."""
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        """Ancestral-sampling noise scale, fixed to sqrt(beta_t)."""
        self._check_step(t)
        return float(self.sigmas[t - 1])


def linear_schedule(num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Betas linearly interpolated from beta_start to beta_end inclusive."""
    if num_steps < 1:
        raise ValidationError(f"need at least one step, got {num_steps}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    return NoiseSchedule(betas=np.linspace(beta_start, beta_end, num_steps))


def forward_noise(sched: NoiseSchedule, x0: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
    """Closed-form noising: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    sched._check_step(t)
    if x0.shape != eps.shape:
        raise ShapeError(f"x0 shape {tuple(x0.shape)} != eps shape {tuple(eps.shape)}")
    abar = sched.alpha_bar(t)
    return math.sqrt(abar) * x0 + math.sqrt(1.0 - abar) * eps


def diffusion_loss(
    sched: NoiseSchedule,
    denoiser: Callable[[torch.Tensor, int], torch.Tensor],
    x0_batch: torch.Tensor,
    *,
    t: int | None = None,
    eps: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Monte-Carlo noise-prediction loss (per-element mean squared error).

    One uniform step index and one Gaussian noise tensor are drawn per call
    unless supplied explicitly.
    """
    if x0_batch.ndim != 2 or x0_batch.shape[0] == 0:
        raise ValidationError(f"expected a nonempty (B, k) batch, got {tuple(x0_batch.shape)}")
    if t is None:
        t = int(torch.randint(1, sched.num_steps + 1, (1,), generator=generator).item())
    if eps is None:
        eps = torch.randn(x0_batch.shape, generator=generator, dtype=x0_batch.dtype)
    x_t = forward_noise(sched, x0_batch, t, eps)
    return ((eps - denoiser(x_t, t)) ** 2).mean()


def ddpm_step(
    sched: NoiseSchedule,
    denoiser: Callable[[torch.Tensor, int], torch.Tensor],
    x_t: torch.Tensor,
    t: int,
    z: torch.Tensor | None = None,
) -> torch.Tensor:
    """One ancestral denoising step from x_t to x_{t-1}.

    The noise z is supplied externally; at t = 1 the noise term is dropped.
    """
    sched._check_step(t)
    eps_hat = denoiser(x_t, t)
    alpha = sched.alpha(t)
    abar = sched.alpha_bar(t)
    mean = (x_t - (1.0 - alpha) / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    return mean + sched.sigma(t) * z


def ddim_sigma(sched: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Noise scale of the accelerated sampler for the t -> t_prev jump."""
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t_prev)
    return (
        eta
        * math.sqrt((1.0 - abar_prev) / (1.0 - abar_t))
        * math.sqrt(1.0 - abar_t / abar_prev)
    )


def ddim_step(
    sched: NoiseSchedule,
    denoiser: Callable[[torch.Tensor, int], torch.Tensor],
    x_t: torch.Tensor,
    t: int,
    t_prev: int,
    eta: float = 0.0,
    z: torch.Tensor | None = None,
) -> torch.Tensor:
    """One accelerated (non-Markovian) step from x_t to x_{t_prev}.

    eta = 0 is fully deterministic; eta scales the injected noise up to the
    ancestral level.
    """
    sched._check_step(t)
    if not 0 <= t_prev < t:
        raise RangeError(f"need 0 <= t_prev < t, got t_prev={t_prev}, t={t}")
    if not 0.0 <= eta <= 1.0:
        raise RangeError(f"eta must lie in [0, 1], got {eta}")
    eps_hat = denoiser(x_t, t)
    abar_t = sched.alpha_bar(t)
    abar_prev = sched.alpha_bar(t_prev)
    x0_hat = (x_t - math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(abar_t)
    sigma = ddim_sigma(sched, t, t_prev, eta)
    dir_sq = 1.0 - abar_prev - sigma**2
    assert dir_sq >= -1e-12, "sigma exceeded the direction budget"
    out = math.sqrt(abar_prev) * x0_hat + math.sqrt(max(dir_sq, 0.0)) * eps_hat
    if sigma > 0.0 and z is not None:
        out = out + sigma * z
    return out


def ddim_step_sequence(num_steps: int, ddim_steps: int) -> list[int]:
    """Uniformly spaced, strictly increasing step subsequence ending at T_s."""
    if not 1 <= ddim_steps <= num_steps:
        raise ValidationError(f"ddim step count must lie in 1..{num_steps}, got {ddim_steps}")
    seq = np.round(np.linspace(num_steps / ddim_steps, num_steps, ddim_steps)).astype(int)
    seq = [int(v) for v in seq]
    assert all(b > a for a, b in zip(seq, seq[1:])) and seq[-1] == num_steps
    return seq


@dataclass(frozen=True)
class SamplerConfig:
    """Which reverse process to unroll and how much noise it injects."""

    mode: str = "ddim"  # "ddpm" | "ddim"
    ddim_steps: int = 50
    eta: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("ddpm", "ddim"):
            raise ValidationError(f"unknown sampler mode {self.mode!r}")
        if self.ddim_steps < 1:
            raise ValidationError("ddim_steps must be >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError(f"eta must lie in [0, 1], got {self.eta}")

    def transitions(self, num_steps: int) -> list[tuple[int, int]]:
        """(t, t_prev) pairs, iterated from the terminal step down to 0."""
        if self.mode == "ddpm":
            return [(t, t - 1) for t in range(num_steps, 0, -1)]
        seq = [0] + ddim_step_sequence(num_steps, self.ddim_steps)
        return [(seq[i], seq[i - 1]) for i in range(len(seq) - 1, 0, -1)]

    def noise_count(self, num_steps: int) -> int:
        """Number of per-step noise vectors a matching bundle carries."""
        if self.mode == "ddpm":
            return num_steps - 1  # the final step injects no noise
        if self.eta == 0.0:
            return 0
        return len(self.transitions(num_steps)) - 1  # jump to step 0 has sigma 0


@dataclass
class NoiseBundle:
    """Terminal latent plus per-step noises; fully determines one sample.

    terminal: (B, k) latent at the last diffusion step.
    step_noises: (B, n_z, k); slot i is consumed by the i-th
    noise-injecting transition counted from the terminal step downward.
    """

    terminal: torch.Tensor
    step_noises: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.terminal.shape[0]

    def validate(self, config: SamplerConfig, num_steps: int, latent_dim: int) -> None:
        if self.terminal.ndim != 2 or self.terminal.shape[1] != latent_dim:
            raise ShapeError(
                f"terminal latent must be (B, {latent_dim}), got {tuple(self.terminal.shape)}"
            )
        expected = config.noise_count(num_steps)
        if self.step_noises.shape != (self.batch_size, expected, latent_dim):
            raise ShapeError(
                f"step noises must be ({self.batch_size}, {expected}, {latent_dim}), "
                f"got {tuple(self.step_noises.shape)}"
            )
        if not (torch.isfinite(self.terminal).all() and torch.isfinite(self.step_noises).all()):
            raise ValidationError("bundle contains non-finite entries")

    def tensors(self) -> list[torch.Tensor]:
        out = [self.terminal]
        if self.step_noises.numel():
            out.append(self.step_noises)
        return out


def random_bundle(
    config: SamplerConfig,
    num_steps: int,
    batch_size: int,
    latent_dim: int,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> NoiseBundle:
    """Standard-normal bundle matching the sampler's training-time noise law."""
    n_z = config.noise_count(num_steps)
    terminal = torch.randn(batch_size, latent_dim, generator=generator, dtype=dtype)
    step_noises = torch.randn(batch_size, n_z, latent_dim, generator=generator, dtype=dtype)
    return NoiseBundle(terminal=terminal, step_noises=step_noises)


def sample_latent(
    sched: NoiseSchedule,
    denoiser: Callable[[torch.Tensor, int], torch.Tensor],
    bundle: NoiseBundle,
    config: SamplerConfig,
) -> torch.Tensor:
    """Unroll the configured reverse process down to the clean latent.

    Deterministic given (parameters, bundle) and differentiable with
    respect to every bundle tensor.
    """
    latent_dim = bundle.terminal.shape[-1]
    bundle.validate(config, sched.num_steps, latent_dim)
    x = bundle.terminal
    zi = 0
    for t, t_prev in config.transitions(sched.num_steps):
        if config.mode == "ddpm":
            z = None
            if t > 1:
                z = bundle.step_noises[:, zi]
                zi += 1
            x = ddpm_step(sched, denoiser, x, t, z)
        else:
            z = None
            if config.eta > 0.0 and t_prev > 0:
                z = bundle.step_noises[:, zi]
                zi += 1
            x = ddim_step(sched, denoiser, x, t, t_prev, config.eta, z)
    return x


def sample(
    sched: NoiseSchedule,
    denoiser: Callable[[torch.Tensor, int], torch.Tensor],
    recover: Callable[[torch.Tensor], torch.Tensor],
    bundle: NoiseBundle,
    config: SamplerConfig,
) -> torch.Tensor:
    """Sample a batch of traffic vectors: recover applied to the clean latent."""
    return recover(sample_latent(sched, denoiser, bundle, config))
