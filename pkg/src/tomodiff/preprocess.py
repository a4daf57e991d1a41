"""Reversible mapping between raw traffic vectors and a compact latent space.

Raw flow volumes span many orders of magnitude, so inputs are scaled
element-wise with log(1+x) and standardized per flow using training-set
statistics before the embedding network sees them. The recovery network
produces scaled-space values; its sample-space output de-standardizes,
forces log-space nonnegativity with a softplus, and inverts the log map,
so recovered traffic is always nonnegative and the whole chain stays
differentiable.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ShapeError, ValidationError

# Cap on the expm1 argument: exp(80) ~ 5.5e34 stays finite in float32 and is
# far above any real traffic volume.
LOG_SPACE_MAX = 80.0

STD_FLOOR = 1e-6  # constant flows (e.g. intra-node zeros) get unit std


def init_linear_uniform(layer: nn.Linear, generator: torch.Generator) -> None:
    """Fan-in uniform init, driven by an explicit generator for reproducibility."""
    bound = 1.0 / np.sqrt(layer.in_features)
    with torch.no_grad():
        layer.weight.uniform_(-bound, bound, generator=generator)
        if layer.bias is not None:
            layer.bias.uniform_(-bound, bound, generator=generator)


class TrafficAutoencoder(nn.Module):
    """Embedding network E (two fully connected layers) and recovery network
    R (one fully connected layer), LeakyReLU nonlinearity, plus the input
    scaling state.

    Forward evaluations are pure with respect to a frozen parameter
    snapshot; parameters mutate only inside trainer update steps.
    """

    def __init__(
        self,
        input_dim: int,
        latent_dim: int,
        hidden_dim: int | None = None,
        negative_slope: float = 0.01,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        if latent_dim >= input_dim:
            raise ValidationError(
                f"latent_dim ({latent_dim}) must be smaller than input_dim ({input_dim})"
            )
        if hidden_dim is None:
            hidden_dim = 2 * latent_dim
        self.input_dim = input_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.enc_in = nn.Linear(input_dim, hidden_dim, dtype=dtype)
        self.enc_out = nn.Linear(hidden_dim, latent_dim, dtype=dtype)
        self.dec = nn.Linear(latent_dim, input_dim, dtype=dtype)
        self.act = nn.LeakyReLU(negative_slope)
        self.register_buffer("log_mean", torch.zeros(input_dim, dtype=dtype))
        self.register_buffer("log_std", torch.ones(input_dim, dtype=dtype))

    def init_weights(self, generator: torch.Generator) -> None:
        for layer in (self.enc_in, self.enc_out, self.dec):
            init_linear_uniform(layer, generator)

    def fit_scaler(self, values: np.ndarray) -> None:
        """Fit per-flow log-space mean/std from raw training rows (T x n)."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.input_dim:
            raise ShapeError(f"expected (T, {self.input_dim}) training rows, got {values.shape}")
        if values.shape[0] == 0:
            raise ValidationError("cannot fit scaler on an empty series")
        logs = np.log1p(values)
        mean = logs.mean(axis=0)
        std = logs.std(axis=0)
        std[std < STD_FLOOR] = 1.0
        dtype = self.log_mean.dtype
        with torch.no_grad():
            self.log_mean.copy_(torch.as_tensor(mean, dtype=dtype))
            self.log_std.copy_(torch.as_tensor(std, dtype=dtype))

    def _check_input(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected vectors of length {self.input_dim}, got {x.shape[-1]}")
        if not torch.isfinite(x).all():
            raise ValidationError("input contains non-finite entries")
        if x.numel() and x.min() < 0:
            raise ValidationError("input contains negative entries")
        return x

    def scale(self, x: torch.Tensor) -> torch.Tensor:
        """log(1+x) then per-flow standardization."""
        return (torch.log1p(x) - self.log_mean) / self.log_std

    def unscale(self, u: torch.Tensor) -> torch.Tensor:
        """Exact inverse of scale (no nonnegativity map)."""
        return torch.expm1(u * self.log_std + self.log_mean)

    def encode_scaled(self, u: torch.Tensor) -> torch.Tensor:
        return self.enc_out(self.act(self.enc_in(u)))

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Map a raw traffic vector (or batch) to its latent point."""
        x = self._check_input(x)
        return self.encode_scaled(self.scale(x))

    def recover_scaled(self, h: torch.Tensor) -> torch.Tensor:
        """Recovery network output in standardized log space."""
        if h.shape[-1] != self.latent_dim:
            raise ShapeError(f"expected latents of length {self.latent_dim}, got {h.shape[-1]}")
        return self.dec(h)

    def recover(self, h: torch.Tensor) -> torch.Tensor:
        """Map a latent point back to a nonnegative traffic vector."""
        log_space = self.recover_scaled(h) * self.log_std + self.log_mean
        log_space = nn.functional.softplus(log_space).clamp(max=LOG_SPACE_MAX)
        return torch.expm1(log_space)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.recover(self.embed(x))


def reconstruction_loss(model: TrafficAutoencoder, batch: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of the squared scaled-space reconstruction error."""
    if batch.ndim != 2:
        raise ShapeError(f"expected a (B, n) batch, got shape {tuple(batch.shape)}")
    if batch.shape[0] == 0:
        raise ValidationError("reconstruction loss needs a nonempty batch")
    model._check_input(batch)
    u = model.scale(batch)
    u_hat = model.recover_scaled(model.encode_scaled(u))
    return ((u_hat - u) ** 2).sum(dim=1).mean()
