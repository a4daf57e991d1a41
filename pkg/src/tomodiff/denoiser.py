"""Noise-prediction network over latent vectors.

Latents are flat k-vectors, so the denoiser is a 1-D bottleneck network
with concatenated skip connections (k -> k/2 -> k/4 -> middle -> mirrored
up-blocks), LeakyReLU activations, no dropout, and a sinusoidal step
embedding injected at every block.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .errors import RangeError, ValidationError
from .preprocess import init_linear_uniform


def step_embedding(
    t: int, dim: int, dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Deterministic sinusoidal encoding of a diffusion step index.

    Entries interleave sin/cos over geometrically spaced frequencies, so
    t = 0 maps to alternating (0, 1, 0, 1, ...) and step indices below 1e4
    map to pairwise distinct vectors.
    """
    if t < 0:
        raise RangeError(f"step index must be nonnegative, got {t}")
    if dim < 2 or dim % 2 != 0:
        raise ValidationError(f"embedding dim must be a positive even number, got {dim}")
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half
    )
    angles = float(t) * freqs
    emb = torch.empty(dim, dtype=torch.float64)
    emb[0::2] = torch.sin(angles)
    emb[1::2] = torch.cos(angles)
    return emb.to(dtype)


class _Block(nn.Module):
    """Linear feature map plus a linear step-embedding injection."""

    def __init__(self, in_dim: int, out_dim: int, step_dim: int, dtype: torch.dtype) -> None:
        super().__init__()
        self.feature = nn.Linear(in_dim, out_dim, dtype=dtype)
        self.cond = nn.Linear(step_dim, out_dim, dtype=dtype)

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        return self.feature(x) + self.cond(emb)


class NoisePredictor(nn.Module):
    """Predicts the noise component of a noised latent at step t."""

    def __init__(
        self,
        latent_dim: int,
        step_dim: int = 32,
        negative_slope: float = 0.01,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        super().__init__()
        self.latent_dim = latent_dim
        self.step_dim = step_dim
        h1 = max(latent_dim // 2, 2)
        h2 = max(latent_dim // 4, 2)
        self.down1 = _Block(latent_dim, h1, step_dim, dtype)
        self.down2 = _Block(h1, h2, step_dim, dtype)
        self.middle = _Block(h2, h2, step_dim, dtype)
        self.up1 = _Block(h2 + h2, h1, step_dim, dtype)
        self.up2 = _Block(h1 + h1, latent_dim, step_dim, dtype)
        # top-level skip: the input joins the final stage like any other level
        self.out = nn.Linear(2 * latent_dim, latent_dim, dtype=dtype)
        self.act = nn.LeakyReLU(negative_slope)

    def init_weights(self, generator: torch.Generator) -> None:
        for block in (self.down1, self.down2, self.middle, self.up1, self.up2):
            init_linear_uniform(block.feature, generator)
            init_linear_uniform(block.cond, generator)
        init_linear_uniform(self.out, generator)

    def forward(self, x: torch.Tensor, t: int) -> torch.Tensor:
        if t < 1:
            raise RangeError(f"step index must be >= 1, got {t}")
        if x.shape[-1] != self.latent_dim:
            raise ValidationError(
                f"expected latents of length {self.latent_dim}, got {x.shape[-1]}"
            )
        dtype = self.out.weight.dtype
        emb = step_embedding(t, self.step_dim, dtype=dtype)
        if x.ndim == 2:
            emb = emb.expand(x.shape[0], -1)
        h1 = self.act(self.down1(x, emb))
        h2 = self.act(self.down2(h1, emb))
        mid = self.act(self.middle(h2, emb))
        u1 = self.act(self.up1(torch.cat([mid, h2], dim=-1), emb))
        u2 = self.act(self.up2(torch.cat([u1, h1], dim=-1), emb))
        return self.out(torch.cat([u2, x], dim=-1))
