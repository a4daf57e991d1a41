"""Traffic-matrix estimation from link loads through the trained sampler.

The estimate of a timepoint is a sampled traffic vector whose noise bundle
(terminal latent plus any per-step noises) minimizes the tomography
residual. A best-of-N search seeds the bundle, then Adam descends on the
residual through the frozen sampler; model parameters are never touched.
Per-timepoint bundles are independent coordinates of the joint objective,
so timepoints whose residual stalls below a tolerance are frozen early.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoint import ModelCheckpoint
from .data import RoutingMatrix
from .diffusion import NoiseBundle, SamplerConfig, random_bundle, sample
from .errors import OptimizationError, ShapeError, ValidationError

NORMS = ("l2", "l1")

STALL_TOL = 1e-8


@dataclass(frozen=True)
class EstimateConfig:
    """Optimization settings for link-load inversion."""

    i_opt: int = 500
    n_init: int = 64
    norm: str = "l2"
    learning_rate: float = 1e-2
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_init < 1:
            raise ValidationError("n_init must be >= 1")
        if self.i_opt < 0:
            raise ValidationError("i_opt must be >= 0")
        if self.norm not in NORMS:
            raise ValidationError(f"norm must be one of {NORMS}, got {self.norm!r}")


@dataclass
class EstimateResult:
    """Estimated traffic vectors with residual diagnostics."""

    estimates: np.ndarray  # (B, n), nonnegative
    residuals: np.ndarray  # (B,), final per-timepoint residual
    trajectory: np.ndarray  # (i_opt + 1, B), residual per epoch incl. init
    unobservable_mask: np.ndarray  # (n,), flows with all-zero routing columns


def _per_timepoint_residual(
    a: torch.Tensor, x_hat: torch.Tensor, y: torch.Tensor, norm: str
) -> torch.Tensor:
    diff = x_hat @ a.T - y
    if norm == "l2":
        return (diff**2).sum(dim=1)
    return diff.abs().sum(dim=1)


def residual(
    a: RoutingMatrix, x_batch: np.ndarray, y_batch: np.ndarray, norm: str = "l2"
) -> float:
    """Mean over the batch of the chosen norm of A @ x_hat - y.

    The l2 variant is the squared Euclidean norm.
    """
    if norm not in NORMS:
        raise ValidationError(f"norm must be one of {NORMS}, got {norm!r}")
    x = np.atleast_2d(np.asarray(x_batch, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    if x.shape[1] != a.n:
        raise ShapeError(f"estimates have {x.shape[1]} flows, routing matrix has {a.n}")
    if y.shape[1] != a.m or y.shape[0] != x.shape[0]:
        raise ShapeError(f"loads shape {y.shape} does not match ({x.shape[0]}, {a.m})")
    diff = x @ a.entries.T - y
    if norm == "l2":
        return float((diff**2).sum(axis=1).mean())
    return float(np.abs(diff).sum(axis=1).mean())


def baseline_least_norm(a: RoutingMatrix, y: np.ndarray) -> np.ndarray:
    """Minimum-L2-norm solution of A x = y via pseudo-inverse, clipped at 0."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if y2.shape[1] != a.m:
        raise ShapeError(f"loads have {y2.shape[1]} links, routing matrix has {a.m}")
    x = y2 @ np.linalg.pinv(a.entries).T
    x = np.clip(x, 0.0, None)
    return x[0] if single else x


def _check_inputs(ckpt: ModelCheckpoint, a: RoutingMatrix, y_batch: np.ndarray) -> np.ndarray:
    if a.n != ckpt.input_dim:
        raise ShapeError(
            f"routing matrix has {a.n} flows, checkpoint expects {ckpt.input_dim}"
        )
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    if y.shape[1] != a.m:
        raise ShapeError(f"loads have {y.shape[1]} links, routing matrix has {a.m}")
    if y.size and y.min() < 0:
        raise ValidationError("link loads must be nonnegative")
    return y


def init_search(
    ckpt: ModelCheckpoint,
    a: RoutingMatrix,
    y_batch: np.ndarray,
    n_init: int,
    sampler: SamplerConfig,
    generator: torch.Generator | None = None,
) -> tuple[NoiseBundle, np.ndarray]:
    """Best-of-N bundle initialization.

    Draws n_init candidate bundles, samples each once, and assigns every
    timepoint the candidate minimizing its squared-L2 load residual (ties
    go to the lowest candidate index). Returns the selected per-timepoint
    bundle and the winning residuals.
    """
    y = _check_inputs(ckpt, a, y_batch)
    dtype = ckpt.autoencoder.log_mean.dtype
    candidates = random_bundle(
        sampler,
        ckpt.schedule.num_steps,
        n_init,
        ckpt.latent_dim,
        generator=generator,
        dtype=dtype,
    )
    with torch.no_grad():
        x_hat = sample(
            ckpt.schedule, ckpt.denoiser, ckpt.autoencoder.recover, candidates, sampler
        )
    loads = (x_hat.double().numpy() @ a.entries.T)[:, None, :]  # (N, 1, m)
    losses = ((loads - y[None, :, :]) ** 2).sum(axis=2)  # (N, B)
    winners = losses.argmin(axis=0)  # first minimum wins ties
    selected = NoiseBundle(
        terminal=candidates.terminal[winners].clone(),
        step_noises=candidates.step_noises[winners].clone(),
    )
    return selected, losses[winners, np.arange(y.shape[0])]


def estimate(
    ckpt: ModelCheckpoint,
    a: RoutingMatrix,
    y_batch: np.ndarray,
    config: EstimateConfig = EstimateConfig(),
) -> EstimateResult:
    """Invert link loads: best-of-N init, then i_opt Adam epochs on the bundle.

    All bundle tensors (terminal latent and per-step noises) are optimized
    jointly. The reported estimate per timepoint is its best iterate, so the
    final residual never exceeds the initialization residual. Model
    parameters are frozen throughout.
    """
    y = _check_inputs(ckpt, a, y_batch)
    batch = y.shape[0]
    generator = torch.Generator()
    generator.manual_seed(config.seed)

    frozen_params = [
        p for m in (ckpt.autoencoder, ckpt.denoiser) for p in m.parameters()
    ]
    prior_flags = [p.requires_grad for p in frozen_params]
    for p in frozen_params:
        p.requires_grad_(False)
    try:
        bundle, _ = init_search(
            ckpt, a, y, config.n_init, config.sampler, generator=generator
        )
        dtype = bundle.terminal.dtype
        a_t = torch.tensor(a.entries, dtype=dtype)
        y_t = torch.tensor(y, dtype=dtype)

        leaves = [t.requires_grad_(True) for t in bundle.tensors()]
        optimizer = torch.optim.Adam(leaves, lr=config.learning_rate)

        def sample_and_residual() -> tuple[torch.Tensor, torch.Tensor]:
            x_hat = sample(
                ckpt.schedule, ckpt.denoiser, ckpt.autoencoder.recover, bundle, config.sampler
            )
            return x_hat, _per_timepoint_residual(a_t, x_hat, y_t, config.norm)

        x_hat, res = sample_and_residual()
        trajectory = np.empty((config.i_opt + 1, batch), dtype=np.float64)
        trajectory[0] = res.detach().double().numpy()
        best_res = res.detach().clone()
        best_x = x_hat.detach().clone()
        active = best_res > STALL_TOL
        snapshots = [t.detach().clone() for t in leaves]

        for epoch in range(1, config.i_opt + 1):
            loss = (res * active.to(dtype)).sum() / batch
            optimizer.zero_grad()
            loss.backward()
            for leaf in leaves:
                if leaf.grad is not None and not torch.isfinite(leaf.grad).all():
                    raise OptimizationError(f"non-finite gradient at epoch {epoch}")
            optimizer.step()
            with torch.no_grad():
                for leaf, snap in zip(leaves, snapshots):
                    frozen = ~active
                    if frozen.any():
                        leaf.data[frozen] = snap[frozen]
                    snap.copy_(leaf.data)
            x_hat, res = sample_and_residual()
            with torch.no_grad():
                res_detached = res.detach()
                improved = res_detached < best_res
                best_res = torch.where(improved, res_detached, best_res)
                best_x[improved] = x_hat.detach()[improved]
                active = active & (best_res > STALL_TOL)
            trajectory[epoch] = res_detached.double().numpy()
        # the returned estimates are each timepoint's best iterate, so the
        # trajectory endpoint reflects what estimate() actually returns
        trajectory[-1] = best_res.double().numpy()
    finally:
        for p, flag in zip(frozen_params, prior_flags):
            p.requires_grad_(flag)

    return EstimateResult(
        estimates=best_x.detach().double().numpy(),
        residuals=best_res.double().numpy(),
        trajectory=trajectory,
        unobservable_mask=a.unobservable_flows(),
    )
