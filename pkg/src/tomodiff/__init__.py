"""Latent denoising-diffusion models for traffic-matrix synthesis and
network-tomography estimation from link loads."""

__version__ = "0.1.0"

from .data import (
    LinkLoadSeries,
    RoutingMatrix,
    SeriesLayout,
    Topology,
    TrafficMatrixSeries,
    build_routing_matrix,
    compute_link_loads,
    load_tm_series,
    split_train_test,
)
from .diffusion import (
    NoiseBundle,
    NoiseSchedule,
    SamplerConfig,
    ddim_step,
    ddpm_step,
    diffusion_loss,
    forward_noise,
    linear_schedule,
    sample,
    sample_latent,
)
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .denoiser import NoisePredictor, step_embedding
from .estimator import (
    EstimateConfig,
    EstimateResult,
    baseline_least_norm,
    estimate,
    init_search,
    residual,
)
from .metrics import MetricReport, error_cdf, metric_report, rmse, sre, tre
from .preprocess import TrafficAutoencoder, reconstruction_loss
from .projections import ProjectionResult, project_2d
from .trainer import TrainConfig, pretrain_autoencoder, train_joint, train_pipeline
