"""Shared fixtures: the toy network environment and one full training run.

The session-scoped training run uses the fixture settings of the acceptance
suite (pretrain 100 / joint 300 epochs at batch 32, then best-of-64 init and
500 optimization epochs) so heavyweight work happens once.
"""

from __future__ import annotations

import time

import pytest

import tomodiff as td
from tomodiff.diffusion import SamplerConfig
from tomodiff.estimator import EstimateConfig, estimate
from tomodiff.trainer import TrainConfig, train_pipeline

from toynet import toy_series, toy_topology

TOY_TRAIN_CONFIG = TrainConfig(
    latent_dim=8,
    hidden_dim=32,
    step_dim=32,
    diffusion_steps=1000,
    pretrain_epochs=100,
    joint_epochs=300,
    batch_size=32,
    learning_rate=2e-3,
    seed=5,
)

TOY_SAMPLER = SamplerConfig(mode="ddim", ddim_steps=10, eta=0.0)

TOY_ESTIMATE_CONFIG = EstimateConfig(
    i_opt=500,
    n_init=64,
    learning_rate=5e-2,
    sampler=TOY_SAMPLER,
    seed=3,
)


@pytest.fixture(scope="session")
def toy_env():
    topo = toy_topology()
    series = toy_series(704, seed=11)
    routing = td.build_routing_matrix(topo, "deterministic")
    train = td.TrafficMatrixSeries(values=series.values[:640], interval=series.interval)
    test_values = series.values[640:672]
    return {
        "topology": topo,
        "routing": routing,
        "train": train,
        "test_values": test_values,
        "test_loads": test_values @ routing.entries.T,
    }


@pytest.fixture(scope="session")
def toy_run(toy_env, tmp_path_factory):
    t0 = time.time()
    ckpt = train_pipeline(TOY_TRAIN_CONFIG, toy_env["train"])
    train_seconds = time.time() - t0
    ckpt_path = tmp_path_factory.mktemp("ckpt") / "toy.tmdf"
    td.save_checkpoint(ckpt, ckpt_path)
    t1 = time.time()
    result = estimate(ckpt, toy_env["routing"], toy_env["test_loads"], TOY_ESTIMATE_CONFIG)
    estimate_seconds = time.time() - t1
    return {
        **toy_env,
        "checkpoint": ckpt,
        "checkpoint_path": ckpt_path,
        "estimate_result": result,
        "train_seconds": train_seconds,
        "estimate_seconds": estimate_seconds,
    }
