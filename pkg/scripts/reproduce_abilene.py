#!/usr/bin/env python3
"""Full-scale Abilene reproduction (long-running, non-gating).

Trains on the first 16 weeks of Abilene traffic matrices (5-minute
intervals, 144 flows) and estimates the 17th week from link loads computed
with the bundled Abilene routing. The reproduction target is a mean
temporal relative error around 0.2 (+/- 0.1): expect run-to-run variation
from training stochasticity, and hours of wall time on CPU.

Input format: the public Abilene TM archive ships per-interval matrices;
convert them to one CSV with one row per 5-minute interval and 144
comma-separated columns (row-major flattening of the 12 x 12 matrix,
origin-major), units bytes per interval. Pass that file via --tm.

Usage:
    python scripts/reproduce_abilene.py --tm abilene_tm.csv --out runs/abilene
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

import tomodiff as td
from tomodiff.data import SeriesLayout, write_matrix_csv
from tomodiff.diffusion import SamplerConfig
from tomodiff.estimator import EstimateConfig, baseline_least_norm, estimate
from tomodiff.trainer import TrainConfig, train_pipeline

REPO_ROOT = Path(__file__).resolve().parent.parent


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tm", required=True, help="Abilene TM series CSV (T x 144)")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--train-weeks", type=int, default=16)
    parser.add_argument("--test-weeks", type=int, default=1)
    parser.add_argument("--latent-dim", type=int, default=128)
    parser.add_argument("--pretrain-epochs", type=int, default=100)
    parser.add_argument("--joint-epochs", type=int, default=100)
    parser.add_argument("--i-opt", type=int, default=500)
    parser.add_argument("--n-init", type=int, default=64)
    parser.add_argument("--ddim-steps", type=int, default=50)
    parser.add_argument("--chunk", type=int, default=96, help="timepoints estimated jointly")
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args()


def main() -> None:
    args = parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    topo = td.Topology.from_file(REPO_ROOT / "topologies" / "abilene.topo")
    routing = td.build_routing_matrix(topo, "deterministic")
    print(f"routing matrix: {routing.m} links x {routing.n} flows")

    series = td.load_tm_series(args.tm, SeriesLayout(n=topo.num_flows, interval=300.0))
    train, test = td.split_train_test(series, args.train_weeks, args.test_weeks)
    print(f"train {train.num_timepoints} timepoints, test {test.num_timepoints}")

    config = TrainConfig(
        latent_dim=args.latent_dim,
        step_dim=64,
        diffusion_steps=1000,
        pretrain_epochs=args.pretrain_epochs,
        joint_epochs=args.joint_epochs,
        batch_size=32,
        learning_rate=1e-4,
        seed=args.seed,
    )
    t0 = time.time()
    ckpt = train_pipeline(config, train)
    td.save_checkpoint(ckpt, out / "abilene.tmdf")
    print(f"trained in {time.time() - t0:.0f}s; checkpoint -> {out / 'abilene.tmdf'}")

    loads = td.compute_link_loads(routing, test)
    sampler = SamplerConfig(mode="ddim", ddim_steps=args.ddim_steps, eta=0.0)
    est_config = EstimateConfig(
        i_opt=args.i_opt, n_init=args.n_init, sampler=sampler, seed=args.seed
    )
    estimates = np.empty_like(test.values)
    t1 = time.time()
    for start in range(0, test.num_timepoints, args.chunk):
        stop = min(start + args.chunk, test.num_timepoints)
        result = estimate(ckpt, routing, loads.values[start:stop], est_config)
        estimates[start:stop] = result.estimates
        print(
            f"  estimated {stop}/{test.num_timepoints} "
            f"(mean residual {result.residuals.mean():.4g})"
        )
    print(f"estimation took {time.time() - t1:.0f}s")

    write_matrix_csv(out / "estimates.csv", estimates)
    report = td.metric_report(test.values, estimates)
    baseline = baseline_least_norm(routing, loads.values)
    baseline_report = td.metric_report(test.values, baseline)
    print(f"mean TRE (diffusion):  {report.summary['tre']['mean']:.4f}")
    print(f"mean TRE (least-norm): {baseline_report.summary['tre']['mean']:.4f}")
    print("reproduction target: mean TRE within 0.1 of 0.2 (non-gating)")


if __name__ == "__main__":
    main()
