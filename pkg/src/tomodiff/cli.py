"""Command-line surface tying the pipeline together.

Every run resolves its options (flags over config file over defaults),
writes its outputs, and drops a JSON manifest beside them with the resolved
config, seed, package version, and input checksums, so any stage can be
re-run identically. Failure categories map to distinct exit codes (see
errors module); usage errors exit with code 2.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, resolve
from .data import (
    SeriesLayout,
    Topology,
    build_routing_matrix,
    compute_link_loads,
    load_link_loads,
    load_matrix_csv,
    load_routing_matrix,
    load_tm_series,
    write_matrix_csv,
)
from .diffusion import SamplerConfig, random_bundle, sample
from .errors import MissingInputError, ShapeError, TomodiffError
from .estimator import EstimateConfig, estimate
from .manifest import write_manifest
from .metrics import (
    aggregate_hourly,
    error_cdf,
    metric_report,
    normalized_abs_errors,
)
from .projections import project_2d
from .trainer import TrainConfig, make_generator, train_pipeline


@click.group()
@click.version_option(version=__version__, prog_name="tomodiff")
def cli() -> None:
    """Traffic-matrix synthesis and tomography estimation with a latent
    diffusion model."""


@cli.group()
def data() -> None:
    """Topology, routing-matrix, and link-load utilities."""


@data.command("build-routing")
@click.option("--topology", "topology_path", required=True, type=click.Path())
@click.option("--policy", type=click.Choice(["deterministic", "ecmp"]), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
def build_routing_cmd(topology_path: str, policy: str | None, out_path: str, config_path: str | None) -> None:
    """Build the routing matrix for a topology file."""
    opts = resolve(load_config(config_path), "data", {"policy": policy}, {"policy": "deterministic"})
    topo = Topology.from_file(topology_path)
    routing = build_routing_matrix(topo, opts["policy"])
    write_matrix_csv(out_path, routing.entries)
    write_manifest(
        Path(out_path).with_suffix(".manifest.json"),
        command="data build-routing",
        config={"policy": opts["policy"], "nodes": topo.num_nodes, "links": topo.num_links},
        inputs={"topology": topology_path},
        outputs=[str(out_path)],
    )
    click.echo(f"routing matrix {routing.m}x{routing.n} -> {out_path}")


@data.command("link-loads")
@click.option("--routing", "routing_path", required=True, type=click.Path())
@click.option("--tm", "tm_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--interval", type=float, default=None)
@click.option("--unit", type=str, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def link_loads_cmd(
    routing_path: str, tm_path: str, out_path: str, interval: float | None, unit: str | None, config_path: str | None
) -> None:
    """Compute per-link loads from a TM series and a routing matrix."""
    opts = resolve(
        load_config(config_path),
        "data",
        {"interval": interval, "unit": unit},
        {"interval": 300.0, "unit": "bytes", "policy": "deterministic"},
    )
    routing = load_routing_matrix(routing_path)
    series = load_tm_series(tm_path, SeriesLayout(interval=opts["interval"], unit=opts["unit"]))
    loads = compute_link_loads(routing, series)
    write_matrix_csv(out_path, loads.values)
    write_manifest(
        Path(out_path).with_suffix(".manifest.json"),
        command="data link-loads",
        config={"interval": opts["interval"], "unit": opts["unit"]},
        inputs={"routing": routing_path, "tm": tm_path},
        outputs=[str(out_path)],
    )
    click.echo(f"link loads {loads.num_timepoints}x{loads.m} -> {out_path}")


TRAIN_DEFAULTS = {
    "latent_dim": 128,
    "hidden_dim": 0,  # 0 selects 2 * latent_dim
    "step_dim": 32,
    "diffusion_steps": 1000,
    "beta_start": 1e-4,
    "beta_end": 0.02,
    "pretrain_epochs": 100,
    "joint_epochs": 100,
    "batch_size": 32,
    "learning_rate": 1e-4,
    "lr_decay": False,
    "seed": 0,
    "holdout_fraction": 0.1,
    "interval": 300.0,
    "unit": "bytes",
}


@cli.command("train")
@click.option("--tm", "tm_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--latent-dim", type=int, default=None)
@click.option("--hidden-dim", type=int, default=None)
@click.option("--step-dim", type=int, default=None)
@click.option("--diffusion-steps", type=int, default=None)
@click.option("--beta-start", type=float, default=None)
@click.option("--beta-end", type=float, default=None)
@click.option("--pretrain-epochs", type=int, default=None)
@click.option("--joint-epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--lr-decay/--no-lr-decay", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--holdout-fraction", type=float, default=None)
@click.option("--interval", type=float, default=None)
def train_cmd(tm_path: str, out_path: str, config_path: str | None, **flags) -> None:
    """Pretrain the autoencoder, then jointly train the diffusion model."""
    opts = resolve(load_config(config_path), "train", flags, TRAIN_DEFAULTS)
    series = load_tm_series(tm_path, SeriesLayout(interval=opts["interval"], unit=opts["unit"]))
    config = TrainConfig(
        latent_dim=opts["latent_dim"],
        hidden_dim=opts["hidden_dim"] or None,
        step_dim=opts["step_dim"],
        diffusion_steps=opts["diffusion_steps"],
        beta_start=opts["beta_start"],
        beta_end=opts["beta_end"],
        pretrain_epochs=opts["pretrain_epochs"],
        joint_epochs=opts["joint_epochs"],
        batch_size=opts["batch_size"],
        learning_rate=opts["learning_rate"],
        lr_decay=opts["lr_decay"],
        seed=opts["seed"],
        holdout_fraction=opts["holdout_fraction"],
    )
    ckpt = train_pipeline(config, series)
    save_checkpoint(ckpt, out_path)
    write_manifest(
        Path(out_path).with_suffix(".manifest.json"),
        command="train",
        config={k: opts[k] for k in TRAIN_DEFAULTS},
        inputs={"tm": tm_path},
        outputs=[str(out_path)],
        extra={
            "seed": opts["seed"],
            "final_losses": {
                "reconstruction": ckpt.meta["final_recon_loss"],
                "diffusion": ckpt.meta["final_diffusion_loss"],
            },
        },
    )
    click.echo(
        f"checkpoint -> {out_path} "
        f"(recon {ckpt.meta['final_recon_loss']:.6g}, diffusion {ckpt.meta['final_diffusion_loss']:.6g})"
    )


SAMPLER_DEFAULTS = {"sampler": "ddim", "ddim_steps": 50, "eta": 0.0}


def _sampler_config(opts: dict) -> SamplerConfig:
    return SamplerConfig(mode=opts["sampler"], ddim_steps=opts["ddim_steps"], eta=opts["eta"])


@cli.command("synth")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path())
@click.option("--count", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--sampler", type=click.Choice(["ddpm", "ddim"]), default=None)
@click.option("--ddim-steps", type=int, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def synth_cmd(ckpt_path: str, count: int | None, seed: int | None, out_path: str, config_path: str | None, **flags) -> None:
    """Generate synthetic traffic matrices from a trained checkpoint."""
    defaults = {"count": 64, "seed": 0, **SAMPLER_DEFAULTS}
    opts = resolve(load_config(config_path), "synth", {"count": count, "seed": seed, **flags}, defaults)
    ckpt = load_checkpoint(ckpt_path)
    sampler = _sampler_config(opts)
    generator = make_generator(opts["seed"])
    bundle = random_bundle(
        sampler, ckpt.schedule.num_steps, opts["count"], ckpt.latent_dim, generator=generator
    )
    with torch.no_grad():
        synth = sample(ckpt.schedule, ckpt.denoiser, ckpt.autoencoder.recover, bundle, sampler)
    write_matrix_csv(out_path, synth.double().numpy())
    write_manifest(
        Path(out_path).with_suffix(".manifest.json"),
        command="synth",
        config={k: opts[k] for k in defaults},
        inputs={"checkpoint": ckpt_path},
        outputs=[str(out_path)],
        extra={"seed": opts["seed"]},
    )
    click.echo(f"{opts['count']} synthetic TMs -> {out_path}")


@cli.command("estimate")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path())
@click.option("--routing", "routing_path", required=True, type=click.Path())
@click.option("--loads", "loads_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--i-opt", type=int, default=None)
@click.option("--n-init", type=int, default=None)
@click.option("--norm", type=click.Choice(["l2", "l1"]), default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--sampler", type=click.Choice(["ddpm", "ddim"]), default=None)
@click.option("--ddim-steps", type=int, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def estimate_cmd(
    ckpt_path: str, routing_path: str, loads_path: str, out_path: str, config_path: str | None, **flags
) -> None:
    """Estimate traffic matrices from link loads through the trained model."""
    defaults = {
        "i_opt": 500,
        "n_init": 64,
        "norm": "l2",
        "learning_rate": 1e-2,
        "seed": 0,
        **SAMPLER_DEFAULTS,
    }
    opts = resolve(load_config(config_path), "estimate", flags, defaults)
    ckpt = load_checkpoint(ckpt_path)
    routing = load_routing_matrix(routing_path)
    if routing.n != ckpt.input_dim:
        raise ShapeError(
            f"routing matrix has {routing.n} flows but checkpoint expects {ckpt.input_dim}"
        )
    loads = load_link_loads(loads_path)
    config = EstimateConfig(
        i_opt=opts["i_opt"],
        n_init=opts["n_init"],
        norm=opts["norm"],
        learning_rate=opts["learning_rate"],
        sampler=_sampler_config(opts),
        seed=opts["seed"],
    )
    result = estimate(ckpt, routing, loads.values, config)
    rows = np.hstack([result.estimates, result.residuals[:, None]])
    write_matrix_csv(out_path, rows)
    write_manifest(
        Path(out_path).with_suffix(".manifest.json"),
        command="estimate",
        config={k: opts[k] for k in defaults},
        inputs={"checkpoint": ckpt_path, "routing": routing_path, "loads": loads_path},
        outputs=[str(out_path)],
        extra={
            "seed": opts["seed"],
            "residual_trajectory": [list(map(float, row)) for row in result.trajectory],
            "unobservable_flows": [int(i) for i in np.flatnonzero(result.unobservable_mask)],
        },
    )
    click.echo(
        f"estimates {result.estimates.shape[0]}x{result.estimates.shape[1]} -> {out_path} "
        f"(mean residual {result.residuals.mean():.6g})"
    )


@cli.command("eval")
@click.option("--true-tm", "true_path", required=True, type=click.Path())
@click.option("--est-tm", "est_path", required=True, type=click.Path())
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@click.option("--synth", "synth_path", type=click.Path(), default=None)
@click.option("--projections", type=str, default=None, help="comma-separated: pca,tsne")
@click.option("--perplexity", type=float, default=None)
@click.option("--proj-seed", type=int, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def eval_cmd(
    true_path: str, est_path: str, out_dir: str, synth_path: str | None, config_path: str | None, **flags
) -> None:
    """Compute error metrics (and optionally distribution projections)."""
    defaults = {"projections": "pca", "perplexity": 30.0, "proj_seed": 0}
    opts = resolve(load_config(config_path), "eval", flags, defaults)
    true_series = load_tm_series(true_path)
    est_arr = load_matrix_csv(est_path)
    true_arr = true_series.values
    if est_arr.shape == (true_arr.shape[0], true_arr.shape[1] + 1):
        est_arr = est_arr[:, :-1]  # estimate files carry a trailing residual column
    if est_arr.shape != true_arr.shape:
        raise ShapeError(f"true {true_arr.shape} vs estimate {est_arr.shape}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = metric_report(true_arr, est_arr)

    timepoint_rows = np.column_stack(
        [
            np.arange(true_arr.shape[0], dtype=np.float64),
            report.rmse_per_timepoint,
            report.tre_per_timepoint,
        ]
    )
    write_matrix_csv(out / "metrics_timepoint.csv", timepoint_rows, header=["timepoint", "rmse", "tre"])
    flow_rows = np.column_stack(
        [np.arange(true_arr.shape[1], dtype=np.float64), report.sre_per_flow]
    )
    write_matrix_csv(out / "metrics_flow.csv", flow_rows, header=["flow", "sre"])

    summary_lines = ["metric,mean,median,std,max,excluded"]
    for metric in ("rmse", "tre", "sre"):
        row = report.summary[metric]
        excluded = {
            "rmse": 0,
            "tre": report.excluded_timepoints,
            "sre": report.excluded_flows,
        }[metric]
        summary_lines.append(
            metric
            + ","
            + ",".join(format(row[k], ".17g") for k in ("mean", "median", "std", "max"))
            + f",{excluded}"
        )
    (out / "metrics_summary.csv").write_text("\n".join(summary_lines) + "\n")

    values, cum = error_cdf(normalized_abs_errors(true_arr, est_arr))
    write_matrix_csv(out / "cdf.csv", np.column_stack([values, cum]), header=["abs_error", "cum_fraction"])

    outputs = ["metrics_timepoint.csv", "metrics_flow.csv", "metrics_summary.csv", "cdf.csv"]
    inputs = {"true_tm": true_path, "est_tm": est_path}
    if synth_path is not None:
        synth_arr = load_matrix_csv(synth_path)
        inputs["synth"] = synth_path
        for method in [m.strip() for m in str(opts["projections"]).split(",") if m.strip()]:
            proj = project_2d(
                true_arr,
                np.asarray(synth_arr),
                method=method,
                perplexity=opts["perplexity"],
                seed=opts["proj_seed"],
            )
            rows = np.vstack(
                [
                    np.column_stack([np.zeros(len(proj.real_coords)), proj.real_coords]),
                    np.column_stack([np.ones(len(proj.synth_coords)), proj.synth_coords]),
                ]
            )
            name = f"projection_{method}.csv"
            write_matrix_csv(out / name, rows, header=["is_synth", "x", "y"])
            outputs.append(name)
    write_manifest(
        out / "eval.manifest.json",
        command="eval",
        config={k: opts[k] for k in defaults},
        inputs=inputs,
        outputs=outputs,
    )
    click.echo(f"metrics -> {out_dir} (mean TRE {report.summary['tre']['mean']:.6g})")


@cli.command("plot")
@click.option("--eval-dir", "eval_dir", required=True, type=click.Path())
@click.option("--out-dir", "out_dir", required=True, type=click.Path())
@click.option("--images/--no-images", default=True)
@click.option("--hourly", type=click.Choice(["mean", "sum"]), default=None)
@click.option("--interval", type=float, default=None)
@click.option("--config", "config_path", type=click.Path(), default=None)
def plot_cmd(
    eval_dir: str, out_dir: str, images: bool, config_path: str | None, **flags
) -> None:
    """Render eval outputs; plot inputs are also re-emitted as CSV."""
    defaults = {"hourly": "mean", "interval": 300.0}
    opts = resolve(load_config(config_path), "plot", flags, defaults)
    src = Path(eval_dir)
    timepoint_path = src / "metrics_timepoint.csv"
    if not timepoint_path.exists():
        raise MissingInputError(f"eval outputs not found under {eval_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    timepoint = np.genfromtxt(timepoint_path, delimiter=",", skip_header=1)
    timepoint = np.atleast_2d(timepoint)
    tre_hourly = aggregate_hourly(timepoint[:, 2], opts["interval"], opts["hourly"])
    write_matrix_csv(
        out / "tre_hourly.csv",
        np.column_stack([np.arange(tre_hourly.size, dtype=np.float64), tre_hourly]),
        header=["hour", "tre"],
    )
    outputs = ["tre_hourly.csv"]

    cdf_path = src / "cdf.csv"
    cdf = np.atleast_2d(np.genfromtxt(cdf_path, delimiter=",", skip_header=1)) if cdf_path.exists() else None
    projections = sorted(src.glob("projection_*.csv"))

    if images:
        try:
            import matplotlib

            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            click.echo("matplotlib unavailable; skipping image emission", err=True)
            images = False
    if images:
        fig, ax = plt.subplots()
        ax.plot(np.arange(tre_hourly.size), tre_hourly)
        ax.set_xlabel("hour")
        ax.set_ylabel("temporal relative error")
        fig.savefig(out / "tre_hourly.png", dpi=120)
        plt.close(fig)
        outputs.append("tre_hourly.png")
        if cdf is not None:
            fig, ax = plt.subplots()
            ax.step(cdf[:, 0], cdf[:, 1], where="post")
            ax.set_xlabel("normalized absolute error")
            ax.set_ylabel("cumulative fraction")
            fig.savefig(out / "cdf.png", dpi=120)
            plt.close(fig)
            outputs.append("cdf.png")
        for proj_path in projections:
            coords = np.atleast_2d(np.genfromtxt(proj_path, delimiter=",", skip_header=1))
            fig, ax = plt.subplots()
            real = coords[coords[:, 0] == 0]
            synth = coords[coords[:, 0] == 1]
            ax.scatter(real[:, 1], real[:, 2], s=8, c="red", label="real")
            ax.scatter(synth[:, 1], synth[:, 2], s=8, c="blue", label="synthetic")
            ax.legend()
            name = proj_path.stem + ".png"
            fig.savefig(out / name, dpi=120)
            plt.close(fig)
            outputs.append(name)

    write_manifest(
        out / "plot.manifest.json",
        command="plot",
        config={**{k: opts[k] for k in defaults}, "images": images},
        inputs={"metrics_timepoint": timepoint_path},
        outputs=outputs,
    )
    click.echo(f"plots -> {out_dir}")


def main(argv: list[str] | None = None) -> None:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(130)
    except click.UsageError as exc:
        exc.show()
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except TomodiffError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    except FileNotFoundError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    sys.exit(0)


if __name__ == "__main__":
    main()
