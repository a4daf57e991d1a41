"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Criteria 1-4 are closed-form and statistical checks at pinned tolerances;
criterion 5 runs the scaled-down end-to-end fixture shared via conftest;
criteria 6-7 cover the frozen-model, reproducibility, and report-integrity
contracts. Criterion 8 (full-data reproduction) is a documented long-run
script and intentionally non-gating.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

import tomodiff as td
from tomodiff.cli import main as cli_main
from tomodiff.data import write_matrix_csv
from tomodiff.denoiser import NoisePredictor
from tomodiff.diffusion import (
    NoiseBundle,
    SamplerConfig,
    ddim_step,
    ddpm_step,
    random_bundle,
    sample,
)
from tomodiff.errors import UndefinedMetricError
from tomodiff.estimator import EstimateConfig, baseline_least_norm, estimate, residual
from tomodiff.metrics import error_cdf, metric_report, normalized_abs_errors
from tomodiff.preprocess import TrafficAutoencoder, reconstruction_loss

from conftest import TOY_ESTIMATE_CONFIG, TOY_SAMPLER


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def _criterion(number, description, budget_seconds):
        start = time.time()
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"\nACCEPTANCE {number} FAIL: {description}")
            raise
        elapsed = time.time() - start
        assert elapsed < budget_seconds, f"criterion {number} took {elapsed:.1f}s"
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} PASS ({elapsed:.1f}s): {description}")

    return _criterion


def _relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def test_criterion_1_closed_form_unit_suite(criterion):
    with criterion(1, "closed-form unit suite (hand-derived values at 1e-9)", 10.0):
        # tomography model: loads are the routing matrix applied per timepoint
        a = td.RoutingMatrix(entries=np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]))
        x = td.TrafficMatrixSeries(values=np.array([[5.0, 0.0, 2.0]]))
        loads = td.compute_link_loads(a, x)
        assert np.abs(loads.values[0] - np.array([5.0, 2.0])).max() <= 1e-9
        identity = td.RoutingMatrix(entries=np.eye(3))
        assert np.array_equal(td.compute_link_loads(identity, x).values, x.values)

        # closed-form noising
        sched = td.NoiseSchedule(betas=np.array([0.1, 0.2]))
        one = torch.ones(1, dtype=torch.float64)
        fwd = float(td.forward_noise(sched, one, 2, one))
        assert abs(fwd - (math.sqrt(0.72) + math.sqrt(0.28))) <= 1e-9
        assert float(td.forward_noise(sched, one, 2, torch.zeros_like(one))) == pytest.approx(
            math.sqrt(0.72), abs=1e-9
        )

        # ancestral update coefficients
        class Stub:
            def _check_step(self, t):
                pass

            def alpha(self, t):
                return 0.9

            def alpha_bar(self, t):
                return 0.72

            def sigma(self, t):
                return math.sqrt(0.1)

        ones_hat = lambda x_t, t: torch.ones_like(x_t)
        base = float(ddpm_step(Stub(), ones_hat, one, 2, torch.zeros_like(one)))
        expected = (1.0 / math.sqrt(0.9)) * (1.0 - 0.1 / math.sqrt(0.28))
        assert abs(base - expected) <= 1e-9
        noisy = float(ddpm_step(Stub(), ones_hat, one, 2, torch.ones_like(one)))
        assert abs(noisy - (expected + math.sqrt(0.1))) <= 1e-9

        # accelerated update: deterministic rescale and oracle consistency
        zero_hat = lambda x_t, t: torch.zeros_like(x_t)
        two = torch.full((1,), 2.0, dtype=torch.float64)
        rescaled = float(ddim_step(sched, zero_hat, two, 2, 1, eta=0.0))
        assert abs(rescaled - math.sqrt(0.9 / 0.72) * 2.0) <= 1e-9
        sched40 = td.linear_schedule(40, 1e-3, 0.05)
        generator = torch.Generator().manual_seed(0)
        x0 = torch.randn(8, dtype=torch.float64, generator=generator)
        eps = torch.randn(8, dtype=torch.float64, generator=generator)
        x_t = td.forward_noise(sched40, x0, 30, eps)
        stepped = ddim_step(sched40, lambda xx, tt: eps, x_t, 30, 12, eta=0.0)
        assert float((stepped - td.forward_noise(sched40, x0, 12, eps)).abs().max()) <= 1e-9

        # estimation objective
        a1 = td.RoutingMatrix(entries=np.array([[1.0, 1.0]]))
        assert abs(residual(a1, np.array([1.0, 2.0]), np.array([5.0]), "l2") - 4.0) <= 1e-9
        assert abs(residual(a1, np.array([1.0, 2.0]), np.array([5.0]), "l1") - 2.0) <= 1e-9
        assert np.abs(baseline_least_norm(a1, np.array([4.0])) - np.array([2.0, 2.0])).max() <= 1e-9

        # error metrics
        assert abs(td.rmse(np.array([1.0, 2.0]), np.array([2.0, 4.0])) - math.sqrt(2.5)) <= 1e-9
        assert abs(td.tre(np.array([1.0, 2.0]), np.array([2.0, 4.0])) - 1.0) <= 1e-9
        assert abs(td.sre(0, np.array([[1.0], [3.0]]), np.array([[2.0], [2.0]])) - 0.5) <= 1e-9
        values, cum = error_cdf(np.array([0.1, 0.3]))
        assert values.tolist() == [0.1, 0.3] and cum.tolist() == [0.5, 1.0]


def test_criterion_2_schedule_forward_statistics(criterion):
    with criterion(2, "schedule and forward-noise statistics (T=1000 linear)", 30.0):
        sched = td.linear_schedule(1000, 1e-4, 0.02)
        assert sched.alpha_bar(1000) < 1e-4
        generator = torch.Generator().manual_seed(2024)
        x0 = torch.rand(8, generator=generator, dtype=torch.float64) * 6 - 3
        eps = torch.randn(10_000, 8, generator=generator, dtype=torch.float64)
        draws = td.forward_noise(sched, x0.expand(10_000, 8), 1000, eps)
        mean = draws.mean(dim=0)
        var = draws.var(dim=0)
        assert float(mean.abs().max()) <= 0.05
        assert 0.9 <= float(var.min()) and float(var.max()) <= 1.1


def test_criterion_3_ddim_ddpm_equivalence(criterion):
    with criterion(3, "accelerated sampler matches ancestral trajectories (eta=1)", 30.0):
        sched = td.linear_schedule(1000, 1e-4, 0.02)
        generator = torch.Generator().manual_seed(7)
        x_ddpm = torch.randn(100, 8, dtype=torch.float64, generator=generator)
        x_ddim = x_ddpm.clone()
        z = torch.zeros_like(x_ddpm)  # shared noises (see decisions ledger)
        worst = 0.0
        for t in range(1000, 0, -1):
            eps_hat = torch.randn(100, 8, dtype=torch.float64, generator=generator)
            oracle = lambda xx, tt: eps_hat
            x_ddpm = ddpm_step(sched, oracle, x_ddpm, t, z)
            x_ddim = ddim_step(sched, oracle, x_ddim, t, t - 1, eta=1.0, z=z)
            worst = max(worst, float((x_ddpm - x_ddim).abs().max()))
            x_ddim = x_ddpm.clone()  # per-step comparison on a shared trajectory
        assert worst <= 1e-10, worst


def _toy_float64_models(seed=7, n=16, k=8):
    generator = torch.Generator().manual_seed(seed)
    rng = np.random.RandomState(3)
    autoencoder = TrafficAutoencoder(n, k, dtype=torch.float64)
    autoencoder.init_weights(generator)
    autoencoder.fit_scaler(rng.gamma(2.0, 50.0, size=(200, n)))
    denoiser = NoisePredictor(k, dtype=torch.float64)
    denoiser.init_weights(generator)
    return autoencoder, denoiser, rng, generator


def test_criterion_4_gradient_suite(criterion):
    with criterion(4, "gradient suite vs central finite differences (1e-3)", 60.0):
        autoencoder, denoiser, rng, generator = _toy_float64_models()
        h = 1e-6

        # noise-prediction network wrt its input
        probe = torch.tensor(rng.randn(8), dtype=torch.float64)
        x = torch.tensor(rng.randn(3, 8), dtype=torch.float64, requires_grad=True)
        (denoiser(x, 5) * probe).sum().backward()
        checked = 0
        for row in range(3):
            for col in range(8):
                if checked >= 20:
                    break
                up, down = x.detach().clone(), x.detach().clone()
                up[row, col] += h
                down[row, col] -= h
                with torch.no_grad():
                    fd = float(
                        ((denoiser(up, 5) - denoiser(down, 5)) * probe).sum() / (2 * h)
                    )
                assert _relative_error(fd, float(x.grad[row, col])) <= 1e-3
                checked += 1
        assert checked >= 20

        # autoencoder parameters under the reconstruction objective
        batch = torch.tensor(rng.gamma(2.0, 50.0, size=(4, 16)), dtype=torch.float64)
        loss = reconstruction_loss(autoencoder, batch)
        loss.backward()
        params = list(autoencoder.parameters())
        for _ in range(20):
            p = params[rng.randint(len(params))]
            flat = p.detach().reshape(-1)
            idx = rng.randint(flat.numel())
            with torch.no_grad():
                original = float(flat[idx])
                flat[idx] = original + h
                up_val = float(reconstruction_loss(autoencoder, batch))
                flat[idx] = original - h
                down_val = float(reconstruction_loss(autoencoder, batch))
                flat[idx] = original
            fd = (up_val - down_val) / (2 * h)
            assert _relative_error(fd, float(p.grad.reshape(-1)[idx])) <= 1e-3

        # end-to-end estimation objective through a 5-step accelerated sampler
        sched = td.linear_schedule(40, 1e-3, 0.05)
        config = SamplerConfig(mode="ddim", ddim_steps=5, eta=0.7)
        bundle = random_bundle(config, 40, 2, 8, generator=generator, dtype=torch.float64)
        a = torch.tensor((rng.rand(5, 16) < 0.4) * 1.0, dtype=torch.float64)
        y = torch.tensor(rng.gamma(2.0, 100.0, size=(2, 5)), dtype=torch.float64)
        for p in list(autoencoder.parameters()) + list(denoiser.parameters()):
            p.requires_grad_(False)

        def objective(terminal, noises):
            b = NoiseBundle(terminal=terminal, step_noises=noises)
            x_hat = sample(sched, denoiser, autoencoder.recover, b, config)
            return ((x_hat @ a.T - y) ** 2).sum(dim=1).mean()

        terminal = bundle.terminal.clone().requires_grad_(True)
        noises = bundle.step_noises.clone().requires_grad_(True)
        objective(terminal, noises).backward()
        for _ in range(20):
            if rng.rand() < 0.5:
                i, j = rng.randint(2), rng.randint(8)
                up, down = bundle.terminal.clone(), bundle.terminal.clone()
                up[i, j] += h
                down[i, j] -= h
                fd = float(
                    (objective(up, bundle.step_noises) - objective(down, bundle.step_noises))
                    / (2 * h)
                )
                an = float(terminal.grad[i, j])
            else:
                i, s, j = rng.randint(2), rng.randint(noises.shape[1]), rng.randint(8)
                up, down = bundle.step_noises.clone(), bundle.step_noises.clone()
                up[i, s, j] += h
                down[i, s, j] -= h
                fd = float(
                    (objective(bundle.terminal, up) - objective(bundle.terminal, down))
                    / (2 * h)
                )
                an = float(noises.grad[i, s, j])
            assert _relative_error(fd, an) <= 1e-3


def test_criterion_5_toy_end_to_end(criterion, toy_run):
    fixture_seconds = toy_run["train_seconds"] + toy_run["estimate_seconds"]
    with criterion(
        5,
        f"toy end-to-end fixture (train+estimate {fixture_seconds:.0f}s, baselines)",
        1800.0,
    ):
        routing = toy_run["routing"]
        assert routing.m == 5 and routing.n == 16
        assert np.linalg.matrix_rank(routing.entries) < routing.n  # verified, not assumed

        result = toy_run["estimate_result"]
        init_residual = result.trajectory[0].mean()
        final_residual = result.residuals.mean()
        assert final_residual <= 0.5 * init_residual, (final_residual, init_residual)

        test_values = toy_run["test_values"]
        diffusion_report = metric_report(test_values, result.estimates)
        baseline = baseline_least_norm(routing, toy_run["test_loads"])
        baseline_report = metric_report(test_values, baseline)
        assert (
            diffusion_report.summary["tre"]["mean"] < baseline_report.summary["tre"]["mean"]
        ), (diffusion_report.summary["tre"], baseline_report.summary["tre"])

        # same seed, same checkpoint: identical metric reports
        repeat = estimate(
            toy_run["checkpoint"], routing, toy_run["test_loads"], TOY_ESTIMATE_CONFIG
        )
        repeat_report = metric_report(test_values, repeat.estimates)
        assert repeat_report.digest() == diffusion_report.digest()

        assert toy_run["train_seconds"] + toy_run["estimate_seconds"] < 1800.0


def test_criterion_6_frozen_model_and_reproducibility(criterion, toy_run, tmp_path):
    with criterion(6, "frozen-model, checkpoint round-trip, manifest re-run", 300.0):
        # estimation leaves parameters untouched
        ckpt = toy_run["checkpoint"]
        before = ckpt.params_digest()
        estimate(
            ckpt,
            toy_run["routing"],
            toy_run["test_loads"][:4],
            EstimateConfig(i_opt=10, n_init=8, sampler=TOY_SAMPLER, seed=17),
        )
        assert ckpt.params_digest() == before

        # save/load round trip is bit-exact
        loaded = td.load_checkpoint(toy_run["checkpoint_path"])
        assert loaded.params_digest() == before
        for mine, theirs in (
            (ckpt.autoencoder, loaded.autoencoder),
            (ckpt.denoiser, loaded.denoiser),
        ):
            for key, tensor in mine.state_dict().items():
                assert torch.equal(tensor, theirs.state_dict()[key])
        path2 = tmp_path / "again.tmdf"
        td.save_checkpoint(loaded, path2)
        assert path2.read_bytes() == toy_run["checkpoint_path"].read_bytes()

        # a stage re-run from its manifest settings is byte-identical
        routing_path = tmp_path / "routing.csv"
        write_matrix_csv(routing_path, toy_run["routing"].entries)
        loads_path = tmp_path / "loads.csv"
        write_matrix_csv(loads_path, toy_run["test_loads"][:4])

        def run_estimate(out_path, opts):
            args = [
                "estimate",
                "--checkpoint",
                str(toy_run["checkpoint_path"]),
                "--routing",
                str(routing_path),
                "--loads",
                str(loads_path),
                "--out",
                str(out_path),
                "--i-opt",
                str(opts["i_opt"]),
                "--n-init",
                str(opts["n_init"]),
                "--norm",
                str(opts["norm"]),
                "--learning-rate",
                str(opts["learning_rate"]),
                "--seed",
                str(opts["seed"]),
                "--sampler",
                str(opts["sampler"]),
                "--ddim-steps",
                str(opts["ddim_steps"]),
                "--eta",
                str(opts["eta"]),
            ]
            with pytest.raises(SystemExit) as excinfo:
                cli_main(args)
            assert excinfo.value.code == 0

        first_out = tmp_path / "est1.csv"
        opts = {
            "i_opt": 20,
            "n_init": 8,
            "norm": "l2",
            "learning_rate": 0.05,
            "seed": 23,
            "sampler": "ddim",
            "ddim_steps": 10,
            "eta": 0.0,
        }
        run_estimate(first_out, opts)
        import json

        manifest = json.loads(first_out.with_suffix(".manifest.json").read_text())
        second_out = tmp_path / "est2.csv"
        run_estimate(second_out, manifest["config"])  # resolved config alone
        assert second_out.read_bytes() == first_out.read_bytes()


def test_criterion_7_metric_report_integrity(criterion):
    with criterion(7, "metric report integrity, CDF properties, exclusions", 10.0):
        rng = np.random.RandomState(9)
        truth = rng.gamma(2.0, 10.0, size=(48, 12))
        truth[:, 3] = 0.0  # silent flow
        truth[5] = 0.0  # all-zero timepoint
        est = np.abs(truth * rng.uniform(0.6, 1.4, size=truth.shape) + rng.rand(48, 12))
        report = metric_report(truth, est)
        assert report.excluded_timepoints == 1
        assert report.excluded_flows == 1
        for name, vec in (
            ("rmse", report.rmse_per_timepoint),
            ("tre", report.tre_per_timepoint),
            ("sre", report.sre_per_flow),
        ):
            defined = vec[~np.isnan(vec)]
            assert abs(report.summary[name]["mean"] - defined.mean()) <= 1e-9
            assert abs(report.summary[name]["median"] - np.median(defined)) <= 1e-9
            assert abs(report.summary[name]["std"] - defined.std()) <= 1e-9
            assert abs(report.summary[name]["max"] - defined.max()) <= 1e-9
        with pytest.raises(UndefinedMetricError):
            td.tre(np.zeros(4), np.ones(4))

        values, cum = error_cdf(normalized_abs_errors(truth, est))
        assert (np.diff(values) > 0).all()
        assert (np.diff(cum) > 0).all()
        assert cum[-1] == 1.0
        assert cum[0] > 0.0


def test_criterion_8_full_reproduction_nongating(criterion, capsys):
    with capsys.disabled():
        print(
            "\nACCEPTANCE 8 SKIP (non-gating): full-scale reproduction is the "
            "documented long-run path, see scripts/reproduce_abilene.py"
        )
    pytest.skip("non-gating long-run reproduction; see scripts/reproduce_abilene.py")
