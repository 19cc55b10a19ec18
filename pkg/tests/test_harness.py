"""Experiment harness: reports, toy models, and the seeded experiments."""

import json

import numpy as np
import pytest

from lowbit_optim.harness import (
    CRASH_LOSS_FACTOR,
    LognormalSquareSignal,
    beta1_sweep,
    decay_experiment,
    finite_difference_check,
    make_linear_regression,
    make_logistic_regression,
    make_mlp,
    tracking_benchmark,
    train,
    uniform_signal_experiment,
)
from lowbit_optim.levels import build_linear_levels, build_log_levels
from lowbit_optim.optimizers import OptimizerSpec, preset
from lowbit_optim.quantizer import BlockQuantization, RoundingMode


def _log2_cfg(block_size=128):
    return BlockQuantization(build_log_levels(2, 0.5), RoundingMode.LOG_DITHER,
                             block_size, p_quantile=0.1)


def _linear2_cfg(block_size=128):
    return BlockQuantization(build_linear_levels(2), RoundingMode.NEAREST, block_size)


class TestReports:
    def test_same_seed_reproduces_byte_for_byte(self):
        a = uniform_signal_experiment(200, 0.99, _log2_cfg(), 20, seed=5)
        b = uniform_signal_experiment(200, 0.99, _log2_cfg(), 20, seed=5)
        assert a.to_json() == b.to_json()

    def test_different_seed_differs(self):
        a = uniform_signal_experiment(200, 0.99, _log2_cfg(), 20, seed=5)
        b = uniform_signal_experiment(200, 0.99, _log2_cfg(), 20, seed=6)
        assert a.to_json() != b.to_json()

    def test_write_naming_and_formats(self, tmp_path):
        report = uniform_signal_experiment(50, 0.9, None, 5, seed=3)
        paths = report.write(tmp_path, formats=("json", "csv"))
        names = sorted(p.name for p in paths)
        assert names == ["uniform-signal-3.csv", "uniform-signal-3.json"]
        parsed = json.loads(paths[0].read_text())
        assert parsed["seed"] == 3 and parsed["config"]["n"] == 50
        csv_text = (tmp_path / "uniform-signal-3.csv").read_text()
        assert csv_text.splitlines()[0] == "iteration,mean"


class TestToyModels:
    @pytest.mark.parametrize("maker", [make_linear_regression, make_logistic_regression,
                                       make_mlp])
    def test_gradient_matches_finite_differences(self, maker):
        model = maker(seed=11)
        rng = np.random.default_rng(0)
        point = model.params0 + 0.2 * rng.normal(size=model.n_params)
        assert finite_difference_check(model, point) <= 1e-4

    def test_linear_model_nearly_exact(self):
        model = make_linear_regression(seed=2)
        point = np.random.default_rng(1).normal(size=model.n_params)
        assert finite_difference_check(model, point) <= 1e-8

    def test_zero_parameter_vector_handled(self):
        model = make_mlp(seed=4)
        assert finite_difference_check(model, np.zeros(model.n_params)) <= 1e-4

    def test_losses_finite_at_init(self):
        for maker in (make_linear_regression, make_logistic_regression, make_mlp):
            model = maker(seed=9)
            assert np.isfinite(model.loss(model.params0))

    def test_minibatch_consistency(self):
        model = make_logistic_regression(seed=13)
        full = model.grad(model.params0)
        batched = np.mean(
            [model.grad(model.params0, np.arange(i, i + 64)) for i in range(0, 256, 64)],
            axis=0,
        )
        np.testing.assert_allclose(batched, full, rtol=1e-10)

    def test_rejects_bad_epsilon(self):
        with pytest.raises(ValueError):
            finite_difference_check(make_linear_regression(0), np.zeros(16), epsilon=0.0)


class TestUniformSignalExperiment:
    def test_full_precision_converges_to_signal_mean(self):
        report = uniform_signal_experiment(1000, 0.95, None, 100, seed=8)
        assert 0.45 <= report.final["final_mean"] <= 0.55
        assert report.final["fraction_codes_never_changed"] is None

    def test_nearest_linear_freezes(self):
        report = uniform_signal_experiment(1000, 0.999, _linear2_cfg(), 50, seed=8)
        drift = abs(report.final["final_mean"] - report.final["initial_quantized_mean"])
        assert drift < 0.02
        assert report.final["fraction_codes_never_changed"] == 1.0

    def test_single_block_enforced(self):
        report = uniform_signal_experiment(333, 0.99, _log2_cfg(block_size=128), 5, seed=1)
        assert report.config["quantization"]["block_size"] == 333

    def test_rejects_degenerate_sizes(self):
        with pytest.raises(ValueError):
            uniform_signal_experiment(0, 0.9, None, 10, seed=0)
        with pytest.raises(ValueError):
            uniform_signal_experiment(10, 0.9, None, 0, seed=0)


class TestDecayExperiment:
    def test_deterministic_chain(self):
        assert decay_experiment(1, 4, trials=50, seed=0) == 4.0

    def test_mean_matches_negative_binomial(self):
        mean = decay_experiment(2, 3, trials=10_000, seed=3)
        assert mean == pytest.approx(6.0, rel=0.05)

    def test_rejects_target_at_clip(self):
        with pytest.raises(ValueError):
            decay_experiment(2, 3, trials=10, seed=0, bits=2)


@pytest.fixture(scope="module")
def report():
    schemes = [("fp32", None), ("linear2-nearest", _linear2_cfg()),
               ("log2-dither", _log2_cfg())]
    return tracking_benchmark(LognormalSquareSignal(), schemes, [128, 2048],
                              steps=300, seed=11)


class TestTrackingBenchmark:
    @staticmethod
    def _mean_mae(report, scheme, block_size):
        vals = [r["mae"] for r in report.iterations
                if r["scheme"] == scheme and r["block_size"] == block_size]
        return float(np.mean(vals))

    def test_identity_scheme_zero_error(self, report):
        for bs in (128, 2048):
            assert self._mean_mae(report, "fp32", bs) == 0.0

    def test_error_non_decreasing_in_block_size(self, report):
        for scheme in ("linear2-nearest", "log2-dither"):
            assert (self._mean_mae(report, scheme, 2048)
                    >= self._mean_mae(report, scheme, 128) - 1e-12)

    def test_dithered_log_beats_nearest_linear_at_large_blocks(self, report):
        assert (self._mean_mae(report, "log2-dither", 2048)
                < self._mean_mae(report, "linear2-nearest", 2048))

    def test_oracle_matches_closed_form(self):
        beta, steps, n = 0.9, 10, 32
        signal = LognormalSquareSignal(n=n)
        rng = np.random.default_rng(np.random.SeedSequence(21).spawn(1)[0])
        signals = [signal.draw(rng, t) for t in range(steps)]
        state = np.zeros(n)
        for z in signals:
            state = beta * state + (1 - beta) * z
        closed = np.zeros(n)
        for i, z in enumerate(signals):
            closed = closed + (1 - beta) * beta ** (steps - 1 - i) * z
        np.testing.assert_allclose(state, closed, rtol=1e-12)

    def test_requires_schemes(self):
        with pytest.raises(ValueError):
            tracking_benchmark(LognormalSquareSignal(), [], [128], 10, 0)

    def test_deterministic_given_seed(self):
        signal = LognormalSquareSignal(n=128)
        schemes = [("log2", _log2_cfg())]
        a = tracking_benchmark(signal, schemes, [64], 10, seed=4)
        b = tracking_benchmark(signal, schemes, [64], 10, seed=4)
        assert a.to_json() == b.to_json()


class TestTrain:
    def test_full_precision_logistic_converges(self):
        report = train(make_logistic_regression(31), OptimizerSpec(family="adam", lr=0.01),
                       1500, seed=31)
        assert not report.final["crashed"]
        assert report.final["final_loss"] < 0.1 * report.final["initial_loss"]

    def test_crash_is_flagged_not_raised(self):
        spec = OptimizerSpec(family="adam", lr=1e5)
        report = train(make_logistic_regression(31), spec, 200, seed=31)
        assert report.final["crashed"]
        assert report.final["steps_run"] < 200 or (
            report.final["final_loss"] > CRASH_LOSS_FACTOR * report.final["initial_loss"])

    def test_deterministic_given_seed(self):
        spec = preset("solo_2_finetune", OptimizerSpec(family="adam", lr=0.01))
        a = train(make_logistic_regression(7), spec, 120, seed=7)
        b = train(make_logistic_regression(7), spec, 120, seed=7)
        assert a.to_json() == b.to_json()

    def test_config_echo_includes_quantization(self):
        spec = preset("solo_4_2_scratch", OptimizerSpec(family="adam", lr=0.01))
        report = train(make_logistic_regression(5), spec, 30, seed=5)
        opt = report.config["optimizer"]
        assert opt["beta1"] == 0.3
        assert opt["signed_state"]["scheme"] == "de_signed"
        assert opt["unsigned_state"]["scheme"] == "log_unsigned"


class TestBeta1Sweep:
    def test_best_momentum_respects_advisor_bound(self):
        """Fine-grained sweep for the 2-bit preset: the best grid point sits at
        or below the advised reduction of beta = 0.9 from 5 effective bits
        to 2 (0.527, so grid point 0.5)."""
        betas = [round(0.1 * i, 1) for i in range(1, 10)]
        report = beta1_sweep("solo_2_finetune", betas, steps=1000, seed=77)
        assert report.final["best_beta1"] <= 0.5
        assert len(report.iterations) == 9
