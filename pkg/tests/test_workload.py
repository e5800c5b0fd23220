"""Tests for workload module: traces, profiler, predictor and load generation."""
from unittest.mock import patch

import numpy as np
import pytest


def _sine_series(length=240, period=24):
    t = np.arange(length)
    cpu = 0.5 + 0.3 * np.sin(2 * np.pi * t / period)
    mem = 0.6 + 0.1 * np.cos(2 * np.pi * t / period)
    return np.stack([cpu, mem], axis=1)


class Persistence:
    """Forecasts the last observed interval."""

    def __init__(self, window=2, horizon=1):
        self.window = window
        self.horizon = horizon

    def predict(self, window):
        return tuple(np.asarray(window)[-1])


def test_parse_sample_trace():
    from config import SAMPLE_TRACE_FILE
    from workload import parse_trace

    trace = parse_trace(SAMPLE_TRACE_FILE)
    series = trace.series()
    assert len(trace) == 8064
    assert series.shape == (2016, 2)
    assert np.all((series >= 0) & (series <= 1))


def test_parse_trace_sorts_by_timestamp(tmp_path):
    from workload import parse_trace

    path = tmp_path / "trace.csv"
    path.write_text(
        "timestamp_s,machine_id,cpu_util,mem_util\n"
        "600,m1,0.3,0.5\n"
        "0,m1,0.1,0.5\n"
        "300,m1,0.2,0.5\n"
    )
    np.testing.assert_allclose(parse_trace(str(path)).series()[:, 0], [0.1, 0.2, 0.3])


def test_parse_trace_reports_bad_lines(tmp_path):
    from workload import TraceParseError, parse_trace

    path = tmp_path / "trace.csv"
    path.write_text(
        "timestamp_s,machine_id,cpu_util,mem_util\n"
        "0,m1,0.1,0.5\n"
        "300,m1,1.5,0.5\n"
        "600,m1,abc,0.5\n"
    )
    with pytest.raises(TraceParseError) as exc_info:
        parse_trace(str(path))
    assert exc_info.value.line_numbers == [3, 4]


def test_parse_trace_missing_column(tmp_path):
    from workload import TraceParseError, parse_trace

    path = tmp_path / "trace.csv"
    path.write_text("timestamp_s,cpu_util\n0,0.1\n")
    with pytest.raises(TraceParseError):
        parse_trace(str(path))


def test_parse_trace_empty(tmp_path):
    from workload import EmptyTraceError, WorkloadError, parse_trace

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(EmptyTraceError):
        parse_trace(str(empty))

    header_only = tmp_path / "header.csv"
    header_only.write_text("timestamp_s,machine_id,cpu_util,mem_util\n")
    with pytest.raises(EmptyTraceError):
        parse_trace(str(header_only))

    with pytest.raises(WorkloadError):
        parse_trace(str(tmp_path / "missing.csv"))


def test_fit_profiler_learns_linear_map():
    from workload import fit_profiler, util_to_requests

    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, size=(60, 2))
    y = 100.0 * x[:, 0] + 20.0 * x[:, 1]
    model = fit_profiler(np.column_stack([x, y]), seed=1)
    assert model.final_loss < 0.2 * np.var(y)
    assert not model.zero_variance
    assert util_to_requests(model, 0.9, 0.5) > util_to_requests(model, 0.1, 0.5)


def test_fit_profiler_needs_enough_samples():
    from workload import WorkloadError, fit_profiler

    with pytest.raises(WorkloadError):
        fit_profiler(np.ones((5, 3)))


def test_fit_profiler_flags_constant_targets():
    from workload import fit_profiler

    samples = np.column_stack([np.linspace(0, 1, 12), np.full(12, 0.5), np.full(12, 40.0)])
    assert fit_profiler(samples, epochs=5).zero_variance


def test_profile_simulator(small_state):
    from workload import profile_simulator

    samples = profile_simulator(small_state, [20.0, 50.0, 80.0], requests_per_case=100, seed=0)
    assert samples.shape == (3, 3)
    assert samples[0, 0] < samples[2, 0]
    np.testing.assert_allclose(samples[:, 1], 0.375)
    np.testing.assert_allclose(samples[:, 2], [20.0, 50.0, 80.0], rtol=0.35)


def test_train_predictor_beats_constant_forecast():
    from workload import predict, train_predictor

    series = _sine_series()
    model = train_predictor(series, window=6, epochs=40, hidden=8, seed=0)
    assert model.train_mse < np.var(series[:, 0])
    assert np.isfinite(model.validation_mse)
    cpu, mem = predict(model, series[-6:])
    assert 0.0 <= cpu <= 1.0 and 0.0 <= mem <= 1.0


def test_train_predictor_rejects_short_trace():
    from workload import TraceTooShortError, train_predictor

    with pytest.raises(TraceTooShortError):
        train_predictor(_sine_series(length=10), window=12)


def test_predict_checks_window_length():
    from workload import WindowLengthError, predict, train_predictor

    model = train_predictor(_sine_series(length=60), window=4, epochs=1, hidden=4)
    with pytest.raises(WindowLengthError):
        predict(model, np.zeros((3, 2)))


def test_evaluate_mse_rolls_one_step_model_forward():
    from workload import evaluate_mse

    ramp = np.column_stack([np.arange(50) * 0.01, np.arange(50) * 0.01])
    errors = evaluate_mse(Persistence(window=2), ramp, horizons=(1, 2, 3))
    for h in (1, 2, 3):
        assert errors[h].cpu == pytest.approx((0.01 * h) ** 2)
        assert errors[h].mean == pytest.approx((0.01 * h) ** 2)


def test_evaluate_mse_scores_only_own_horizon():
    from workload import evaluate_mse

    errors = evaluate_mse(Persistence(window=2, horizon=3), _sine_series(60), horizons=(1, 3))
    assert set(errors) == {3}


def test_evaluate_mse_too_short():
    from workload import TraceTooShortError, evaluate_mse

    with pytest.raises(TraceTooShortError):
        evaluate_mse(Persistence(window=4), _sine_series(6), horizons=(1, 5))


def test_predictor_checkpoint(tmp_path):
    from workload import load_predictor, save_predictor, train_predictor

    series = _sine_series(length=60)
    model = train_predictor(series, window=4, epochs=2, hidden=4)
    path = tmp_path / "predictor.txt"
    save_predictor(model, str(path))
    loaded = load_predictor(str(path))
    assert (loaded.window, loaded.horizon) == (4, 1)
    assert loaded.predict(series[:4]) == model.predict(series[:4])


@pytest.mark.slow
def test_predictor_on_sample_trace():
    from config import PREDICTION_HORIZONS, PREDICTOR_VALIDATION_FRACTION, SAMPLE_TRACE_FILE
    from workload import evaluate_mse, parse_trace, train_predictor

    series = parse_trace(SAMPLE_TRACE_FILE).series()
    split = int(len(series) * (1.0 - PREDICTOR_VALIDATION_FRACTION))
    model = train_predictor(series[:split], seed=0)
    errors = evaluate_mse(model, series[split - model.window:], PREDICTION_HORIZONS)
    means = [errors[h].mean for h in PREDICTION_HORIZONS]
    assert means[0] <= 0.01
    assert all(a <= b for a, b in zip(means, means[1:]))


def test_load_generator_maps_each_interval_through_profiler():
    from workload import LoadGenerator, util_to_requests

    series = _sine_series(length=6)
    generator = LoadGenerator(profiler=lambda x: x[..., :1] * 100.0 - 60.0, control_interval=2)
    with patch("workload.util_to_requests", wraps=util_to_requests) as mapped:
        schedule = generator.schedule(series)
    assert mapped.call_count == 6
    expected = np.maximum(series[:, 0] * 100.0 - 60.0, 0.0)
    np.testing.assert_allclose(schedule.rates, np.repeat(expected, 2))


def test_user_type_mix_rows_sum_to_one():
    from workload import user_type_mix

    mix = user_type_mix(100, 3)
    assert mix.shape == (100, 3)
    np.testing.assert_allclose(mix.sum(axis=1), 1.0)
    assert np.all(mix > 0)


def test_user_type_weights():
    from cluster_model import UserTypeSpec
    from workload import WorkloadError, user_type_weights

    types = [UserTypeSpec(name="a", chain_weights={"x": 3.0, "y": 1.0})]
    np.testing.assert_allclose(user_type_weights(types, ["x", "y"]), [[0.75, 0.25]])
    with pytest.raises(WorkloadError):
        user_type_weights(types, ["z"])


def test_load_generator_schedule():
    from cluster_model import UserTypeSpec
    from workload import LoadGenerator

    series = _sine_series(length=10)
    user_types = [
        UserTypeSpec(name="a", chain_weights={"x": 1.0}),
        UserTypeSpec(name="b", chain_weights={"y": 1.0}),
    ]
    generator = LoadGenerator(
        profiler=lambda x: x[..., :1] * 100.0, control_interval=3,
        user_types=user_types, chain_ids=["x", "y"],
    )
    schedule = generator.schedule(series)
    assert len(schedule) == 30
    assert schedule.at(4)[0] == pytest.approx(series[1, 0] * 100.0)
    assert schedule.at(4)[1] == pytest.approx(series[1, 0])
    assert schedule.chain_weights.shape == (30, 2)
    np.testing.assert_allclose(schedule.chain_weights.sum(axis=1), 1.0)


def test_load_generator_uses_predictor_forecasts():
    from workload import LoadGenerator

    series = _sine_series(length=10)
    generator = LoadGenerator(
        profiler=lambda x: x[..., :1], predictor=Persistence(window=2), control_interval=1,
    )
    forecasts = generator.interval_forecasts(series)
    # the first interval has no full window and keeps its own utilization
    assert forecasts[0] == pytest.approx(series[0, 0])
    np.testing.assert_allclose(forecasts[1:], series[1:, 0])


def test_load_generator_needs_profiler():
    from workload import LoadGenerator, WorkloadError

    with pytest.raises(WorkloadError):
        LoadGenerator(profiler=None).schedule(_sine_series(length=5))


def test_synthetic_schedule(small_state):
    from workload import synthetic_schedule

    a = synthetic_schedule(small_state, 200, seed=4)
    b = synthetic_schedule(small_state, 200, seed=4)
    assert len(a) == 200
    np.testing.assert_array_equal(a.rates, b.rates)
    assert np.all(a.rates >= 0)
    assert a.rates.max() > 100.0
    assert np.all((a.forecasts >= 0) & (a.forecasts <= 1))


def test_surge_profile_one_crowd_per_window():
    from workload import surge_profile

    multiplier = surge_profile(1000, np.random.default_rng(0), every=250)
    assert multiplier.shape == (1000,)
    assert np.all(multiplier >= 1.0)
    assert multiplier[:62].max() == 1.0
    for window in multiplier.reshape(4, 250):
        assert 2.0 <= window.max() <= 2.8


def test_synthetic_schedule_without_surges(small_state):
    from workload import WorkloadError, surge_profile, synthetic_schedule

    calm = synthetic_schedule(small_state, 500, seed=1, surge_every=None)
    crowded = synthetic_schedule(small_state, 500, seed=1)
    assert np.all(crowded.rates >= calm.rates)
    assert np.any(crowded.rates > calm.rates)
    np.testing.assert_array_equal(calm.forecasts, crowded.forecasts)
    with pytest.raises(WorkloadError):
        surge_profile(10, np.random.default_rng(0), every=2)
