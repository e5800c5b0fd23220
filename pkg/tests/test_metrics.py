"""Tests for metrics module."""
import numpy as np
import pytest


def _record(tick, arrivals, rts, failures=0, reward=0.5, **extra):
    from simulator import SimLogRecord

    rts = np.asarray(rts, dtype=np.float64)
    return SimLogRecord(
        tick=tick, chain_arrivals={}, arrivals=arrivals, successes=rts.size,
        failures=failures, degraded=0, response_times=rts, utilization={}, replicas={},
        r_qos=1.0, r_util=1.0, reward=reward, **extra,
    )


def test_percentile_label():
    from metrics import percentile_label

    assert percentile_label(50) == "50"
    assert percentile_label(99.99) == "99.99"


def test_nearest_rank_on_small_sample():
    from metrics import nearest_rank_percentile

    samples = [10.0, 20.0, 30.0, 40.0]
    assert nearest_rank_percentile(samples, 50) == 20.0
    assert nearest_rank_percentile(samples, 51) == 30.0
    assert nearest_rank_percentile(samples, 100) == 40.0
    assert nearest_rank_percentile([7.0], 99.99) == 7.0


def test_nearest_rank_matches_sorted_index():
    from config import PERCENTILES
    from metrics import nearest_rank_percentile

    rng = np.random.default_rng(0)
    samples = rng.exponential(80.0, size=10_000)
    ordered = np.sort(samples)
    # percentiles in hundredths keep the rank integer-exact
    for p in PERCENTILES:
        hundredths = round(p * 100)
        rank = -(-hundredths * samples.size // 10_000)
        assert nearest_rank_percentile(ordered, p) == ordered[rank - 1]
    assert nearest_rank_percentile(ordered, 99.99) == ordered[9998]
    assert nearest_rank_percentile(ordered, 66) == ordered[6599]


def test_nearest_rank_rejects_bad_input():
    from metrics import MetricsError, nearest_rank_percentile

    with pytest.raises(MetricsError):
        nearest_rank_percentile([], 50)
    with pytest.raises(MetricsError):
        nearest_rank_percentile([1.0], 0)


def test_compute_metrics_totals():
    from metrics import compute_metrics
    from simulator import SimLog

    log = SimLog(tick_seconds=1.0)
    log.append(_record(0, 3, [10.0, 20.0], failures=1, reward=0.4))
    log.append(_record(1, 2, [30.0, 40.0], reward=0.8))
    summary = compute_metrics(log, mode="drpc", model_parameters={"student_api": 627})

    assert summary.ticks == 2
    assert (summary.arrivals, summary.successes, summary.failures) == (5, 4, 1)
    assert summary.success_rps == pytest.approx(2.0)
    assert summary.tps == pytest.approx(2.5)
    assert summary.failure_rate == pytest.approx(0.2)
    assert summary.mean_rt_ms == pytest.approx(25.0)
    assert summary.mean_reward == pytest.approx(0.6)
    assert summary.percentiles["50"] == 20.0
    assert summary.percentiles["99.99"] == 40.0
    assert summary.model_parameters == {"student_api": 627}


def test_compute_metrics_without_samples():
    from metrics import compute_metrics
    from simulator import SimLog

    log = SimLog()
    log.append(_record(0, 0, []))
    summary = compute_metrics(log)
    assert summary.failure_rate == 0.0
    assert all(v is None for v in summary.percentiles.values())


def test_compute_metrics_empty_log_raises():
    from metrics import MetricsError, compute_metrics
    from simulator import SimLog

    with pytest.raises(MetricsError):
        compute_metrics(SimLog())


def test_compute_metrics_reports_objective_gap():
    from metrics import compute_metrics
    from reward import RewardConfig
    from simulator import SimLog

    config = RewardConfig(rt_max=200.0, u_pred_cpu=0.5, u_pred_mem=0.5)
    log = SimLog()
    log.append(_record(0, 1, [100.0], rt_ms=100.0, machine_util=np.full((2, 2), 0.4)))
    log.append(_record(1, 1, [100.0], rt_ms=400.0, machine_util=np.full((2, 2), 0.6)))
    summary = compute_metrics(log, reward_config=config)

    # run-mean utilization sits on target, so util_reward is 1
    assert summary.util_gap == pytest.approx(0.5)
    assert summary.worst_qos_reward == pytest.approx(np.exp(-1.0))


def test_compute_metrics_without_utilization_leaves_gap_empty():
    from metrics import compute_metrics
    from simulator import SimLog

    log = SimLog()
    log.append(_record(0, 1, [10.0]))
    summary = compute_metrics(log)
    assert summary.util_gap is None
    assert summary.worst_qos_reward is None
