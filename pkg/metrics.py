import logging
import math
from fractions import Fraction
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field

from config import PERCENTILES, SIM_TICK
from reward import RewardConfig, objective_gap

logger = logging.getLogger(__name__)


class MetricsError(Exception):
    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class MetricsSummary(BaseModel):
    mode: str
    ticks: int
    arrivals: int
    successes: int
    failures: int
    success_rps: float
    failure_rate: float
    mean_rt_ms: float
    tps: float
    mean_reward: float
    percentiles: dict[str, Optional[float]]
    util_gap: Optional[float] = None
    worst_qos_reward: Optional[float] = None
    model_parameters: dict[str, int] = Field(default_factory=dict)


def percentile_label(p: float) -> str:
    """'50' for 50, '99.99' for 99.99."""
    return f"{p:g}"


def nearest_rank_percentile(sorted_samples, p: float) -> float:
    """
    Value at rank ceil(p/100 * n) of an ascending sample (1-based).

    The rank is computed with exact fractions so p = 99.99 on n = 10,000
    lands on rank 9,999 rather than a float-rounded neighbour.
    """
    n = len(sorted_samples)
    if n == 0:
        raise MetricsError("Percentile of an empty sample")
    if not 0 < p <= 100:
        raise MetricsError(f"Percentile must lie in (0, 100], got {p}")
    rank = math.ceil(Fraction(str(p)) * n / 100)
    rank = min(max(rank, 1), n)
    return float(sorted_samples[rank - 1])


def compute_metrics(
    log,
    mode: str = "",
    percentiles=PERCENTILES,
    model_parameters: Optional[dict] = None,
    reward_config: Optional[RewardConfig] = None,
) -> MetricsSummary:
    """
    Aggregate a SimLog into a MetricsSummary.

    util_gap and worst_qos_reward come from objective_gap over the run-mean
    machine utilization and the per-tick response times; both stay None when
    the records carry no utilization matrix.
    """
    records = getattr(log, "records", log)
    if not records:
        raise MetricsError("Cannot compute metrics of an empty log")
    tick_seconds = getattr(log, "tick_seconds", SIM_TICK)
    seconds = len(records) * tick_seconds

    arrivals = sum(r.arrivals for r in records)
    successes = sum(r.successes for r in records)
    failures = sum(r.failures for r in records)
    samples = [r.response_times for r in records if r.response_times.size]
    all_samples = np.sort(np.concatenate(samples)) if samples else np.zeros(0)

    if all_samples.size:
        table = {percentile_label(p): nearest_rank_percentile(all_samples, p) for p in percentiles}
        mean_rt = float(all_samples.mean())
    else:
        table = {percentile_label(p): None for p in percentiles}
        mean_rt = 0.0

    util_gap = worst_qos = None
    machine_utils = [r.machine_util for r in records if r.machine_util is not None]
    if machine_utils:
        reward_config = reward_config or RewardConfig()
        u = np.mean(machine_utils, axis=0)
        util_gap, worst_qos = objective_gap(
            u, reward_config.u_pred(u.shape[-1]), [r.rt_ms for r in records], reward_config.rt_max
        )

    return MetricsSummary(
        mode=mode,
        ticks=len(records),
        arrivals=arrivals,
        successes=successes,
        failures=failures,
        success_rps=successes / seconds,
        failure_rate=failures / arrivals if arrivals else 0.0,
        mean_rt_ms=mean_rt,
        tps=(successes + failures) / seconds,
        mean_reward=float(np.mean([r.reward for r in records])),
        percentiles=table,
        util_gap=util_gap,
        worst_qos_reward=worst_qos,
        model_parameters=dict(model_parameters or {}),
    )
