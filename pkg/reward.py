import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from config import SIM_RT_MAX, U_PRED_CPU, U_PRED_MEM, RESOURCES


class RewardError(Exception):
    pass


@dataclass
class RewardConfig:
    rt_max: float = SIM_RT_MAX  # ms
    u_pred_cpu: float = U_PRED_CPU
    u_pred_mem: float = U_PRED_MEM

    def __post_init__(self):
        if not self.rt_max > 0:
            raise RewardError(f"rt_max must be positive, got {self.rt_max}")
        for name in ("u_pred_cpu", "u_pred_mem"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise RewardError(f"{name} must lie in (0, 1), got {value}")

    def u_pred(self, machines: int) -> np.ndarray:
        """Target matrix U_pred[r, k] with one column per machine."""
        targets = {"cpu": self.u_pred_cpu, "mem": self.u_pred_mem}
        return np.array(
            [[targets[r]] * machines for r in RESOURCES], dtype=np.float64
        )


def qos_reward(rt: float, rt_max: float) -> float:
    if rt <= rt_max:
        return 1.0
    overshoot = (rt - rt_max) / rt_max
    return math.exp(-overshoot * overshoot)


def util_reward(u: np.ndarray, u_pred: np.ndarray) -> float:
    """
    Element-wise reading of both branches: entries at or under target add
    (u_pred - u)^3, entries over target add (u - u_pred)^3, so the sum is
    sum |u - u_pred|^3. Divided by the machine count K, plus one.
    """
    u = np.asarray(u, dtype=np.float64)
    u_pred = np.asarray(u_pred, dtype=np.float64)
    if u.shape != u_pred.shape:
        raise RewardError(f"Utilization shape {u.shape} does not match target {u_pred.shape}")
    machines = u.shape[-1] if u.ndim else 1
    if machines < 1:
        raise RewardError("util_reward needs at least one machine")
    under = u <= u_pred
    total = np.sum((u_pred - u)[under] ** 3) + np.sum((u - u_pred)[~under] ** 3)
    return float(total / machines + 1.0)


def combined_reward(r_qos: float, r_util: float) -> float:
    return r_qos / r_util


def objective_gap(
    u: np.ndarray, u_pred: np.ndarray, rt_series: Iterable[float], rt_max: float = SIM_RT_MAX
) -> tuple[float, float]:
    """
    Diagnostic pair (|mean(u_pred) - util_reward|, worst qos_reward over rt_series).

    The target matrix is reduced to its mean to compare with the scalar
    util_reward. An empty series has no violations, so its QoS term is 1.
    """
    gap = abs(float(np.mean(u_pred)) - util_reward(u, u_pred))
    worst = min((qos_reward(rt, rt_max) for rt in rt_series), default=1.0)
    return gap, worst
