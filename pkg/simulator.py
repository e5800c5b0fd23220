import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from cluster_model import (
    ClusterError, ClusterState, DeploymentAction, apply_placement, build_observation,
    machine_utilization, resize_deployment,
)
from config import (
    SIM_TICK, SIM_RT_MAX, SIM_L_MAX, SIM_MEM_PENALTY, SIM_MAX_REPLICAS, SIM_HORIZON,
    DEFAULT_SEED, RESOURCES,
)
from metrics import nearest_rank_percentile
from reward import RewardConfig, combined_reward, qos_reward, util_reward
from student_agent import ScalingSteps, scale_deployment

logger = logging.getLogger(__name__)


class SimulationError(Exception):
    """Base error for the simulator."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class SimulationConfigError(SimulationError):
    pass


@dataclass
class SimConfig:
    tick: float = SIM_TICK  # seconds
    rt_max: float = SIM_RT_MAX  # ms
    l_max: float = SIM_L_MAX  # ms
    seed: int = DEFAULT_SEED
    mem_penalty: float = SIM_MEM_PENALTY
    max_replicas: int = SIM_MAX_REPLICAS
    horizon: int = SIM_HORIZON  # ticks

    def __post_init__(self):
        if not self.tick > 0:
            raise SimulationConfigError(f"tick must be positive, got {self.tick}")
        if not self.rt_max > 0:
            raise SimulationConfigError(f"rt_max must be positive, got {self.rt_max}")
        if not self.l_max > self.rt_max:
            raise SimulationConfigError(
                f"l_max ({self.l_max}) must exceed rt_max ({self.rt_max})"
            )
        if self.max_replicas < 1 or self.horizon < 1:
            raise SimulationConfigError("max_replicas and horizon must be at least 1")


@dataclass
class SimLogRecord:
    tick: int
    chain_arrivals: dict
    arrivals: int
    successes: int
    failures: int
    degraded: int
    response_times: np.ndarray  # ms, one sample per successful request
    utilization: dict  # deployment id -> cpu busy fraction
    replicas: dict  # deployment id -> replicas after this tick's actions
    r_qos: float
    r_util: float
    reward: float
    controller: str = ""
    rt_ms: float = 0.0  # tick response time, failures priced at l_max
    machine_util: Optional[np.ndarray] = None  # (resource, machine) allocation fractions

    @property
    def mean_rt_ms(self) -> float:
        return float(self.response_times.mean()) if self.response_times.size else 0.0

    @property
    def p99_rt_ms(self) -> float:
        if not self.response_times.size:
            return 0.0
        return nearest_rank_percentile(np.sort(self.response_times), 99)


@dataclass
class SimLog:
    records: list[SimLogRecord] = field(default_factory=list)
    tick_seconds: float = SIM_TICK

    def append(self, record: SimLogRecord):
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for rec in self.records:
            row = {
                "tick": rec.tick,
                "arrivals": rec.arrivals,
                "successes": rec.successes,
                "failures": rec.failures,
                "mean_rt_ms": rec.mean_rt_ms,
                "p99_rt_ms": rec.p99_rt_ms,
                "rt_ms": rec.rt_ms,
                "reward": rec.reward,
                "r_qos": rec.r_qos,
                "r_util": rec.r_util,
            }
            for dep_id in sorted(rec.utilization):
                row[f"util_{dep_id}"] = rec.utilization[dep_id]
            for dep_id in sorted(rec.replicas):
                row[f"replicas_{dep_id}"] = rec.replicas[dep_id]
            if rec.controller:
                row["controller"] = rec.controller
            rows.append(row)
        return pd.DataFrame(rows)

    def write_csv(self, path: str):
        self.to_frame().to_csv(path, index=False)


@dataclass
class StepResult:
    state: ClusterState
    record: SimLogRecord
    observation: np.ndarray
    reward: float
    done: bool


@dataclass(frozen=True)
class ChainOutcome:
    status: str  # "success", "degraded" or "failure"
    response_time: Optional[float] = None  # ms


@dataclass
class RateSchedule:
    """Per-tick arrival rates with optional forecasts and chain-weight overrides."""
    rates: np.ndarray  # requests/s
    forecasts: Optional[np.ndarray] = None  # predicted next-interval utilization
    chain_weights: Optional[np.ndarray] = None  # (ticks, chains)

    def __len__(self) -> int:
        return len(self.rates)

    def at(self, t: int) -> tuple[float, float, Optional[np.ndarray]]:
        i = t % len(self.rates)
        forecast = float(self.forecasts[i]) if self.forecasts is not None else 0.0
        weights = self.chain_weights[i] if self.chain_weights is not None else None
        return float(self.rates[i]), forecast, weights


def generate_arrivals(rate: float, tick: float, rng: np.random.Generator) -> int:
    """Poisson arrival count with mean rate * tick."""
    if rate < 0:
        raise SimulationError(f"Arrival rate must be non-negative, got {rate}")
    if rate == 0:
        return 0
    return int(rng.poisson(rate * tick))


def station_latency(rho: float, base: float, l_max: float = SIM_L_MAX) -> float:
    """base * (1 + rho / (1 - rho)) capped at l_max; a saturated station serves at l_max."""
    if rho >= 1.0:
        return l_max
    return min(base * (1.0 + rho / (1.0 - rho)), l_max)


def _memory_overcommitted(state: ClusterState, deployment_id: str) -> bool:
    u = state.utilization if state.utilization is not None else machine_utilization(state)
    index = state.machine_index()
    mem_row = RESOURCES.index("mem")
    return any(u[mem_row, index[m]] > 1.0 for m, count in state.placement.get(deployment_id, [])
               if count > 0)


def route_chain(
    chain, state: ClusterState, per_station_rho: dict, config: SimConfig = None
) -> ChainOutcome:
    """
    Price one request along a chain.

    Stations with replicas add their latency. An optional station with no
    replicas is skipped (degraded success); a mandatory one fails the request.
    """
    config = config or SimConfig()
    rt = 0.0
    degraded = False
    for station in chain.stations:
        try:
            dep = state.deployment(station)
        except ClusterError as e:
            raise SimulationConfigError(
                f"Chain {chain.id} references missing deployment {station}", original_error=e
            ) from e
        if dep.replicas == 0:
            if dep.optional_in_chain:
                degraded = True
                continue
            return ChainOutcome("failure")
        latency = station_latency(per_station_rho.get(station, 0.0), dep.base_latency, config.l_max)
        if state.overcommit and _memory_overcommitted(state, station):
            latency *= config.mem_penalty
        rt += latency
    return ChainOutcome("degraded" if degraded else "success", rt)


def apply_action(
    state: ClusterState,
    deployment_id: str,
    q: DeploymentAction,
    steps: ScalingSteps = ScalingSteps(),
    max_replicas: int = SIM_MAX_REPLICAS,
) -> ClusterState:
    """Run the scaling procedure for one deployment and push it into placement."""
    dep = state.deployment(deployment_id)
    decision = scale_deployment(q, dep, steps, max_replicas)
    if (decision.cpu_per_replica, decision.mem_per_replica) != (dep.cpu_per_replica, dep.mem_per_replica):
        state = resize_deployment(
            state, deployment_id, decision.cpu_per_replica, decision.mem_per_replica
        ).state
    if decision.replicas != dep.replicas:
        state = apply_placement(state, deployment_id, decision.replicas).state
    return state


def actions_from_vector(state: ClusterState, vector) -> dict[str, DeploymentAction]:
    """Unpack 3 contiguous values per deployment, in deployment-id order."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    ids = state.deployment_ids()
    if v.size != 3 * len(ids):
        raise SimulationError(f"Action vector has {v.size} values, expected {3 * len(ids)}")
    return {dep_id: DeploymentAction.from_array(v[3 * i:3 * i + 3]) for i, dep_id in enumerate(ids)}


def vector_from_actions(state: ClusterState, actions: dict) -> np.ndarray:
    parts = [
        actions.get(dep_id, DeploymentAction()).as_array() for dep_id in state.deployment_ids()
    ]
    return np.concatenate(parts)


def _check_chains(state: ClusterState):
    known = {d.id for d in state.deployments}
    for chain in state.chains:
        for station in chain.stations:
            if station not in known:
                raise SimulationConfigError(
                    f"Chain {chain.id} references missing deployment {station}"
                )


def offered_loads(state: ClusterState, chain_counts) -> dict[str, float]:
    """Requests offered to each deployment given per-chain request counts."""
    loads = {d.id: 0.0 for d in state.deployments}
    for chain, n in zip(state.chains, chain_counts):
        for station in dict.fromkeys(chain.stations):
            loads[station] += n
    return loads


def _normalized_weights(state: ClusterState, chain_weights) -> np.ndarray:
    w = np.array(
        [c.weight for c in state.chains] if chain_weights is None else chain_weights,
        dtype=np.float64,
    )
    return w / w.sum()


def step(
    state: ClusterState,
    actions: dict,
    arrival_rate: float,
    config: SimConfig,
    rng: np.random.Generator,
    tick_index: int = 0,
    forecast: float = 0.0,
    chain_weights=None,
    reward_config: RewardConfig = None,
    steps: ScalingSteps = ScalingSteps(),
) -> StepResult:
    """Advance the cluster by one tick."""
    if arrival_rate < 0:
        raise SimulationError(f"Arrival rate must be non-negative, got {arrival_rate}")
    _check_chains(state)
    reward_config = reward_config or RewardConfig(rt_max=config.rt_max)

    for dep_id in sorted(actions):
        state = apply_action(state, dep_id, actions[dep_id], steps, config.max_replicas)

    arrivals = generate_arrivals(arrival_rate, config.tick, rng)
    weights = _normalized_weights(state, chain_weights)
    if arrivals > 0:
        counts = rng.multinomial(arrivals, weights)
    else:
        counts = np.zeros(len(state.chains), dtype=np.int64)

    loads = offered_loads(state, counts)
    rho, admit, busy = {}, {}, {}
    for dep in state.deployments:
        capacity = dep.capacity_rps() * config.tick
        offered = loads[dep.id]
        if capacity > 0:
            rho[dep.id] = offered / capacity
            admit[dep.id] = min(1.0, capacity / offered) if offered > 0 else 1.0
            busy[dep.id] = min(offered, capacity) / capacity
        else:
            rho[dep.id] = 0.0
            admit[dep.id] = 0.0
            busy[dep.id] = 0.0

    successes = failures = degraded = 0
    samples = []
    chain_arrivals = {}
    for chain, n in zip(state.chains, counts):
        n = int(n)
        chain_arrivals[chain.id] = n
        if n == 0:
            continue
        outcome = route_chain(chain, state, rho, config)
        if outcome.status == "failure":
            failures += n
            continue
        fraction = 1.0
        for station in dict.fromkeys(chain.stations):
            if state.deployment(station).replicas > 0:
                fraction *= admit[station]
        served = min(n, math.floor(n * fraction + 1e-9))
        successes += served
        failures += n - served
        if outcome.status == "degraded":
            degraded += served
        if served:
            samples.append(np.full(served, outcome.response_time))

    state = replace(state, busy=busy)
    response_times = np.concatenate(samples) if samples else np.zeros(0)

    # Failed requests count at l_max so failures depress the QoS reward.
    if arrivals:
        rt_tick = (float(response_times.sum()) + failures * config.l_max) / arrivals
    else:
        rt_tick = 0.0
    r_qos = qos_reward(rt_tick, reward_config.rt_max)
    u = machine_utilization(state)
    r_util = util_reward(u, reward_config.u_pred(len(state.machines)))
    r = combined_reward(r_qos, r_util)

    record = SimLogRecord(
        tick=tick_index,
        chain_arrivals=chain_arrivals,
        arrivals=arrivals,
        successes=successes,
        failures=failures,
        degraded=degraded,
        response_times=response_times,
        utilization=dict(busy),
        replicas={d.id: d.replicas for d in state.deployments},
        r_qos=r_qos,
        r_util=r_util,
        reward=r,
        rt_ms=rt_tick,
        machine_util=u,
    )
    rates = {dep_id: load / config.tick for dep_id, load in loads.items()}
    observation = build_observation(state, rates, forecast, config.max_replicas)
    done = tick_index + 1 >= config.horizon
    return StepResult(state=state, record=record, observation=observation, reward=r, done=done)


def expected_loads(state: ClusterState, rate: float, chain_weights=None) -> dict[str, float]:
    """Offered request rate per deployment if arrivals matched their mean."""
    weights = _normalized_weights(state, chain_weights)
    return offered_loads(state, rate * weights)


def saturation_rate(state: ClusterState, chain_weights=None) -> float:
    """Total arrival rate at which the first deployment with replicas saturates."""
    shares = expected_loads(state, 1.0, chain_weights) if state.chains else {}
    limits = [
        d.capacity_rps() / shares[d.id]
        for d in state.deployments
        if d.replicas > 0 and shares.get(d.id, 0.0) > 0
    ]
    return min(limits, default=100.0)


class ClusterEnv:
    """
    Gym-style wrapper over step() for teacher training.

    One env step applies the action vector on its first tick and then lets
    the cluster run for ticks_per_step ticks; the reward is the mean
    per-tick reward. Episodes walk through the rate schedule so consecutive
    episodes see different load segments.
    """

    def __init__(
        self,
        initial_state: ClusterState,
        schedule: RateSchedule,
        config: SimConfig = None,
        reward_config: RewardConfig = None,
        steps_per_episode: Optional[int] = None,
        ticks_per_step: int = 1,
        scaling: ScalingSteps = ScalingSteps(),
    ):
        self.initial_state = initial_state
        self.schedule = schedule
        self.config = config or SimConfig()
        self.reward_config = reward_config or RewardConfig(rt_max=self.config.rt_max)
        self.ticks_per_step = ticks_per_step
        self.steps_per_episode = steps_per_episode or max(1, self.config.horizon // ticks_per_step)
        self.scaling = scaling
        self.deployment_count = len(initial_state.deployments)
        self.state_dim = 5 * self.deployment_count
        self.action_dim = 3 * self.deployment_count
        self.episode = -1
        self.state = initial_state
        self.rng = None
        self.t = 0
        self.step_count = 0

    def reset(self) -> np.ndarray:
        self.episode += 1
        self.state = self.initial_state
        self.rng = np.random.default_rng([self.config.seed, self.episode])
        self.t = (self.episode * self.steps_per_episode * self.ticks_per_step) % len(self.schedule)
        self.step_count = 0
        rate, forecast, weights = self.schedule.at(self.t)
        loads = expected_loads(self.state, rate, weights)
        return build_observation(self.state, loads, forecast, self.config.max_replicas)

    def step(self, action_vector) -> tuple[np.ndarray, float, bool, dict]:
        actions = actions_from_vector(self.state, action_vector)
        rewards, records = [], []
        observation = None
        for i in range(self.ticks_per_step):
            rate, forecast, weights = self.schedule.at(self.t)
            result = step(
                self.state, actions if i == 0 else {}, rate, self.config, self.rng,
                tick_index=self.t, forecast=forecast, chain_weights=weights,
                reward_config=self.reward_config, steps=self.scaling,
            )
            self.state = result.state
            rewards.append(result.reward)
            records.append(result.record)
            observation = result.observation
            self.t += 1
        self.step_count += 1
        done = self.step_count >= self.steps_per_episode
        arrivals = sum(r.arrivals for r in records)
        failures = sum(r.failures for r in records)
        samples = [r.response_times for r in records if r.response_times.size]
        info = {
            "records": records,
            "mean_rt_ms": float(np.concatenate(samples).mean()) if samples else 0.0,
            "failure_rate": failures / arrivals if arrivals else 0.0,
        }
        return observation, float(np.mean(rewards)), done, info
