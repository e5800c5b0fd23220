import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from config import (
    RESOURCES, CHAIN_WEIGHT_TOLERANCE, SIM_MAX_REPLICAS, U_PRED_CPU, U_PRED_MEM
)

logger = logging.getLogger(__name__)

FEATURES_PER_DEPLOYMENT = 5
STUDENT_FEATURES = 9


class ClusterError(Exception):
    """Base error for cluster model operations."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class PlacementError(ClusterError):
    """Replica change violates the deployment's minimum replicas."""
    pass


class ScenarioError(ClusterError):
    """Scenario file could not be loaded or is inconsistent."""
    pass


@dataclass(frozen=True)
class Machine:
    id: str
    cpu_capacity: float  # cores
    mem_capacity: float  # GB

    def capacity(self, resource: str) -> float:
        return self.cpu_capacity if resource == "cpu" else self.mem_capacity


@dataclass(frozen=True)
class Deployment:
    id: str
    replicas: int
    cpu_per_replica: float  # cores
    mem_per_replica: float  # GB
    brownout_allowed: bool = False
    base_latency: float = 10.0  # ms
    rate_per_core: float = 100.0  # requests/s per core
    optional_in_chain: bool = False

    @property
    def min_replicas(self) -> int:
        return 0 if self.brownout_allowed else 1

    def demand(self, resource: str) -> float:
        return self.cpu_per_replica if resource == "cpu" else self.mem_per_replica

    def capacity_rps(self) -> float:
        """Requests per second the deployment can serve at its current size."""
        return self.replicas * self.cpu_per_replica * self.rate_per_core


@dataclass(frozen=True)
class ServiceChain:
    id: str
    stations: tuple[str, ...]
    weight: float


@dataclass(frozen=True)
class DeploymentAction:
    """Q-values for one deployment, ordered (cpu, memory, horizontal)."""
    cpu_scaling: float = 0.0
    memory_scaling: float = 0.0
    horizontal_scaling: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.cpu_scaling, self.memory_scaling, self.horizontal_scaling],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, values) -> "DeploymentAction":
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass(frozen=True)
class Violation:
    subject_id: str
    reason: str


@dataclass(frozen=True, eq=False)
class ClusterState:
    machines: tuple[Machine, ...]
    deployments: tuple[Deployment, ...]
    placement: dict  # deployment id -> list of (machine id, count), fill order
    chains: tuple[ServiceChain, ...] = ()
    utilization: np.ndarray = None  # shape (len(RESOURCES), K)
    busy: dict = field(default_factory=dict)  # deployment id -> last-tick cpu busy fraction
    overcommit: bool = False

    def deployment(self, deployment_id: str) -> Deployment:
        for d in self.deployments:
            if d.id == deployment_id:
                return d
        raise ClusterError(f"Unknown deployment: {deployment_id}")

    def machine_index(self) -> dict[str, int]:
        return {m.id: i for i, m in enumerate(self.machines)}

    def deployment_ids(self) -> list[str]:
        return sorted(d.id for d in self.deployments)


@dataclass(frozen=True)
class PlacementResult:
    state: ClusterState
    shortfall: int = 0
    refused: bool = False


def _placement_utilization(
    machines, deployments, placement
) -> np.ndarray:
    index = {m.id: i for i, m in enumerate(machines)}
    by_id = {d.id: d for d in deployments}
    used = np.zeros((len(RESOURCES), len(machines)), dtype=np.float64)
    for dep_id, entries in placement.items():
        dep = by_id.get(dep_id)
        if dep is None:
            continue
        for machine_id, count in entries:
            k = index.get(machine_id)
            if k is None:
                continue
            for r, resource in enumerate(RESOURCES):
                used[r, k] += count * dep.demand(resource)
    capacity = np.array(
        [[m.capacity(resource) for m in machines] for resource in RESOURCES],
        dtype=np.float64,
    )
    return used / capacity


def machine_utilization(state: ClusterState) -> np.ndarray:
    """Per-resource, per-machine utilization u[r, k] recomputed from placement."""
    return _placement_utilization(state.machines, state.deployments, state.placement)


def with_utilization(state: ClusterState) -> ClusterState:
    return replace(state, utilization=machine_utilization(state))


def validate_cluster(state: ClusterState) -> list[Violation]:
    """Return every invariant violation; an empty list means the state is valid."""
    violations = []

    seen = set()
    for m in state.machines:
        if m.id in seen:
            violations.append(Violation(m.id, "duplicate machine id"))
        seen.add(m.id)
        if not m.cpu_capacity > 0 or not m.mem_capacity > 0:
            violations.append(Violation(m.id, "machine capacities must be positive"))

    largest_cpu = max((m.cpu_capacity for m in state.machines), default=0.0)
    largest_mem = max((m.mem_capacity for m in state.machines), default=0.0)
    machine_ids = {m.id for m in state.machines}

    dep_ids = set()
    for d in state.deployments:
        if d.id in dep_ids:
            violations.append(Violation(d.id, "duplicate deployment id"))
        dep_ids.add(d.id)
        if d.replicas < d.min_replicas:
            violations.append(Violation(
                d.id, f"replicas {d.replicas} below minimum {d.min_replicas}"
            ))
        if not 0 < d.cpu_per_replica <= largest_cpu:
            violations.append(Violation(
                d.id, f"cpu_per_replica {d.cpu_per_replica} outside (0, {largest_cpu}]"
            ))
        if not 0 < d.mem_per_replica <= largest_mem:
            violations.append(Violation(
                d.id, f"mem_per_replica {d.mem_per_replica} outside (0, {largest_mem}]"
            ))
        if not d.base_latency > 0:
            violations.append(Violation(d.id, "base_latency must be positive"))
        if not d.rate_per_core > 0:
            violations.append(Violation(d.id, "rate_per_core must be positive"))

        entries = state.placement.get(d.id, [])
        placed = sum(count for _, count in entries)
        if placed != d.replicas:
            violations.append(Violation(
                d.id, f"placement mismatch: {placed} placed, {d.replicas} replicas"
            ))
        for machine_id, _ in entries:
            if machine_id not in machine_ids:
                violations.append(Violation(d.id, f"placed on unknown machine {machine_id}"))

    for dep_id in state.placement:
        if dep_id not in dep_ids:
            violations.append(Violation(dep_id, "placement for unknown deployment"))

    if state.chains:
        total = 0.0
        for c in state.chains:
            if not c.stations:
                violations.append(Violation(c.id, "chain has no stations"))
            for station in c.stations:
                if station not in dep_ids:
                    violations.append(Violation(c.id, f"unknown station {station}"))
            if not 0.0 <= c.weight <= 1.0:
                violations.append(Violation(c.id, f"weight {c.weight} outside [0, 1]"))
            total += c.weight
        if abs(total - 1.0) > CHAIN_WEIGHT_TOLERANCE:
            violations.append(Violation("chains", f"chain weights sum to {total}, expected 1"))

    if machine_ids and not state.overcommit and state.deployments:
        u = _placement_utilization(state.machines, state.deployments, state.placement)
        for r, resource in enumerate(RESOURCES):
            for k, m in enumerate(state.machines):
                if u[r, k] > 1.0 + 1e-12:
                    violations.append(Violation(
                        m.id, f"{resource} over-committed ({u[r, k]:.3f})"
                    ))

    return violations


def _free(state: ClusterState, used: np.ndarray, k: int, resource_index: int) -> float:
    m = state.machines[k]
    return m.capacity(RESOURCES[resource_index]) - used[resource_index, k]


def _used_absolute(state: ClusterState) -> np.ndarray:
    u = machine_utilization(state)
    capacity = np.array(
        [[m.capacity(resource) for m in state.machines] for resource in RESOURCES]
    )
    return u * capacity


def apply_placement(
    state: ClusterState, deployment_id: str, new_replicas: int
) -> PlacementResult:
    """
    Change a deployment's replica count.

    Added replicas go first-fit over machines in id order; removed replicas
    leave the most recently filled machine first. If capacity runs out, as
    many replicas as fit are placed and the remainder is reported as
    shortfall.
    """
    dep = state.deployment(deployment_id)
    if new_replicas < dep.min_replicas:
        raise PlacementError(
            f"{deployment_id}: {new_replicas} replicas below minimum {dep.min_replicas}"
        )

    entries = [list(e) for e in state.placement.get(deployment_id, [])]
    delta = new_replicas - dep.replicas
    shortfall = 0

    if delta > 0:
        used = _used_absolute(state)
        order = sorted(range(len(state.machines)), key=lambda k: state.machines[k].id)
        for _ in range(delta):
            target = None
            for k in order:
                fits = all(
                    state.overcommit
                    or _free(state, used, k, r) >= dep.demand(resource) - 1e-12
                    for r, resource in enumerate(RESOURCES)
                )
                if fits:
                    target = k
                    break
            if target is None:
                shortfall += 1
                continue
            for r, resource in enumerate(RESOURCES):
                used[r, target] += dep.demand(resource)
            machine_id = state.machines[target].id
            existing = next((e for e in entries if e[0] == machine_id), None)
            if existing is not None:
                entries.remove(existing)
                existing[1] += 1
                entries.append(existing)
            else:
                entries.append([machine_id, 1])
    elif delta < 0:
        remaining = -delta
        while remaining > 0 and entries:
            last = entries[-1]
            take = min(last[1], remaining)
            last[1] -= take
            remaining -= take
            if last[1] == 0:
                entries.pop()

    if shortfall:
        logger.debug(f"{deployment_id}: placement shortfall of {shortfall} replica(s)")

    placed = sum(count for _, count in entries)
    placement = dict(state.placement)
    placement[deployment_id] = [(m, c) for m, c in entries]
    deployments = tuple(
        replace(d, replicas=placed) if d.id == deployment_id else d
        for d in state.deployments
    )
    updated = with_utilization(replace(state, deployments=deployments, placement=placement))
    return PlacementResult(state=updated, shortfall=shortfall)


def resize_deployment(
    state: ClusterState,
    deployment_id: str,
    cpu_per_replica: float,
    mem_per_replica: float,
) -> PlacementResult:
    """Vertically resize every replica; refused if a hosting machine would overflow."""
    dep = state.deployment(deployment_id)
    if cpu_per_replica == dep.cpu_per_replica and mem_per_replica == dep.mem_per_replica:
        return PlacementResult(state=state)

    resized = replace(dep, cpu_per_replica=cpu_per_replica, mem_per_replica=mem_per_replica)
    deployments = tuple(resized if d.id == deployment_id else d for d in state.deployments)
    u = _placement_utilization(state.machines, deployments, state.placement)
    largest_cpu = max(m.cpu_capacity for m in state.machines)
    largest_mem = max(m.mem_capacity for m in state.machines)
    too_large = cpu_per_replica > largest_cpu or mem_per_replica > largest_mem
    if too_large or (not state.overcommit and np.any(u > 1.0 + 1e-12)):
        logger.debug(f"{deployment_id}: resize to {cpu_per_replica:.2f} cores / "
                     f"{mem_per_replica:.2f} GB refused")
        return PlacementResult(state=state, refused=True)
    return PlacementResult(state=replace(state, deployments=deployments, utilization=u))


def deployment_memory_utilization(state: ClusterState, deployment_id: str) -> float:
    """Placement-weighted mean memory utilization of the machines hosting a deployment."""
    entries = state.placement.get(deployment_id, [])
    total = sum(count for _, count in entries)
    if total == 0:
        return 0.0
    u = state.utilization if state.utilization is not None else machine_utilization(state)
    index = state.machine_index()
    mem_row = RESOURCES.index("mem")
    return float(sum(count * u[mem_row, index[m]] for m, count in entries) / total)


def build_observation(
    state: ClusterState,
    loads: dict[str, float],
    forecast: float,
    max_replicas: int = SIM_MAX_REPLICAS,
) -> np.ndarray:
    """
    Teacher observation: 5 features per deployment in deployment-id order.

    Features are [cpu busy fraction, memory utilization, replicas / max,
    offered load / capacity at max replicas, forecast utilization].
    """
    blocks = []
    for dep_id in state.deployment_ids():
        dep = state.deployment(dep_id)
        max_capacity = max_replicas * dep.cpu_per_replica * dep.rate_per_core
        blocks.append([
            float(np.clip(state.busy.get(dep_id, 0.0), 0.0, 1.0)),
            deployment_memory_utilization(state, dep_id),
            min(dep.replicas / max_replicas, 1.0),
            float(loads.get(dep_id, 0.0) / max_capacity),
            float(np.clip(forecast, 0.0, 1.0)),
        ])
    return np.array(blocks, dtype=np.float64).reshape(-1)


def observation_block(observation: np.ndarray, position: int) -> np.ndarray:
    start = position * FEATURES_PER_DEPLOYMENT
    return observation[start:start + FEATURES_PER_DEPLOYMENT]


def machine_context(
    state: ClusterState, u_pred_cpu: float = U_PRED_CPU, u_pred_mem: float = U_PRED_MEM
) -> np.ndarray:
    u = state.utilization if state.utilization is not None else machine_utilization(state)
    return np.array(
        [float(u[0].mean()), float(u[1].mean()), u_pred_cpu, u_pred_mem],
        dtype=np.float64,
    )


def local_features(block: np.ndarray, context: np.ndarray) -> np.ndarray:
    """Student input: the deployment's 5-feature block plus 4 machine-context features."""
    return np.concatenate([np.asarray(block, dtype=np.float64), context])


# Scenario file schema

class MachineSpec(BaseModel):
    id: str
    cpu_capacity: float
    mem_capacity: float


class DeploymentSpec(BaseModel):
    id: str
    replicas: int
    cpu_per_replica: float
    mem_per_replica: float
    brownout_allowed: bool = False
    base_latency: float = 10.0
    rate_per_core: float = 100.0
    optional_in_chain: bool = False


class ChainSpec(BaseModel):
    id: str
    stations: list[str]
    weight: float


class UserTypeSpec(BaseModel):
    name: str
    chain_weights: dict[str, float]


class ScenarioSpec(BaseModel):
    machines: list[MachineSpec]
    deployments: list[DeploymentSpec]
    chains: list[ChainSpec]
    user_types: list[UserTypeSpec] = Field(default_factory=list)
    overcommit: bool = False
    sim: dict = Field(default_factory=dict)


def empty_state(
    machines, deployments, chains=(), overcommit: bool = False
) -> ClusterState:
    """State with every deployment at zero placed replicas."""
    zeroed = tuple(replace(d, replicas=0) for d in deployments)
    state = ClusterState(
        machines=tuple(machines),
        deployments=zeroed,
        placement={d.id: [] for d in deployments},
        chains=tuple(chains),
        overcommit=overcommit,
    )
    return with_utilization(state)


def place_initial(state: ClusterState, targets: dict[str, int]) -> ClusterState:
    """Place target replica counts in deployment-id order, ignoring minimums for zero."""
    for dep_id in sorted(targets):
        dep = state.deployment(dep_id)
        wanted = targets[dep_id]
        if wanted == dep.replicas:
            continue
        state = apply_placement(state, dep_id, wanted).state
    return state


def state_from_spec(spec: ScenarioSpec) -> ClusterState:
    machines = [Machine(m.id, m.cpu_capacity, m.mem_capacity) for m in spec.machines]
    deployments = [
        Deployment(
            id=d.id, replicas=d.replicas, cpu_per_replica=d.cpu_per_replica,
            mem_per_replica=d.mem_per_replica, brownout_allowed=d.brownout_allowed,
            base_latency=d.base_latency, rate_per_core=d.rate_per_core,
            optional_in_chain=d.optional_in_chain,
        )
        for d in spec.deployments
    ]
    chains = [ServiceChain(c.id, tuple(c.stations), c.weight) for c in spec.chains]
    state = empty_state(machines, deployments, chains, overcommit=spec.overcommit)
    return place_initial(state, {d.id: d.replicas for d in deployments})


def load_scenario_spec(path: str) -> ScenarioSpec:
    try:
        with open(path, "r") as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ScenarioError(f"Scenario file not found: {path}", original_error=e) from e
    except (json.JSONDecodeError, IOError) as e:
        raise ScenarioError(f"Error reading scenario file {path}: {e}", original_error=e) from e
    try:
        return ScenarioSpec.model_validate(raw)
    except ValidationError as e:
        raise ScenarioError(f"Invalid scenario {path}: {e}", original_error=e) from e


def load_scenario(path: str) -> ClusterState:
    """Load a scenario file into a placed, validated ClusterState."""
    spec = load_scenario_spec(path)
    state = state_from_spec(spec)
    violations = validate_cluster(state)
    if violations:
        details = "; ".join(f"{v.subject_id}: {v.reason}" for v in violations)
        raise ScenarioError(f"Invalid scenario {path}: {details}")
    return state

