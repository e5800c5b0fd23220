import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from cluster_model import Deployment, DeploymentAction, STUDENT_FEATURES
from config import (
    CPU_STEP, MEMORY_STEP, Q_THRESHOLD, MIN_CPU_PER_REPLICA, MIN_MEM_PER_REPLICA,
    STUDENT_HIDDEN, STUDENT_BUFFER_CAPACITY, STUDENT_LR, SIM_MAX_REPLICAS,
)
from neural import AdamState, DenseNet, ShapeMismatchError, backward, forward

logger = logging.getLogger(__name__)

Q_COLUMNS = ("q_cpu", "q_mem", "q_horizontal")


class StudentError(Exception):
    """Error raised by student training or acting."""

    def __init__(self, message: str, original_error: Optional[Exception] = None):
        super().__init__(message)
        self.original_error = original_error


class EmptyBufferError(StudentError):
    pass


@dataclass(frozen=True)
class ScalingSteps:
    cpu_step: float = CPU_STEP  # cores
    memory_step: float = MEMORY_STEP  # GB
    q_threshold: float = Q_THRESHOLD

    def __post_init__(self):
        if not self.cpu_step > 0 or not self.memory_step > 0:
            raise StudentError("Scaling steps must be positive")


@dataclass(frozen=True)
class ScalingDecision:
    cpu_per_replica: float
    mem_per_replica: float
    replicas: int


def scale_deployment(
    q: DeploymentAction,
    deployment: Deployment,
    steps: ScalingSteps = ScalingSteps(),
    max_replicas: int = SIM_MAX_REPLICAS,
) -> ScalingDecision:
    """
    Apply one round of the general scaling procedure.

    Each component only acts when its magnitude exceeds the threshold.
    Vertical changes move by the clipped Q-value times the step and are
    floored at 0.1 core / 0.1 GB. Horizontal changes add
    sign(q) * ceil(|q|) replicas so negative values can scale in, clamped
    to [min_replicas, max_replicas] instead of aborting.
    """
    cpu = deployment.cpu_per_replica
    mem = deployment.mem_per_replica
    replicas = deployment.replicas

    if abs(q.cpu_scaling) > steps.q_threshold:
        cpu = max(cpu + float(np.clip(q.cpu_scaling, -1.0, 1.0)) * steps.cpu_step,
                  MIN_CPU_PER_REPLICA)
    if abs(q.memory_scaling) > steps.q_threshold:
        mem = max(mem + float(np.clip(q.memory_scaling, -1.0, 1.0)) * steps.memory_step,
                  MIN_MEM_PER_REPLICA)
    if abs(q.horizontal_scaling) > steps.q_threshold:
        h = float(np.clip(q.horizontal_scaling, -1.0, 1.0))
        delta = int(math.copysign(math.ceil(abs(h)), h))
        replicas = min(max(replicas + delta, deployment.min_replicas), max_replicas)

    return ScalingDecision(cpu_per_replica=cpu, mem_per_replica=mem, replicas=replicas)


class StudentNet:
    """9 local features -> 48 tanh -> 3 tanh Q-values."""

    def __init__(self, net: DenseNet, deployment_id: str = ""):
        if net.input_dim != STUDENT_FEATURES or net.output_dim != 3:
            raise ShapeMismatchError(
                f"Student net must map {STUDENT_FEATURES} -> 3, got "
                f"{net.input_dim} -> {net.output_dim}"
            )
        self.net = net
        self.deployment_id = deployment_id
        self.optimizer = AdamState.for_params(net.parameters())

    @classmethod
    def create(cls, deployment_id: str = "", seed: Optional[int] = None,
               hidden: int = STUDENT_HIDDEN) -> "StudentNet":
        net = DenseNet.build([STUDENT_FEATURES, hidden, 3], ["tanh", "tanh"], seed=seed)
        return cls(net, deployment_id)

    @classmethod
    def zeros(cls, deployment_id: str = "", hidden: int = STUDENT_HIDDEN) -> "StudentNet":
        return cls(DenseNet.zeros([STUDENT_FEATURES, hidden, 3], ["tanh", "tanh"]), deployment_id)

    def parameter_count(self) -> int:
        return self.net.parameter_count()


class DeploymentBuffer:
    """Ring buffer of (local_state, teacher_q) guidance pairs."""

    def __init__(self, capacity: int = STUDENT_BUFFER_CAPACITY):
        if capacity < 1:
            raise StudentError(f"Buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.states = np.zeros((capacity, STUDENT_FEATURES), dtype=np.float64)
        self.targets = np.zeros((capacity, 3), dtype=np.float64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Stored pairs, oldest first."""
        if self.size < self.capacity:
            return self.states[:self.size].copy(), self.targets[:self.size].copy()
        order = np.roll(np.arange(self.capacity), -self.cursor)
        return self.states[order].copy(), self.targets[order].copy()


def record_guidance(buffer: DeploymentBuffer, local_state, teacher_q):
    """Append a teacher policy-state pair, evicting the oldest at capacity."""
    state = np.asarray(local_state, dtype=np.float64).reshape(-1)
    q = np.asarray(teacher_q, dtype=np.float64).reshape(-1)
    if state.size != STUDENT_FEATURES or q.size != 3:
        raise ShapeMismatchError(
            f"Guidance needs {STUDENT_FEATURES} features and 3 Q-values, "
            f"got {state.size} and {q.size}"
        )
    buffer.states[buffer.cursor] = state
    buffer.targets[buffer.cursor] = q
    buffer.cursor = (buffer.cursor + 1) % buffer.capacity
    buffer.size = min(buffer.size + 1, buffer.capacity)


def imitation_loss(student: StudentNet, states: np.ndarray, targets: np.ndarray) -> float:
    """Mean over pairs and over the 3 outputs of the squared teacher-student gap."""
    predicted, _ = forward(student.net, states)
    return float(np.mean((predicted - targets) ** 2))


def imitation_step(
    student: StudentNet,
    buffer: DeploymentBuffer,
    batch_size: int,
    lr: float = STUDENT_LR,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """One Adam step on a sampled batch; returns the pre-step loss."""
    if len(buffer) == 0:
        raise EmptyBufferError(f"Deployment buffer for '{student.deployment_id}' is empty")
    if rng is None:
        rng = np.random.default_rng()
    n = min(batch_size, len(buffer))
    idx = rng.choice(len(buffer), size=n, replace=False)
    states = buffer.states[idx]
    targets = buffer.targets[idx]

    predicted, cache = forward(student.net, states)
    diff = predicted - targets
    loss = float(np.mean(diff ** 2))
    if loss == 0.0:
        return loss
    grads = backward(student.net, cache, 2.0 * diff / diff.size)
    student.net.apply_gradients(grads, student.optimizer, lr)
    return loss


def student_act(student: StudentNet, local_state) -> DeploymentAction:
    state = np.asarray(local_state, dtype=np.float64).reshape(-1)
    if state.size != STUDENT_FEATURES:
        raise ShapeMismatchError(
            f"Student expects {STUDENT_FEATURES} features, got {state.size}"
        )
    q, _ = forward(student.net, state)
    return DeploymentAction.from_array(q)


def dump_buffer(buffer: DeploymentBuffer, path: str):
    states, targets = buffer.pairs()
    frame = pd.DataFrame(states, columns=[f"s{i}" for i in range(STUDENT_FEATURES)])
    for j, name in enumerate(Q_COLUMNS):
        frame[name] = targets[:, j]
    frame.to_csv(path, index=False)


def load_buffer(path: str, capacity: int = STUDENT_BUFFER_CAPACITY) -> DeploymentBuffer:
    frame = pd.read_csv(path, float_precision="round_trip")
    feature_columns = [f"s{i}" for i in range(STUDENT_FEATURES)]
    missing = [c for c in feature_columns + list(Q_COLUMNS) if c not in frame.columns]
    if missing:
        raise StudentError(f"Buffer dump {path} is missing columns {missing}")
    buffer = DeploymentBuffer(capacity=max(capacity, 1))
    for state, q in zip(frame[feature_columns].to_numpy(), frame[list(Q_COLUMNS)].to_numpy()):
        record_guidance(buffer, state, q)
    return buffer
