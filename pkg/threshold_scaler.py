import logging

from cluster_model import ClusterState, DeploymentAction
from config import BASELINE_CPU_THRESHOLD

logger = logging.getLogger(__name__)

# Horizontal Q-value that scale_deployment turns into exactly one replica.
ONE_REPLICA = 1.0


def threshold_autoscaler(
    state: ClusterState, cpu_threshold: float = BASELINE_CPU_THRESHOLD
) -> dict[str, DeploymentAction]:
    """
    One replica out above the threshold, one replica in below half of it.

    Scale-in never goes under one replica, even for deployments that allow
    brownout. Only the horizontal component is ever set.
    """
    actions = {}
    scale_in_below = cpu_threshold / 2.0
    for dep in state.deployments:
        if dep.replicas == 0:
            continue
        utilization = state.busy.get(dep.id, 0.0)
        if utilization > cpu_threshold:
            actions[dep.id] = DeploymentAction(horizontal_scaling=ONE_REPLICA)
        elif utilization < scale_in_below and dep.replicas > 1:
            actions[dep.id] = DeploymentAction(horizontal_scaling=-ONE_REPLICA)
    if actions:
        logger.debug(f"Threshold scaler actions: {sorted(actions)}")
    return actions
