"""Shared cluster fixtures."""
import pytest

from cluster_model import Deployment, Machine, ServiceChain, empty_state, place_initial


def make_state(api_replicas=2, db_replicas=1, cache_replicas=None, overcommit=False):
    """Two 4-core / 4 GB machines, an api -> db chain and an optional cache station."""
    machines = [Machine("m1", 4.0, 4.0), Machine("m2", 4.0, 4.0)]
    deployments = [
        Deployment("api", api_replicas, 1.0, 1.0, base_latency=10.0, rate_per_core=100.0),
        Deployment("db", db_replicas, 1.0, 1.0, base_latency=20.0, rate_per_core=100.0),
    ]
    stations = ("api", "db")
    if cache_replicas is not None:
        deployments.append(Deployment(
            "cache", cache_replicas, 0.5, 0.5, brownout_allowed=True,
            base_latency=5.0, rate_per_core=200.0, optional_in_chain=True,
        ))
        stations = ("api", "cache", "db")
    chains = [ServiceChain("main", stations, 1.0)]
    state = empty_state(machines, deployments, chains, overcommit=overcommit)
    return place_initial(state, {d.id: d.replicas for d in deployments})


@pytest.fixture
def small_state():
    return make_state()


@pytest.fixture
def desk_file():
    from config import DEFAULT_SCENARIO_FILE
    return DEFAULT_SCENARIO_FILE
