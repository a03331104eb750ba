import numpy as np
import pytest

from flowrecon import FlowSnapshot, build_knn_graph


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_snapshot(rng, n, span=1.0):
    pts = rng.uniform(0.0, span, (n, 2))
    vel = rng.normal(size=(n, 2))
    return FlowSnapshot(points=pts, velocities=vel)


def random_graph(rng, n, k=3):
    return build_knn_graph(random_snapshot(rng, n), k=k)


@pytest.fixture
def small_graph(rng):
    return random_graph(rng, 12, k=3)


@pytest.fixture
def path3_graph():
    """Three collinear nodes: middle node bridges the two ends."""
    snap = FlowSnapshot(
        points=np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]),
        velocities=np.zeros((3, 2)),
    )
    return build_knn_graph(snap, k=1)
