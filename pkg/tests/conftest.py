import numpy as np
import pytest

from certpgo.geometry import random_rotation, rot2
from certpgo.graph import MultiRobotGraph, NodeId, Pose, RelativeMeasurement
from certpgo.quadratic import split_blocks


def edge_sum_cost(graph, x):
    """Lifted objective by a plain loop over edges (independent of the Laplacian)."""
    d = graph.d
    offsets = np.concatenate([[0], np.cumsum(graph.poses_per_robot)])
    total = 0.0
    for e in graph.edges:
        i = offsets[e.source.robot] + e.source.index
        j = offsets[e.target.robot] + e.target.index
        yi, pi = x[:, i * (d + 1): i * (d + 1) + d], x[:, i * (d + 1) + d]
        yj, pj = x[:, j * (d + 1): j * (d + 1) + d], x[:, j * (d + 1) + d]
        total += e.kappa * np.sum((yj - yi @ e.rotation) ** 2)
        total += e.sigma * np.sum((pj - pi - yi @ e.translation) ** 2)
    return total


def pose_edge_cost(graph, poses):
    total = 0.0
    for e in graph.edges:
        a, b = poses[e.source], poses[e.target]
        total += e.kappa * np.sum((b.rotation - a.rotation @ e.rotation) ** 2)
        total += e.sigma * np.sum((b.translation - a.translation - a.rotation @ e.translation) ** 2)
    return total


def random_graph(rng, d=None, robots=None, max_poses=8, extra=None, zero_sigma=False):
    """Connected random multi-robot graph with random measurements and weights."""
    d = d or int(rng.choice([2, 3]))
    robots = robots or int(rng.integers(1, 4))
    counts = [int(rng.integers(2, max_poses + 1)) for _ in range(robots)]
    nodes = [NodeId(r, k) for r in range(robots) for k in range(counts[r])]
    edges = []

    def meas(a, b):
        rot = random_rotation(rng, d)
        return RelativeMeasurement(a, b, rot, rng.standard_normal(d), float(rng.uniform(0.5, 5)),
                                   0.0 if zero_sigma else float(rng.uniform(0.5, 5)))

    for r in range(robots):
        for k in range(counts[r] - 1):
            edges.append(meas(NodeId(r, k), NodeId(r, k + 1)))
        if r > 0:
            edges.append(meas(NodeId(r - 1, int(rng.integers(counts[r - 1]))), NodeId(r, int(rng.integers(counts[r])))))
    for _ in range(extra if extra is not None else int(rng.integers(0, 6))):
        a, b = rng.choice(len(nodes), 2, replace=False)
        edges.append(meas(nodes[a], nodes[b]))
    return MultiRobotGraph(d, counts, edges)


def random_lifted(rng, n, d, r):
    y = np.linalg.qr(rng.standard_normal((n, r, d)))[0]
    p = rng.standard_normal((n, r))
    x = np.zeros((r, (d + 1) * n))
    for i in range(n):
        x[:, i * (d + 1): i * (d + 1) + d] = y[i]
        x[:, i * (d + 1) + d] = p[i]
    return x


def so2_ring(angles_meas, kappa=1.0):
    """Rotation-only SO(2) cycle 0->1->...->0 with given measured angles."""
    n = len(angles_meas)
    edges = [RelativeMeasurement(NodeId(0, k), NodeId(0, (k + 1) % n), rot2(a), np.zeros(2), kappa, 0.0)
             for k, a in enumerate(angles_meas)]
    return MultiRobotGraph(2, [n], edges)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["edge_sum_cost", "pose_edge_cost", "random_graph", "random_lifted", "so2_ring", "split_blocks", "Pose"]
