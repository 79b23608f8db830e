import numpy as np
import pytest

from certpgo.errors import DimensionMismatch, InvalidGraph
from certpgo.geometry import random_rotation, rot2
from certpgo.graph import MultiRobotGraph, NodeId, Pose, RelativeMeasurement
from certpgo.quadratic import (LiftedState, assemble, block_submatrices, cost, node_columns, project_tangent,
                               retract, riemannian_gradient)
from certpgo.solver import embed
from certpgo.synth import MissionSpec, NoiseModel, generate

from conftest import edge_sum_cost, random_graph, random_lifted, so2_ring


def _tangent(rng, x, d):
    return project_tangent(x, rng.standard_normal(x.shape), d)


def test_empty_edge_set_gives_zero_matrix():
    L = assemble(MultiRobotGraph(2, [3], []))
    assert L.matrix.shape == (9, 9) and L.matrix.nnz == 0


def test_single_edge_identity_cost_zero():
    g = MultiRobotGraph(2, [2], [RelativeMeasurement(NodeId(0, 0), NodeId(0, 1), np.eye(2), np.zeros(2), 1.0, 1.0)])
    st = embed({NodeId(0, 0): Pose.identity(2), NodeId(0, 1): Pose.identity(2)}, g, 2)
    assert cost(assemble(g), st) == 0.0


def test_single_edge_rotation_mismatch_pi():
    g = MultiRobotGraph(2, [2], [RelativeMeasurement(NodeId(0, 0), NodeId(0, 1), rot2(np.pi), np.zeros(2), 1.0, 0.0)])
    st = embed({NodeId(0, 0): Pose.identity(2), NodeId(0, 1): Pose.identity(2)}, g, 2)
    assert cost(assemble(g), st) == pytest.approx(8.0, abs=1e-12)


def test_so2_ring_oracle():
    g = so2_ring([0.0, 0.0, 0.0])
    angles = [0.0, 2 * np.pi / 3, 2 * np.pi / 3]
    poses = {NodeId(0, k): Pose(rot2(a), np.zeros(2)) for k, a in enumerate(angles)}
    # each mismatched edge contributes ||R(2pi/3) - I||_F^2 = 4 - 4 cos(2pi/3) = 6
    assert cost(assemble(g), embed(poses, g, 2)) == pytest.approx(12.0, abs=1e-12)


def test_cost_matches_edge_sum_on_random_graphs(rng):
    for _ in range(40):
        g = random_graph(rng)
        L = assemble(g)
        x = random_lifted(rng, g.n, g.d, int(rng.integers(g.d, g.d + 4)))
        direct = edge_sum_cost(g, x)
        assert abs(cost(L, LiftedState(x, g.d)) - direct) <= 1e-9 * (1 + direct)


def test_laplacian_symmetric_psd_and_sparsity(rng):
    for _ in range(30):
        g = random_graph(rng, max_poses=5)
        L = assemble(g)
        dense = L.dense()
        assert np.max(np.abs(dense - dense.T)) <= 1e-12 * (1 + np.max(np.abs(dense)))
        ev = np.linalg.eigvalsh(dense)
        assert ev[0] >= -1e-9 * ev[-1]
        k = g.d + 1
        adj = set()
        for e in g.edges:
            i, j = g.offset(e.source.robot) + e.source.index, g.offset(e.target.robot) + e.target.index
            adj |= {(i, j), (j, i)}
        for i in range(g.n):
            for j in range(g.n):
                if i != j:
                    block = dense[i * k:(i + 1) * k, j * k:(j + 1) * k]
                    assert (np.any(block != 0)) == ((i, j) in adj)


def test_cost_linear_in_weights(rng):
    g = random_graph(rng)
    x = LiftedState(random_lifted(rng, g.n, g.d, g.d + 1), g.d)
    doubled = g.with_edges([e.scaled(2.0) for e in g.edges])
    assert cost(assemble(doubled), x) == pytest.approx(2 * cost(assemble(g), x), rel=1e-12)
    np.testing.assert_allclose(riemannian_gradient(assemble(doubled), x), 2 * riemannian_gradient(assemble(g), x),
                               rtol=1e-11, atol=1e-11)


def test_gradient_zero_at_noiseless_optimum():
    g = generate(MissionSpec(num_robots=2, poses_per_robot=10, noise=NoiseModel(0.0, 0.0, 0)))
    st = embed(g.ground_truth, g, 3)
    L = assemble(g)
    assert cost(L, st) <= 1e-12 * L.inf_norm()
    assert np.linalg.norm(riemannian_gradient(L, st)) <= 1e-9 * L.inf_norm()


@pytest.mark.parametrize("d", [2, 3])
def test_gradient_matches_finite_differences(rng, d):
    for _ in range(5):
        g = random_graph(rng, d=d)
        L = assemble(g)
        x = random_lifted(rng, g.n, d, d + 1)
        st = LiftedState(x, d)
        grad = riemannian_gradient(L, st)
        for _ in range(10):
            v = _tangent(rng, x, d)
            v /= np.linalg.norm(v)
            h = 1e-6
            fd = (cost(L, LiftedState(retract(x, h * v, d), d)) - cost(L, LiftedState(retract(x, -h * v, d), d))) / (2 * h)
            assert abs(fd - np.sum(grad * v)) <= 1e-5 * max(1.0, abs(fd))


def test_retraction_feasible_and_tangent_projection(rng):
    g = random_graph(rng, d=3)
    x = random_lifted(rng, g.n, 3, 5)
    y = retract(x, 0.7 * rng.standard_normal(x.shape), 3)
    assert LiftedState(y, 3).feasibility_error() <= 1e-12
    v = _tangent(rng, x, 3)
    np.testing.assert_allclose(project_tangent(x, v, 3), v, atol=1e-12)


def test_gauge_invariance_at_rank_d(rng):
    g = random_graph(rng, d=3)
    L = assemble(g)
    poses = {node: Pose(random_rotation(rng, 3), rng.standard_normal(3)) for node in g.nodes()}
    t = Pose(random_rotation(rng, 3), rng.standard_normal(3))
    moved = {k: t @ p for k, p in poses.items()}
    a, b = cost(L, embed(poses, g, 3)), cost(L, embed(moved, g, 3))
    assert b == pytest.approx(a, rel=1e-9)


def test_dimension_checks(rng):
    g = random_graph(rng, d=2)
    L = assemble(g)
    with pytest.raises(DimensionMismatch):
        cost(L, LiftedState(np.zeros((3, 3 * (g.n + 1))), 2))
    with pytest.raises(DimensionMismatch):
        LiftedState(np.zeros((3, 7)), 2)


def test_assemble_rejects_invalid_graph():
    g = MultiRobotGraph(2, [2], [RelativeMeasurement(NodeId(0, 0), NodeId(0, 5), np.eye(2), np.zeros(2), 1.0, 1.0)])
    with pytest.raises(InvalidGraph):
        assemble(g)


def test_block_submatrices_single_robot(rng):
    g = random_graph(rng, robots=1)
    L = assemble(g)
    l_bb, coupling = block_submatrices(L, 0)
    np.testing.assert_array_equal(l_bb.toarray(), L.dense())
    assert coupling == {}


def test_block_coupling_support_single_inter_edge():
    edges = [RelativeMeasurement(NodeId(r, k), NodeId(r, k + 1), np.eye(2), np.ones(2), 1.0, 1.0)
             for r in range(2) for k in range(3)]
    edges.append(RelativeMeasurement(NodeId(0, 2), NodeId(1, 1), np.eye(2), np.ones(2), 1.0, 1.0))
    L = assemble(MultiRobotGraph(2, [4, 4], edges))
    _, coupling = block_submatrices(L, 0)
    assert list(coupling) == [1]
    c = coupling[1]
    assert list(c.own_nodes) == [2] and list(c.neighbor_nodes) == [5]


def test_block_decomposition_reproduces_cost(rng):
    for _ in range(10):
        g = random_graph(rng, robots=3)
        L = assemble(g)
        x = random_lifted(rng, g.n, g.d, g.d + 2)
        total = 0.0
        for robot in range(L.num_robots):
            l_bb, coupling = block_submatrices(L, robot)
            xb = x[:, L.robot_columns(robot)]
            total += np.sum(xb * (l_bb @ xb.T).T)
            for c in coupling.values():
                own = x[:, node_columns(c.own_nodes, g.d)]
                theirs = x[:, node_columns(c.neighbor_nodes, g.d)]
                total += np.sum(own * (c.matrix @ theirs.T).T)
        assert total == pytest.approx(cost(L, LiftedState(x, g.d)), rel=1e-10)
