import numpy as np
import pytest
from scipy.stats import spearmanr

from certpgo.errors import SpecError
from certpgo.graph import EdgeKind, NodeId, validate
from certpgo.io import write_g2o
from certpgo.synth import (MissionSpec, NoiseModel, Shape, generate, ground_truth_poses, perturb_initial_guess,
                           random_poses)

from conftest import pose_edge_cost


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("shape", list(Shape))
def test_noiseless_ground_truth_has_zero_cost(d, shape):
    g = generate(MissionSpec(num_robots=2, poses_per_robot=10, trajectory_shape=shape, intra_loop_period=3,
                             noise=NoiseModel(0.0, 0.0, 0), d=d))
    assert validate(g).ok
    assert pose_edge_cost(g, g.ground_truth) < 1e-18
    assert all(p.is_valid() for p in g.ground_truth.values())


def test_single_robot_line_chain_count():
    g = generate(MissionSpec(num_robots=1, poses_per_robot=5, trajectory_shape=Shape.LINE, inter_overlap=0))
    assert len(g.edges) == 4


def test_determinism_bitwise():
    spec = MissionSpec(num_robots=3, poses_per_robot=20, intra_loop_period=5, noise=NoiseModel(0.1, 0.1, 42), d=3)
    assert write_g2o(generate(spec)) == write_g2o(generate(spec))


def test_weights_are_inverse_variances():
    g = generate(MissionSpec(noise=NoiseModel(0.1, 0.5, 0)))
    assert all(e.kappa == pytest.approx(100.0) and e.sigma == pytest.approx(4.0) for e in g.edges)
    g0 = generate(MissionSpec(noise=NoiseModel(0.0, 0.0, 0)))
    assert g0.edges[0].kappa == pytest.approx(1e8)


def test_edge_structure():
    spec = MissionSpec(num_robots=2, poses_per_robot=20, intra_loop_period=5, inter_overlap=0.4)
    g = generate(spec)
    odo = [e for e in g.edges if e.kind is EdgeKind.INTRA and e.target.index == e.source.index + 1]
    assert len(odo) == 2 * 19
    loops = [e for e in g.edges if e.kind is EdgeKind.INTRA and e.target.index - e.source.index == 5]
    assert len(loops) == 2 * 3
    inter = [e for e in g.edges if e.kind is EdgeKind.INTER]
    assert inter
    for e in inter:
        gap = g.ground_truth[e.source].translation - g.ground_truth[e.target].translation
        assert np.linalg.norm(gap) <= 2 * spec.step + 1e-12


@pytest.mark.parametrize("kw", [dict(num_robots=1, inter_overlap=0.3), dict(num_robots=0),
                                dict(inter_overlap=1.5), dict(d=4), dict(poses_per_robot=0)])
def test_invalid_specs(kw):
    with pytest.raises(SpecError):
        MissionSpec(**kw)


def test_negative_noise_rejected():
    with pytest.raises(SpecError):
        NoiseModel(-0.1, 0.1, 0)


def test_zero_overlap_still_meets_at_hand_off():
    # consecutive robots start where the previous one stopped, so they still meet once
    g = generate(MissionSpec(num_robots=3, poses_per_robot=10, inter_overlap=0.0, trajectory_shape=Shape.LINE))
    assert validate(g).ok


def test_perturb_initial_guess():
    g = generate(MissionSpec(num_robots=2, poses_per_robot=10))
    assert perturb_initial_guess(g, 0.0, 0.0, 3) == g.ground_truth
    a = perturb_initial_guess(g, np.pi, 10.0, 3)
    b = perturb_initial_guess(g, np.pi, 10.0, 3)
    c = perturb_initial_guess(g, np.pi, 10.0, 4)
    node = NodeId(1, 4)
    np.testing.assert_array_equal(a[node].matrix(), b[node].matrix())
    assert not np.allclose(a[node].matrix(), c[node].matrix())
    assert all(p.is_valid() for p in a.values())


def test_random_poses_valid_and_seeded():
    g = generate(MissionSpec(num_robots=2, poses_per_robot=6, d=3))
    a, b = random_poses(g, 1), random_poses(g, 1)
    assert all(a[k].is_valid() for k in a)
    assert all(np.array_equal(a[k].matrix(), b[k].matrix()) for k in a)


def test_ground_truth_cost_grows_with_noise():
    levels = [0.01, 0.02, 0.04, 0.08, 0.16]
    xs, ys = [], []
    for seed in range(20):
        for s in levels:
            g = generate(MissionSpec(num_robots=2, poses_per_robot=15, noise=NoiseModel(s, s, seed)))
            # unweighted squared residuals so the comparison is not dominated by 1/s^2 weights
            unit = g.with_edges([e.scaled(1.0) for e in g.edges])
            cost = sum(np.sum((unit.ground_truth[e.target].rotation - unit.ground_truth[e.source].rotation @ e.rotation) ** 2)
                       for e in unit.edges)
            xs.append(s)
            ys.append(cost)
    assert spearmanr(xs, ys).statistic > 0


def test_ground_truth_poses_shared_path_overlap():
    spec = MissionSpec(num_robots=2, poses_per_robot=10, inter_overlap=0.5, trajectory_shape=Shape.LINE)
    gt = ground_truth_poses(spec)
    assert len(gt) == 20
