import numpy as np
import pytest

from certpgo.baseline import (alignment_residual, ate_rmse, gauss_newton_pgo, improvement_percent,
                              odometry_guess, one_time_fusion, pose_cost, rendezvous_align)
from certpgo.errors import InsufficientMatches, KeyMismatch
from certpgo.geometry import random_rotation
from certpgo.graph import EdgeKind, NodeId, Pose
from certpgo.pipeline import certified_solve
from certpgo.synth import MissionSpec, NoiseModel, Shape, generate, random_poses

from conftest import pose_edge_cost


def rand_pose(rng, d):
    return Pose(random_rotation(rng, d), rng.standard_normal(d) * 3)


def mission(seed=0, d=2, noise=0.03, poses=30, robots=2, loops=0):
    return generate(MissionSpec(num_robots=robots, poses_per_robot=poses, trajectory_shape=Shape.RING,
                                intra_loop_period=loops, inter_overlap=0.4,
                                noise=NoiseModel(noise, noise, seed), d=d))


# ---------------------------------------------------------------------------
# rendezvous alignment


@pytest.mark.parametrize("d", [2, 3])
def test_align_identical_pairs_gives_identity(rng, d):
    pairs = [(p, p) for p in (rand_pose(rng, d) for _ in range(4))]
    t = rendezvous_align(pairs)
    assert np.allclose(t.rotation, np.eye(d), atol=1e-12) and np.allclose(t.translation, 0, atol=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_align_recovers_exact_transform(rng, d):
    truth = rand_pose(rng, d)
    pairs = [(a, truth @ a) for a in (rand_pose(rng, d) for _ in range(5))]
    t = rendezvous_align(pairs)
    assert np.allclose(t.matrix(), truth.matrix(), atol=1e-10)
    one = rendezvous_align(pairs[:1])
    assert np.allclose(one.matrix(), (pairs[0][1] @ pairs[0][0].inverse()).matrix(), atol=1e-10)


@pytest.mark.parametrize("d", [2, 3])
def test_align_beats_random_candidates(rng, d):
    truth = rand_pose(rng, d)
    pairs = [(a, truth @ a @ Pose(np.eye(d), 0.3 * rng.standard_normal(d))) for a in (rand_pose(rng, d) for _ in range(6))]
    best = alignment_residual(rendezvous_align(pairs), pairs)
    for _ in range(1000):
        cand = Pose(random_rotation(rng, d), truth.translation + rng.standard_normal(d))
        assert alignment_residual(cand, pairs) >= best - 1e-9


def test_align_needs_pairs():
    with pytest.raises(InsufficientMatches):
        rendezvous_align([])


# ---------------------------------------------------------------------------
# one-time fusion and odometry


@pytest.mark.parametrize("d", [2, 3])
def test_one_time_fusion_noiseless_is_exact(d):
    g = mission(noise=0.0, d=d, robots=3)
    fused = one_time_fusion(g)
    gt = g.ground_truth
    anchor = gt[NodeId(0, 0)]
    for node, pose in fused.items():
        assert np.allclose((anchor @ pose).matrix(), gt[node].matrix(), atol=1e-8)


def test_one_time_fusion_ignores_later_rendezvous():
    g = mission(seed=4)
    inter = [e for e in g.edges if e.kind is EdgeKind.INTER]
    assert len(inter) > 1
    keep = [e for e in g.edges if e.kind is not EdgeKind.INTER] + inter[:1]
    a, b = one_time_fusion(g), one_time_fusion(g.with_edges(keep))
    assert all(np.array_equal(a[k].matrix(), b[k].matrix()) for k in a)


def test_one_time_fusion_requires_connection():
    g = mission()
    with pytest.raises(InsufficientMatches):
        one_time_fusion(g.with_edges([e for e in g.edges if e.kind is not EdgeKind.INTER]))


def test_full_pgo_beats_one_time_fusion():
    wins = 0
    for seed in range(5):
        g = mission(seed=seed, poses=40)
        ours = ate_rmse(certified_solve(g).poses, g.ground_truth, per_robot=False)[0]
        wins += ours < ate_rmse(one_time_fusion(g), g.ground_truth, per_robot=False)[0]
    assert wins >= 4


def test_odometry_guess_starts_and_chains():
    g = mission(noise=0.0)
    gt = g.ground_truth
    starts = {r: gt[NodeId(r, 0)] for r in range(g.num_robots)}
    odo = odometry_guess(g, starts)
    assert all(np.allclose(odo[k].matrix(), gt[k].matrix(), atol=1e-8) for k in gt)


# ---------------------------------------------------------------------------
# local search


def test_pose_cost_matches_edge_loop(rng):
    g = mission(seed=2, d=3)
    poses = {k: rand_pose(rng, 3) for k in g.nodes()}
    assert pose_cost(g, poses) == pytest.approx(pose_edge_cost(g, poses), rel=1e-12)


def test_gauss_newton_from_truth_on_noiseless_stops_immediately():
    g = mission(noise=0.0, d=3, poses=10)
    res = gauss_newton_pgo(g, g.ground_truth)
    assert res.converged and res.iterations == 0


@pytest.mark.parametrize("d", [2, 3])
def test_gauss_newton_matches_certified_on_easy_instance(d):
    g = mission(seed=1, d=d, noise=0.02, poses=20, loops=5)
    cert = certified_solve(g)
    assert cert.certified
    res = gauss_newton_pgo(g, g.ground_truth)
    assert res.converged
    assert pose_cost(g, res.poses) == pytest.approx(cert.rounded_cost, rel=1e-6)


def test_gauss_newton_costs_never_increase():
    g = mission(seed=5, noise=0.1, poses=20, loops=5)
    res = gauss_newton_pgo(g, random_poses(g, 5), max_iters=40)
    assert np.all(np.diff(res.costs) <= 0)
    assert res.costs[-1] == pytest.approx(pose_cost(g, res.poses), rel=1e-12)
    poses, converged = res
    assert poses is res.poses and converged is res.converged


def test_gauss_newton_keeps_anchor_fixed(rng):
    g = mission(seed=6, poses=10)
    init = {k: rand_pose(rng, 2) for k in g.nodes()}
    res = gauss_newton_pgo(g, init, max_iters=5)
    assert np.array_equal(res.poses[NodeId(0, 0)].matrix(), init[NodeId(0, 0)].matrix())


# ---------------------------------------------------------------------------
# metrics


def test_ate_zero_and_rigid_invariance(rng):
    g = mission(seed=3, d=3)
    gt = g.ground_truth
    assert max(ate_rmse(gt, gt)) <= 1e-12
    t = rand_pose(rng, 3)
    moved = {k: t @ p for k, p in gt.items()}
    assert max(ate_rmse(moved, gt)) <= 1e-9
    assert min(ate_rmse(moved, gt, align=False)) > 1e-3


def test_ate_unaligned_oracle(rng):
    gt = {NodeId(r, k): rand_pose(rng, 2) for r in range(2) for k in range(5)}
    est = {k: Pose(p.rotation, p.translation + rng.standard_normal(2)) for k, p in gt.items()}
    per = ate_rmse(est, gt, align=False)
    for r in range(2):
        err = [np.sum((est[k].translation - gt[k].translation) ** 2) for k in gt if k.robot == r]
        assert per[r] == pytest.approx(np.sqrt(np.mean(err)), rel=1e-12)
    total = np.sqrt(np.mean([np.sum((est[k].translation - gt[k].translation) ** 2) for k in gt]))
    assert ate_rmse(est, gt, per_robot=False, align=False)[0] == pytest.approx(total, rel=1e-12)


def test_ate_alignment_is_optimal(rng):
    gt = {NodeId(0, k): rand_pose(rng, 2) for k in range(8)}
    est = {k: Pose(p.rotation, p.translation + 0.2 * rng.standard_normal(2)) for k, p in gt.items()}
    best = ate_rmse(est, gt, per_robot=False)[0]
    for _ in range(200):
        t = Pose(random_rotation(rng, 2), 0.3 * rng.standard_normal(2))
        cand = {k: t @ p for k, p in est.items()}
        assert ate_rmse(cand, gt, per_robot=False, align=False)[0] >= best - 1e-12


def test_ate_key_mismatch(rng):
    gt = {NodeId(0, k): rand_pose(rng, 2) for k in range(3)}
    with pytest.raises(KeyMismatch):
        ate_rmse({k: v for k, v in gt.items() if k.index}, gt)


@pytest.mark.parametrize("base,ours,expected", [(7.09, 3.62, 48.9), (7.01, 3.62, 48.4), (2.73, 2.38, 12.8),
                                                (1.0, 1.0, 0.0), (0.0, 1.0, 0.0)])
def test_improvement_percent(base, ours, expected):
    assert improvement_percent(base, ours) == expected
