"""Deterministic multi-robot missions with ground truth.

All robots drive segments of one shared path; consecutive robots overlap by
``inter_overlap`` of their trajectories and are offset sideways by a fraction
of a step, so overlap regions produce nearby (not coincident) pose pairs.
Inter-robot edges join each pose to its nearest neighbor on the other robot
when that neighbor lies within two steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import SpecError
from .geometry import exp_so, noise_rotation, random_rotation, rot2
from .baseline import odometry_guess
from .graph import MultiRobotGraph, NodeId, Pose, RelativeMeasurement

WEIGHT_EPS = 1e-8
LATERAL_OFFSET = 0.3


class Shape(str, enum.Enum):
    RING = "ring"
    GRID = "grid"
    LINE = "line"


@dataclass(frozen=True)
class NoiseModel:
    rot_stddev: float = 0.01
    trans_stddev: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if not (self.rot_stddev >= 0 and self.trans_stddev >= 0):
            raise SpecError("noise standard deviations must be nonnegative")

    @property
    def kappa(self) -> float:
        return 1.0 / max(self.rot_stddev**2, WEIGHT_EPS)

    @property
    def sigma(self) -> float:
        return 1.0 / max(self.trans_stddev**2, WEIGHT_EPS)


@dataclass(frozen=True)
class MissionSpec:
    num_robots: int = 2
    poses_per_robot: int = 50
    trajectory_shape: Shape = Shape.RING
    intra_loop_period: int = 0
    inter_overlap: float = 0.3
    noise: NoiseModel = field(default_factory=NoiseModel)
    d: int = 2
    step: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "trajectory_shape", Shape(self.trajectory_shape))
        if self.num_robots < 1 or self.poses_per_robot < 1:
            raise SpecError("robot and pose counts must be >= 1")
        if not 0.0 <= self.inter_overlap <= 1.0:
            raise SpecError("inter_overlap must lie in [0, 1]")
        if self.num_robots == 1 and self.inter_overlap > 0:
            raise SpecError("a single robot cannot overlap with another robot")
        if self.intra_loop_period < 0:
            raise SpecError("intra_loop_period must be >= 0")
        if self.d not in (2, 3):
            raise SpecError("d must be 2 or 3")
        if not self.step > 0:
            raise SpecError("step must be positive")


def _path(shape: Shape, total: int, step: float):
    """Positions (total, 2) and headings (total,) along the shared path."""
    s = np.arange(total, dtype=float)
    if shape is Shape.LINE:
        return np.stack([s * step, np.zeros(total)], axis=1), np.zeros(total)
    if shape is Shape.RING:
        radius = max(total, 4) * step / (2 * np.pi)
        ang = 2 * np.pi * s / max(total, 4)
        pos = radius * np.stack([np.sin(ang), 1.0 - np.cos(ang)], axis=1)
        return pos, ang
    # lawnmower: long lanes joined by short two-step connectors
    lane = max(4, int(round(np.sqrt(total))))
    pos = np.zeros((total, 2))
    head = np.zeros(total)
    moves = []
    direction = 0
    while len(moves) < total:
        moves += [direction * np.pi] * lane
        moves += [np.pi / 2] * 2
        direction = 1 - direction
    x = np.zeros(2)
    for k in range(total):
        head[k] = moves[k]
        pos[k] = x
        x = x + step * np.array([np.cos(moves[k]), np.sin(moves[k])])
    return pos, head


def ground_truth_poses(spec: MissionSpec) -> dict[NodeId, Pose]:
    n, R = spec.poses_per_robot, spec.num_robots
    shift = max(1, int(round((1.0 - spec.inter_overlap) * n))) if R > 1 else 0
    total = n + (R - 1) * shift
    pos, head = _path(spec.trajectory_shape, total, spec.step)
    truth = {}
    for robot in range(R):
        for k in range(n):
            s = robot * shift + k
            normal = np.array([-np.sin(head[s]), np.cos(head[s])])
            xy = pos[s] + robot * LATERAL_OFFSET * spec.step * normal
            if spec.d == 2:
                truth[NodeId(robot, k)] = Pose(rot2(head[s]), xy)
            else:
                z = 0.3 * spec.step * np.sin(s / 7.0)
                rot = Rotation.from_euler("ZYX", [head[s], 0.05 * np.cos(s / 9.0), 0.05 * np.sin(s / 5.0)])
                truth[NodeId(robot, k)] = Pose(rot.as_matrix(), np.array([xy[0], xy[1], z]))
    return truth


def generate(spec: MissionSpec) -> MultiRobotGraph:
    rng = np.random.default_rng(spec.noise.seed)
    truth = ground_truth_poses(spec)
    d, n = spec.d, spec.poses_per_robot
    kappa, sigma = spec.noise.kappa, spec.noise.sigma

    def measure(a: NodeId, b: NodeId) -> RelativeMeasurement:
        rel = truth[a].between(truth[b])
        rot = rel.rotation @ noise_rotation(rng, d, spec.noise.rot_stddev)
        trans = rel.translation
        if spec.noise.trans_stddev > 0:
            trans = trans + rng.normal(0.0, spec.noise.trans_stddev, size=d)
        return RelativeMeasurement(a, b, rot, trans, kappa, sigma)

    edges = []
    for robot in range(spec.num_robots):
        for k in range(n - 1):
            edges.append(measure(NodeId(robot, k), NodeId(robot, k + 1)))
        p = spec.intra_loop_period
        if p > 1:
            for k in range(p, n, p):
                edges.append(measure(NodeId(robot, k - p), NodeId(robot, k)))
    radius = 2.0 * spec.step
    for a in range(spec.num_robots):
        pts_a = np.array([truth[NodeId(a, k)].translation for k in range(n)])
        for b in range(a + 1, spec.num_robots):
            pts_b = np.array([truth[NodeId(b, k)].translation for k in range(n)])
            dist, idx = cKDTree(pts_b).query(pts_a)
            for k in range(n):
                if dist[k] <= radius:
                    edges.append(measure(NodeId(a, k), NodeId(b, int(idx[k]))))
    graph = MultiRobotGraph(d, [n] * spec.num_robots, edges, ground_truth=truth)
    if spec.num_robots > 1 and not any(e.source.robot != e.target.robot for e in edges):
        raise SpecError("trajectories never come within rendezvous range")
    graph.initial = odometry_guess(graph)
    return graph


def perturb_initial_guess(graph: MultiRobotGraph, magnitude_rot: float, magnitude_trans: float, seed: int,
                          base: dict[NodeId, Pose] | None = None) -> dict[NodeId, Pose]:
    """Ground truth with each pose right-composed by an independent random perturbation.

    Rotation perturbations have a uniformly random axis and an angle drawn
    uniformly from ``[0, magnitude_rot]``; translations get an offset with
    uniformly random direction and length in ``[0, magnitude_trans]``.
    """
    base = base if base is not None else graph.ground_truth
    if magnitude_rot == 0 and magnitude_trans == 0:
        return dict(base)
    rng = np.random.default_rng(seed)
    d = graph.d
    q = 1 if d == 2 else 3
    out = {}
    for node in graph.nodes():
        axis = rng.normal(size=q)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, magnitude_rot)
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        length = rng.uniform(0.0, magnitude_trans)
        pose = base[node]
        out[node] = Pose(pose.rotation @ exp_so(d, angle * axis), pose.translation + length * direction)
    return out


def random_poses(graph: MultiRobotGraph, seed: int, trans_scale: float = 1.0) -> dict[NodeId, Pose]:
    """Uniform random rotations and Gaussian translations for every node."""
    rng = np.random.default_rng(seed)
    return {
        node: Pose(random_rotation(rng, graph.d), trans_scale * rng.normal(size=graph.d))
        for node in graph.nodes()
    }
