"""g2o / TUM text formats and the JSON solve report.

Multi-robot vertex ids follow ``id = robot * stride + index``. g2o numbers
are written with 17 significant digits so a write/parse round trip is
lossless; TUM uses 9.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import IncompleteSolution, InvalidTrajectory, NodeNotFound, ParseError
from .geometry import quat_from_rotation, rot2, rotation_from_quat, yaw
from .graph import MultiRobotGraph, NodeId, Pose, RelativeMeasurement

DEFAULT_STRIDE = 100000
QUAT_NORM_TOL = 1e-3
_ID = re.compile(r"[0-9]{1,18}")

# tag -> (dimension, number of numeric fields after the tag)
_TAGS = {
    "VERTEX_SE2": (2, 4),
    "EDGE_SE2": (2, 11),
    "VERTEX_SE3:QUAT": (3, 8),
    "EDGE_SE3:QUAT": (3, 30),
}
# diagonal positions inside the 21 upper-triangular entries of a 6x6 matrix
_SE3_DIAG = (0, 6, 11, 15, 18, 20)


def _fields(tokens, count, lineno, n_ids):
    if len(tokens) != count:
        raise ParseError(f"expected {count} fields, got {len(tokens)}", lineno)
    ids = []
    for tok in tokens[:n_ids]:
        if not _ID.fullmatch(tok):
            raise ParseError(f"vertex id {tok!r} is not a nonnegative integer", lineno)
        ids.append(int(tok))
    try:
        vals = [float(t) for t in tokens[n_ids:]]
    except ValueError as exc:
        raise ParseError(f"non-numeric field: {exc}", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite numeric field", lineno)
    return ids, vals


def _quat_rotation(q, lineno):
    norm = math.sqrt(sum(c * c for c in q))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise ParseError(f"quaternion norm {norm:.6g} deviates from 1 by more than {QUAT_NORM_TOL}", lineno)
    return rotation_from_quat(q)


def parse_g2o(text, robot_id_stride: int = DEFAULT_STRIDE) -> MultiRobotGraph:
    """Parse g2o text into a graph; vertex values become ``graph.initial``."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    if robot_id_stride < 1:
        raise ValueError("robot_id_stride must be >= 1")
    d = None
    vertices: dict[NodeId, Pose] = {}
    raw_edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        tag = tokens[0]
        if tag not in _TAGS:
            raise ParseError(f"unknown tag {tag[:40]!r}", lineno)
        tag_d, count = _TAGS[tag]
        if d is None:
            d = tag_d
        elif d != tag_d:
            raise ParseError("mixed SE2/SE3 content", lineno)
        if tag.startswith("VERTEX"):
            (vid,), vals = _fields(tokens[1:], count, lineno, 1)
            node = NodeId(vid // robot_id_stride, vid % robot_id_stride)
            if node in vertices:
                raise ParseError(f"duplicate vertex {vid}", lineno)
            if d == 2:
                vertices[node] = Pose(rot2(vals[2]), vals[:2])
            else:
                vertices[node] = Pose(_quat_rotation(vals[3:7], lineno), vals[:3])
        else:
            (a, b), vals = _fields(tokens[1:], count, lineno, 2)
            src = NodeId(a // robot_id_stride, a % robot_id_stride)
            dst = NodeId(b // robot_id_stride, b % robot_id_stride)
            if d == 2:
                rot, trans = rot2(vals[2]), vals[:2]
                info = vals[3:]
                sigma, kappa = 0.5 * (info[0] + info[3]), info[5]
            else:
                rot, trans = _quat_rotation(vals[3:7], lineno), vals[:3]
                info = [vals[7 + k] for k in _SE3_DIAG]
                sigma, kappa = sum(info[:3]) / 3.0, sum(info[3:]) / 3.0
            raw_edges.append((lineno, src, dst, rot, trans, kappa, sigma))
    d = d or 2
    counts = []
    if vertices:
        per_robot: dict[int, list[int]] = {}
        for nd in vertices:
            per_robot.setdefault(nd.robot, []).append(nd.index)
        robots = sorted(per_robot)
        if robots != list(range(len(robots))):
            raise ParseError(f"robot ids must be contiguous from 0, got {robots[:10]}")
        for robot in robots:
            idx = sorted(per_robot[robot])
            if idx != list(range(len(idx))):
                raise ParseError(f"robot {robot} vertex indices are not contiguous from 0")
            counts.append(len(idx))
    edges = []
    for lineno, src, dst, rot, trans, kappa, sigma in raw_edges:
        for node in (src, dst):
            if node not in vertices:
                raise NodeNotFound(f"line {lineno}: edge references missing vertex {tuple(node)}")
        edges.append(RelativeMeasurement(src, dst, rot, trans, kappa, sigma))
    return MultiRobotGraph(d, counts, edges, initial=vertices or None)


def _num(x: float) -> str:
    return format(float(x), ".17g")


def write_g2o(graph: MultiRobotGraph, poses: dict[NodeId, Pose] | None = None,
              robot_id_stride: int = DEFAULT_STRIDE) -> str:
    poses = poses if poses is not None else graph.initial
    lines = [f"# multi-robot pose graph: d={graph.d} robots={graph.num_robots} stride={robot_id_stride}"]
    missing = [nd for nd in graph.nodes() if poses is None or nd not in poses]
    if missing:
        raise IncompleteSolution(f"{len(missing)} nodes without a pose, e.g. {tuple(missing[0])}")

    def vid(node):
        return node.robot * robot_id_stride + node.index

    for node in graph.nodes():
        pose = poses[node]
        if graph.d == 2:
            vals = [*pose.translation, yaw(pose.rotation)]
            lines.append(" ".join(["VERTEX_SE2", str(vid(node)), *map(_num, vals)]))
        else:
            vals = [*pose.translation, *quat_from_rotation(pose.rotation)]
            lines.append(" ".join(["VERTEX_SE3:QUAT", str(vid(node)), *map(_num, vals)]))
    for e in graph.edges:
        ids = [str(vid(e.source)), str(vid(e.target))]
        if graph.d == 2:
            vals = [*e.translation, yaw(e.rotation), e.sigma, 0, 0, e.sigma, 0, e.kappa]
            lines.append(" ".join(["EDGE_SE2", *ids, *map(_num, vals)]))
        else:
            info = np.zeros(21)
            info[list(_SE3_DIAG)] = [e.sigma] * 3 + [e.kappa] * 3
            vals = [*e.translation, *quat_from_rotation(e.rotation), *info]
            lines.append(" ".join(["EDGE_SE3:QUAT", *ids, *map(_num, vals)]))
    return "\n".join(lines) + "\n"


def write_tum(trajectory) -> str:
    """One ``t tx ty tz qx qy qz qw`` line per pose; 2-D poses sit in the z = 0 plane."""
    lines = []
    last = None
    for t, pose in trajectory:
        if last is not None and not t > last:
            raise InvalidTrajectory(f"timestamps must be strictly increasing ({last} then {t})")
        last = t
        trans = np.zeros(3)
        trans[: pose.d] = pose.translation
        q = quat_from_rotation(pose.rotation)
        lines.append(" ".join([f"{t:.9f}", *(format(float(v) + 0.0, ".9g") for v in (*trans, *q))]))
    return "\n".join(lines) + ("\n" if lines else "")


def read_tum(text: str, d: int = 3) -> list[tuple[float, Pose]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if len(tokens) != 8:
            raise ParseError(f"expected 8 TUM fields, got {len(tokens)}", lineno)
        try:
            vals = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        rot = _quat_rotation(vals[4:8], lineno)
        if d == 2:
            out.append((vals[0], Pose(rot2(np.arctan2(rot[1, 0], rot[0, 0])), vals[1:3])))
        else:
            out.append((vals[0], Pose(rot, vals[1:4])))
    return out


def robot_trajectory(graph: MultiRobotGraph, poses: dict[NodeId, Pose], robot: int):
    """TUM-ready trajectory of one robot, timestamped by pose index."""
    return [(float(k), poses[NodeId(robot, k)]) for k in range(graph.poses_per_robot[robot])]


def write_ground_truth(poses: dict[NodeId, Pose], stride: int = DEFAULT_STRIDE) -> str:
    """All robots in one TUM file; each timestamp is the pose's g2o vertex id."""
    return write_tum([(float(node.robot * stride + node.index), poses[node]) for node in sorted(poses)])


def read_ground_truth(text: str, d: int, stride: int = DEFAULT_STRIDE) -> dict[NodeId, Pose]:
    out = {}
    for t, pose in read_tum(text, d):
        vid = int(round(t))
        out[NodeId(vid // stride, vid % stride)] = pose
    return out


@dataclass
class SolveReport:
    final_cost: float
    iterations: int
    per_robot_rmse: list = field(default_factory=list)
    baseline_rmse: list = field(default_factory=list)
    improvement_percent: list = field(default_factory=list)
    certified: bool | None = None
    lambda_d_plus_1: float | None = None
    mode: str | None = None
    verdict: str | None = None
    traffic: dict | None = None


def write_report(report: SolveReport) -> str:
    data = {k: v for k, v in asdict(report).items() if v is not None}
    return json.dumps(data, indent=2, default=float) + "\n"
