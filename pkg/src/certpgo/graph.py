"""Multi-robot pose graph data model.

Nodes are addressed by ``NodeId(robot, index)`` and mapped to a contiguous
global index, robots in order. Edges are directed: the measurement of edge
``i -> j`` is the pose of ``j`` expressed in the frame of ``i``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidGraph, NodeNotFound
from .geometry import rotation_error

ROTATION_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """A rigid transform in SE(d), d in {2, 3}."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(-1)
        if rot.ndim != 2 or rot.shape[0] != rot.shape[1] or rot.shape[0] not in (2, 3):
            raise ValueError(f"rotation must be 2x2 or 3x3, got {rot.shape}")
        if trans.shape != (rot.shape[0],):
            raise ValueError(f"translation must have length {rot.shape[0]}, got {trans.shape}")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def d(self) -> int:
        return self.rotation.shape[0]

    @classmethod
    def identity(cls, d: int) -> Pose:
        return cls(np.eye(d), np.zeros(d))

    def __matmul__(self, other: Pose) -> Pose:
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> Pose:
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def between(self, other: Pose) -> Pose:
        """``other`` expressed in the frame of ``self``."""
        return self.inverse() @ other

    def is_valid(self, tol: float = ROTATION_TOL) -> bool:
        return rotation_error(self.rotation) <= tol

    def matrix(self) -> np.ndarray:
        d = self.d
        out = np.eye(d + 1)
        out[:d, :d] = self.rotation
        out[:d, d] = self.translation
        return out


class NodeId(NamedTuple):
    robot: int
    index: int


class EdgeKind(enum.Enum):
    INTRA = "intra"
    INTER = "inter"


@dataclass(frozen=True)
class RelativeMeasurement:
    source: NodeId
    target: NodeId
    rotation: np.ndarray
    translation: np.ndarray
    kappa: float
    sigma: float
    kind: EdgeKind | None = None

    def __post_init__(self):
        object.__setattr__(self, "source", NodeId(*self.source))
        object.__setattr__(self, "target", NodeId(*self.target))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(-1))
        object.__setattr__(self, "kappa", float(self.kappa))
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.kind is None:
            kind = EdgeKind.INTRA if self.source.robot == self.target.robot else EdgeKind.INTER
            object.__setattr__(self, "kind", kind)

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.translation)

    def reversed(self) -> RelativeMeasurement:
        rt = self.rotation.T
        return RelativeMeasurement(
            self.target, self.source, rt, -rt @ self.translation, self.kappa, self.sigma, self.kind
        )

    def scaled(self, factor: float) -> RelativeMeasurement:
        return RelativeMeasurement(
            self.source, self.target, self.rotation, self.translation,
            self.kappa * factor, self.sigma * factor, self.kind,
        )


@dataclass
class MultiRobotGraph:
    """Pose graph partitioned over robots.

    ``initial`` holds the initial-guess poses (e.g. vertex values read from a
    g2o file); ``ground_truth`` is optional and only used for evaluation.
    """

    d: int
    poses_per_robot: list[int]
    edges: list[RelativeMeasurement] = field(default_factory=list)
    ground_truth: dict[NodeId, Pose] | None = None
    initial: dict[NodeId, Pose] | None = None

    def __post_init__(self):
        if self.d not in (2, 3):
            raise InvalidGraph(f"dimension must be 2 or 3, got {self.d}")
        self.poses_per_robot = [int(c) for c in self.poses_per_robot]
        self._offsets = np.concatenate([[0], np.cumsum(self.poses_per_robot)]).astype(int)

    @property
    def num_robots(self) -> int:
        return len(self.poses_per_robot)

    @property
    def n(self) -> int:
        return int(self._offsets[-1])

    def offset(self, robot: int) -> int:
        return int(self._offsets[robot])

    def __contains__(self, node) -> bool:
        robot, index = node
        return 0 <= robot < self.num_robots and 0 <= index < self.poses_per_robot[robot]

    def nodes(self) -> Iterator[NodeId]:
        for robot, count in enumerate(self.poses_per_robot):
            for k in range(count):
                yield NodeId(robot, k)

    def node_id(self, gidx: int) -> NodeId:
        if not 0 <= gidx < self.n:
            raise NodeNotFound(gidx)
        robot = int(np.searchsorted(self._offsets, gidx, side="right") - 1)
        return NodeId(robot, gidx - int(self._offsets[robot]))

    def robot_nodes(self, robot: int) -> range:
        """Global indices of one robot's poses."""
        return range(self.offset(robot), self.offset(robot + 1))

    def add_edge(self, edge: RelativeMeasurement) -> None:
        self.edges.append(edge)

    def with_edges(self, edges) -> MultiRobotGraph:
        return MultiRobotGraph(self.d, list(self.poses_per_robot), list(edges), self.ground_truth, self.initial)

    def edge_arrays(self):
        """Stacked edge data: ``(src, dst, rot (m,d,d), trans (m,d), kappa, sigma)``."""
        m, d = len(self.edges), self.d
        src = np.array([global_index(self, e.source) for e in self.edges], dtype=np.int64)
        dst = np.array([global_index(self, e.target) for e in self.edges], dtype=np.int64)
        rot = np.array([e.rotation for e in self.edges], dtype=float).reshape(m, d, d)
        trans = np.array([e.translation for e in self.edges], dtype=float).reshape(m, d)
        kappa = np.array([e.kappa for e in self.edges], dtype=float)
        sigma = np.array([e.sigma for e in self.edges], dtype=float)
        return src, dst, rot, trans, kappa, sigma


def global_index(graph: MultiRobotGraph, node) -> int:
    robot, index = node
    if (robot, index) not in graph:
        raise NodeNotFound(NodeId(robot, index))
    return graph.offset(robot) + index


def rendezvous_edges(graph: MultiRobotGraph) -> list[RelativeMeasurement]:
    return [e for e in graph.edges if e.kind is EdgeKind.INTER]


class ValidationReport:
    """List of invariant violations; empty means the graph is valid."""

    def __init__(self, violations=None):
        self.violations: list[str] = list(violations or [])

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def __contains__(self, text: str) -> bool:
        return any(text in v for v in self.violations)

    def __repr__(self):
        return f"ValidationReport({self.violations!r})"


def components(n: int, src, dst) -> np.ndarray:
    """Connected-component label per node of the undirected graph."""
    if n == 0:
        return np.zeros(0, dtype=int)
    adj = coo_matrix((np.ones(len(src)), (np.asarray(src), np.asarray(dst))), shape=(n, n))
    return connected_components(adj, directed=False)[1]


def validate(graph: MultiRobotGraph, allow_zero_sigma: bool = False,
             check_connectivity: bool = True) -> ValidationReport:
    """Collect every invariant violation.

    ``allow_zero_sigma`` admits rotation-only problems where translation
    weights are zeroed out on purpose. Connectivity is only needed for a
    unique gauge-fixed optimum and can be skipped.
    """
    issues = []
    d = graph.d
    src, dst = [], []
    for k, e in enumerate(graph.edges):
        tag = f"edge {k} {tuple(e.source)}->{tuple(e.target)}"
        missing = [nd for nd in (e.source, e.target) if nd not in graph]
        for nd in missing:
            issues.append(f"{tag}: missing node {tuple(nd)}")
        if e.source == e.target:
            issues.append(f"{tag}: self-loop")
        if e.rotation.shape != (d, d) or e.translation.shape != (d,):
            issues.append(f"{tag}: dimension mismatch (graph d={d})")
        elif rotation_error(e.rotation) > ROTATION_TOL:
            issues.append(f"{tag}: measurement rotation not in SO({d})")
        if not e.kappa > 0:
            issues.append(f"{tag}: nonpositive weight kappa={e.kappa}")
        if not (e.sigma > 0 or (allow_zero_sigma and e.sigma == 0)):
            issues.append(f"{tag}: nonpositive weight sigma={e.sigma}")
        expected = EdgeKind.INTRA if e.source.robot == e.target.robot else EdgeKind.INTER
        if e.kind is not expected:
            issues.append(f"{tag}: kind {e.kind.value} inconsistent with robots")
        if not missing:
            src.append(global_index(graph, e.source))
            dst.append(global_index(graph, e.target))
    for label, poses in (("ground truth", graph.ground_truth), ("initial", graph.initial)):
        for node, pose in (poses or {}).items():
            if node not in graph:
                issues.append(f"{label} pose for missing node {tuple(node)}")
            elif pose.d != d:
                issues.append(f"{label} pose {tuple(node)}: dimension mismatch")
            elif not pose.is_valid():
                issues.append(f"{label} pose {tuple(node)}: rotation not in SO({d})")
    if check_connectivity and graph.n > 1:
        ncomp = len(np.unique(components(graph.n, src, dst)))
        if ncomp > 1:
            issues.append(f"graph disconnected: {ncomp} components")
    return ValidationReport(issues)


def require_valid(graph: MultiRobotGraph, allow_zero_sigma: bool = False) -> None:
    report = validate(graph, allow_zero_sigma=allow_zero_sigma)
    if not report.ok:
        raise InvalidGraph("; ".join(report.violations))
