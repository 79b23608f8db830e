"""Connection Laplacian of the joint pose-graph objective and its lifted form.

Column layout of the lifted variable ``X`` (``r`` rows): node ``i`` owns
columns ``(d+1)*i ... (d+1)*i + d - 1`` for its frame ``Y_i`` (r x d, orthonormal
columns) followed by one column for its lifted translation ``p_i``. Nodes are
ordered by global index, so each robot owns a contiguous column range.

With this layout ``trace(X L X^T)`` equals the weighted sum over edges of
``kappa ||Y_j - Y_i R_ij||_F^2 + sigma ||p_j - p_i - Y_i t_ij||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DimensionMismatch, InvalidGraph
from .graph import MultiRobotGraph, validate


def node_columns(nodes, d: int) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    return ((d + 1) * nodes[:, None] + np.arange(d + 1)).ravel()


@dataclass
class ConnectionLaplacian:
    matrix: sp.csr_matrix
    d: int
    n: int
    robot_offsets: np.ndarray  # node offsets per robot, length num_robots + 1
    src: np.ndarray
    dst: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return (self.d + 1) * self.n

    @property
    def num_robots(self) -> int:
        return len(self.robot_offsets) - 1

    def robot_of(self, nodes) -> np.ndarray:
        return np.searchsorted(self.robot_offsets, nodes, side="right") - 1

    def robot_columns(self, robot: int) -> slice:
        k = self.d + 1
        return slice(k * int(self.robot_offsets[robot]), k * int(self.robot_offsets[robot + 1]))

    def inf_norm(self) -> float:
        return float(abs(self.matrix).sum(axis=1).max()) if self.matrix.nnz else 0.0

    def scaled(self, factor: float) -> ConnectionLaplacian:
        return ConnectionLaplacian(
            (self.matrix * factor).tocsr(), self.d, self.n, self.robot_offsets,
            self.src, self.dst, self.sigma * factor,
        )

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass
class LiftedState:
    """Rank-r lifted variables, stored as one ``r x (d+1)n`` matrix."""

    X: np.ndarray
    d: int

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] % (self.d + 1):
            raise DimensionMismatch(f"state shape {self.X.shape} incompatible with d={self.d}")

    @property
    def r(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1] // (self.d + 1)

    def frames(self) -> np.ndarray:
        """Stacked frames, shape ``(n, r, d)``."""
        return split_blocks(self.X, self.d)[0]

    def translations(self) -> np.ndarray:
        """Stacked lifted translations, shape ``(n, r)``."""
        return split_blocks(self.X, self.d)[1]

    def copy(self) -> LiftedState:
        return LiftedState(self.X.copy(), self.d)

    def feasibility_error(self) -> float:
        y = self.frames()
        if not len(y):
            return 0.0
        gram = np.einsum("nrd,nre->nde", y, y)
        return float(np.max(np.abs(gram - np.eye(self.d))))


def split_blocks(x: np.ndarray, d: int):
    r = x.shape[0]
    x3 = x.reshape(r, -1, d + 1)
    y = np.ascontiguousarray(x3[:, :, :d].transpose(1, 0, 2))
    p = np.ascontiguousarray(x3[:, :, d].T)
    return y, p


def join_blocks(y: np.ndarray, p: np.ndarray) -> np.ndarray:
    n, r, d = y.shape
    x3 = np.empty((r, n, d + 1))
    x3[:, :, :d] = y.transpose(1, 0, 2)
    x3[:, :, d] = p.T
    return x3.reshape(r, n * (d + 1))


def assemble(graph: MultiRobotGraph) -> ConnectionLaplacian:
    """Edge-additive assembly ``L = sum_e A_e^T W_e A_e``."""
    report = validate(graph, allow_zero_sigma=True, check_connectivity=False)
    if not report.ok:
        raise InvalidGraph("; ".join(report.violations))
    d, n = graph.d, graph.n
    dim = (d + 1) * n
    offsets = np.concatenate([[0], np.cumsum(graph.poses_per_robot)]).astype(np.int64)
    if not graph.edges:
        mat = sp.csr_matrix((dim, dim))
        empty = np.zeros(0, dtype=np.int64)
        return ConnectionLaplacian(mat, d, n, offsets, empty, empty, np.zeros(0))
    src, dst, rot, trans, kappa, sigma = graph.edge_arrays()
    local = kernels.edge_matrices(rot, trans, kappa, sigma)
    k = d + 1
    idx = np.concatenate([k * src[:, None] + np.arange(k), k * dst[:, None] + np.arange(k)], axis=1)
    rows = np.broadcast_to(idx[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(idx[:, None, :], local.shape).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(dim, dim)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    # exact symmetry; per-edge blocks are symmetric up to rounding of the kernels
    mat = ((mat + mat.T) * 0.5).tocsr()
    return ConnectionLaplacian(mat, d, n, offsets, src, dst, sigma)


def _check(L: ConnectionLaplacian, state: LiftedState):
    if state.d != L.d or state.X.shape[1] != L.dim:
        raise DimensionMismatch(f"state has {state.X.shape[1]} columns, Laplacian has {L.dim}")


def times_laplacian(L: ConnectionLaplacian, x: np.ndarray) -> np.ndarray:
    """``x @ L`` for a dense ``x`` with ``(d+1)n`` columns."""
    return np.asarray((L.matrix @ x.T).T)


def cost(L: ConnectionLaplacian, state: LiftedState) -> float:
    _check(L, state)
    return float(np.sum(state.X * times_laplacian(L, state.X)))


def euclidean_gradient(L: ConnectionLaplacian, state: LiftedState) -> np.ndarray:
    _check(L, state)
    return 2.0 * times_laplacian(L, state.X)


def project_tangent(x: np.ndarray, z: np.ndarray, d: int) -> np.ndarray:
    """Project an ambient direction ``z`` onto the tangent space at ``x``."""
    y, _ = split_blocks(x, d)
    zy, zp = split_blocks(z, d)
    return join_blocks(kernels.tangent_project(y, zy), zp)


def riemannian_gradient(L: ConnectionLaplacian, state: LiftedState) -> np.ndarray:
    return project_tangent(state.X, euclidean_gradient(L, state), state.d)


def retract(x: np.ndarray, step: np.ndarray, d: int) -> np.ndarray:
    """QR retraction on the frames, plain addition on translations."""
    y, p = split_blocks(x + step, d)
    return join_blocks(kernels.qr_retract(y), p)


@dataclass
class BlockCoupling:
    """Off-diagonal Laplacian block between separator poses of two robots."""

    neighbor: int
    own_nodes: np.ndarray  # global indices of this robot's separator poses
    neighbor_nodes: np.ndarray  # global indices of the neighbor's separator poses
    matrix: sp.csr_matrix  # rows: own separator columns, cols: neighbor separator columns


def block_submatrices(L: ConnectionLaplacian, robot: int):
    """Principal block of one robot and its coupling blocks, keyed by neighbor."""
    cols = L.robot_columns(robot)
    l_bb = L.matrix[cols, cols].tocsr()
    rob_src, rob_dst = L.robot_of(L.src), L.robot_of(L.dst)
    coupling = {}
    for other in range(L.num_robots):
        if other == robot:
            continue
        fwd = (rob_src == robot) & (rob_dst == other)
        bwd = (rob_dst == robot) & (rob_src == other)
        if not (fwd.any() or bwd.any()):
            continue
        own = np.unique(np.concatenate([L.src[fwd], L.dst[bwd]]))
        theirs = np.unique(np.concatenate([L.dst[fwd], L.src[bwd]]))
        mat = L.matrix[node_columns(own, L.d)][:, node_columns(theirs, L.d)].tocsr()
        coupling[other] = BlockCoupling(other, own, theirs, mat)
    return l_bb, coupling
