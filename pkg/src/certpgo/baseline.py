"""Comparison methods: one-time rendezvous alignment and local-search PGO, plus ATE metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .errors import InsufficientMatches, KeyMismatch
from .geometry import exp_so
from .graph import EdgeKind, MultiRobotGraph, NodeId, Pose, global_index, rendezvous_edges

log = logging.getLogger(__name__)


def rendezvous_align(pairs) -> Pose:
    """Rigid transform ``T`` that best maps each ``a`` pose onto its matched ``b`` pose.

    Minimizes ``sum_k ||R R_a - R_b||_F^2 + ||R t_a + t - t_b||^2``, i.e. the
    chordal distance between ``T * T_a`` and ``T_b`` (equivalently of
    ``T * T_a * T_b^-1`` from the identity in rotation). A single pair gives
    exactly ``T = T_b * T_a^-1``.
    """
    pairs = list(pairs)
    if not pairs:
        raise InsufficientMatches("need at least one matched pose pair")
    rot_a = np.array([a.rotation for a, _ in pairs])
    rot_b = np.array([b.rotation for _, b in pairs])
    ta = np.array([a.translation for a, _ in pairs])
    tb = np.array([b.translation for _, b in pairs])
    ca, cb = ta.mean(axis=0), tb.mean(axis=0)
    m = np.einsum("kij,klj->il", rot_b, rot_a) + (tb - cb).T @ (ta - ca)
    u, _, vt = np.linalg.svd(m)
    fix = np.eye(m.shape[0])
    fix[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ fix @ vt
    return Pose(rot, cb - rot @ ca)


def alignment_residual(transform: Pose, pairs) -> float:
    total = 0.0
    for a, b in pairs:
        moved = transform @ a
        total += np.sum((moved.rotation - b.rotation) ** 2) + np.sum((moved.translation - b.translation) ** 2)
    return float(total)


def odometry_guess(graph: MultiRobotGraph, starts: dict[int, Pose] | None = None) -> dict[NodeId, Pose]:
    """Per-robot dead reckoning along consecutive-index intra edges.

    Each robot starts at ``starts[robot]`` (identity by default); a pose
    without an incoming odometry edge repeats its predecessor.
    """
    odo = {}
    for e in graph.edges:
        if e.kind is EdgeKind.INTRA and e.target.index == e.source.index + 1:
            odo.setdefault(e.source, e.pose)
        elif e.kind is EdgeKind.INTRA and e.source.index == e.target.index + 1:
            odo.setdefault(e.target, e.pose.inverse())
    out = {}
    for robot, count in enumerate(graph.poses_per_robot):
        cur = (starts or {}).get(robot, Pose.identity(graph.d))
        for k in range(count):
            node = NodeId(robot, k)
            out[node] = cur
            step = odo.get(node)
            if step is not None:
                cur = cur @ step
    return out


def one_time_fusion(graph: MultiRobotGraph) -> dict[NodeId, Pose]:
    """Odometry per robot, merged into robot 0's frame from the first rendezvous only.

    Robots are attached in turn through the earliest (insertion-order)
    inter-robot edge joining them to an already placed robot; every later
    inter-robot edge is ignored.
    """
    inter = rendezvous_edges(graph)
    if not inter:
        raise InsufficientMatches("one-time fusion needs at least one inter-robot edge")
    local = odometry_guess(graph)
    frames = {0: Pose.identity(graph.d)}
    while len(frames) < graph.num_robots:
        for e in inter:
            a, b = e.source.robot, e.target.robot
            if (a in frames) == (b in frames):
                continue
            if a in frames:
                placed, new, meas = e.source, e.target, e.pose
            else:
                placed, new, meas = e.target, e.source, e.pose.inverse()
            predicted = frames[placed.robot] @ local[placed] @ meas
            frames[new.robot] = rendezvous_align([(local[new], predicted)])
            break
        else:
            raise InsufficientMatches("inter-robot edges do not connect every robot")
    return {node: frames[node.robot] @ pose for node, pose in local.items()}


# ---------------------------------------------------------------------------
# local search


def _pose_arrays(graph: MultiRobotGraph, poses):
    rot = np.array([poses[node].rotation for node in graph.nodes()])
    trans = np.array([poses[node].translation for node in graph.nodes()])
    return rot, trans


def pose_cost(graph: MultiRobotGraph, poses: dict[NodeId, Pose]) -> float:
    """Weighted chordal objective evaluated directly on SE(d) poses."""
    if not graph.edges:
        return 0.0
    rot, trans = _pose_arrays(graph, poses)
    src, dst, mrot, mtrans, kappa, sigma = graph.edge_arrays()
    res, _, _ = kernels.se_jacobians(rot[src], rot[dst], trans[src], trans[dst], mrot, mtrans,
                                     np.sqrt(kappa), np.sqrt(sigma))
    return float(np.sum(res * res))


@dataclass
class LocalSearchResult:
    poses: dict[NodeId, Pose]
    converged: bool
    iterations: int = 0
    costs: list = field(default_factory=list)

    def __iter__(self):
        yield self.poses
        yield self.converged


def _model_decrease(hess, diag, grad) -> float:
    # largest decrease of f = |r|^2 promised by the undamped Gauss-Newton model
    try:
        step = splu((hess + sp.diags(1e-12 * np.maximum(diag, 1e-12))).tocsc()).solve(grad)
    except RuntimeError:
        return np.inf
    return 2.0 * float(grad @ step)


def gauss_newton_pgo(graph: MultiRobotGraph, init: dict[NodeId, Pose], max_iters: int = 100,
                     damping: float = 1e-6, damping_factor: float = 10.0, max_damping: float = 1e12,
                     anchor: NodeId = NodeId(0, 0)) -> LocalSearchResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) on SE(d), ``anchor`` held fixed.

    Rotations move by right-multiplied exponential-map increments. Steps that
    do not lower the cost are rejected and the damping grows, so the accepted
    cost sequence is non-increasing.
    """
    d = graph.d
    q = 1 if d == 2 else 3
    s = q + d
    n = graph.n
    rot, trans = _pose_arrays(graph, init)
    src, dst, mrot, mtrans, kappa, sigma = graph.edge_arrays()
    sqk, sqs = np.sqrt(kappa), np.sqrt(sigma)
    m = len(src)
    nr = d * d + d
    fixed = global_index(graph, anchor)
    free_cols = np.array([c for c in range(n * s) if c // s != fixed])
    col_map = -np.ones(n * s, dtype=np.int64)
    col_map[free_cols] = np.arange(len(free_cols))
    rows = np.broadcast_to(np.arange(m * nr).reshape(m, nr, 1), (m, nr, s))
    cols_i = np.broadcast_to((src * s)[:, None, None] + np.arange(s), (m, nr, s))
    cols_j = np.broadcast_to((dst * s)[:, None, None] + np.arange(s), (m, nr, s))

    def evaluate(rot, trans):
        res, ji, jj = kernels.se_jacobians(rot[src], rot[dst], trans[src], trans[dst], mrot, mtrans, sqk, sqs)
        return res.ravel(), ji, jj

    res, ji, jj = evaluate(rot, trans)
    f = float(res @ res)
    costs = [f]
    lam = damping
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        vals = np.concatenate([ji.ravel(), jj.ravel()])
        cc = col_map[np.concatenate([cols_i.ravel(), cols_j.ravel()])]
        rr = np.concatenate([rows.ravel(), rows.ravel()])
        keep = cc >= 0
        jac = sp.csr_matrix((vals[keep], (rr[keep], cc[keep])), shape=(m * nr, len(free_cols)))
        grad = jac.T @ res
        hess = (jac.T @ jac).tocsc()
        diag = hess.diagonal()
        # second test: no step can lower the cost by a resolvable amount
        if 2.0 * np.linalg.norm(grad) <= 1e-8 * (1.0 + f) or _model_decrease(hess, diag, grad) <= 1e-12 * (1.0 + f):
            converged = True
            it -= 1
            break
        accepted = False
        while lam <= max_damping:
            try:
                step = -splu((hess + sp.diags(lam * np.maximum(diag, 1e-12))).tocsc()).solve(grad)
            except RuntimeError:
                lam *= damping_factor
                continue
            full = np.zeros(n * s)
            full[free_cols] = step
            full = full.reshape(n, s)
            new_rot = np.array([rot[i] @ exp_so(d, full[i, :q]) for i in range(n)])
            new_trans = trans + full[:, q:]
            res_n, ji_n, jj_n = evaluate(new_rot, new_trans)
            f_n = float(res_n @ res_n)
            if f_n < f:
                rot, trans, res, ji, jj, f = new_rot, new_trans, res_n, ji_n, jj_n, f_n
                lam = max(lam / damping_factor, 1e-15)
                accepted = True
                break
            lam *= damping_factor
        costs.append(f)
        if not accepted:
            log.debug("gauss_newton_pgo: damping exceeded %g at iteration %d", max_damping, it)
            break
    poses = {node: Pose(rot[i], trans[i]) for i, node in enumerate(graph.nodes())}
    return LocalSearchResult(poses, converged, it, costs)


# ---------------------------------------------------------------------------
# metrics


def rigid_align(est: np.ndarray, ref: np.ndarray):
    """Rotation and translation (no scale) minimizing ``sum ||R est_k + t - ref_k||^2``."""
    ce, cr = est.mean(axis=0), ref.mean(axis=0)
    h = (ref - cr).T @ (est - ce)
    u, _, vt = np.linalg.svd(h)
    fix = np.eye(h.shape[0])
    fix[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    rot = u @ fix @ vt
    return rot, cr - rot @ ce


def ate_rmse(estimate: dict[NodeId, Pose], truth: dict[NodeId, Pose], per_robot: bool = True,
             align: bool = True) -> list[float]:
    """Translational RMSE after one global rigid alignment of estimate onto truth.

    With ``per_robot`` the RMSE is reported separately for each robot (sorted
    by robot id) under the shared alignment; otherwise one overall value.
    """
    if set(estimate) != set(truth):
        raise KeyMismatch("estimate and ground truth cover different nodes")
    keys = sorted(truth)
    est = np.array([estimate[k].translation for k in keys])
    ref = np.array([truth[k].translation for k in keys])
    if align and len(keys):
        rot, t = rigid_align(est, ref)
        est = est @ rot.T + t
    err2 = np.sum((est - ref) ** 2, axis=1)
    if not per_robot:
        return [float(np.sqrt(err2.mean()))] if len(keys) else [0.0]
    robots = np.array([k.robot for k in keys])
    return [float(np.sqrt(err2[robots == r].mean())) for r in sorted(set(robots.tolist()))]


def improvement_percent(baseline: float, ours: float) -> float:
    """Relative RMSE reduction ``(baseline - ours) / baseline`` in percent, one decimal."""
    if baseline == 0:
        return 0.0
    return round(100.0 * (baseline - ours) / baseline, 1)
