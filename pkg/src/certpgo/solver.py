"""Riemannian block-coordinate descent on the lifted pose-graph problem.

One block is one robot's full trajectory. A block update minimizes the
objective over that robot's columns of ``X`` with all other columns frozen:

    f_b(X_b) = tr(X_b L_bb X_b^T) + 2 <X_b, E>,   E = X_rest L_rest,b

so it only needs ``L_bb``, the coupling blocks and the neighbors' separator
columns (``E`` is nonzero only on separator poses). Two inner solvers are
available: ``"trust_region"`` (default, preconditioned truncated-CG
Riemannian trust region) and ``"gradient"`` (retracted gradient steps of size
``1 / (2 lambda_max(L_bb))`` with Armijo backtracking).
"""

from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import kernels
from .errors import RankLimitReached
from .graph import MultiRobotGraph, NodeId, Pose, global_index
from .quadratic import (
    ConnectionLaplacian,
    LiftedState,
    assemble,
    block_submatrices,
    cost,
    join_blocks,
    project_tangent,
    retract,
    riemannian_gradient,
    split_blocks,
)

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4


class BlockRule(str, enum.Enum):
    ROUND_ROBIN = "round_robin"
    GREEDY_GRADIENT = "greedy_gradient"


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_SWEEPS = "max_sweeps"
    ESCAPED_RANK_LIMIT = "escaped_rank_limit"


@dataclass
class SolverOptions:
    r_init: int | None = None  # default d + 1
    r_max: int | None = None  # default d + 4
    grad_tol: float | None = None  # default 1e-6 * (1 + current cost)
    max_sweeps: int = 1000
    inner_steps: int = 5
    block_rule: BlockRule = BlockRule.ROUND_ROBIN
    inner_solver: str = "trust_region"
    seed: int = 0

    def __post_init__(self):
        self.block_rule = BlockRule(self.block_rule)
        if self.inner_solver not in ("trust_region", "gradient"):
            raise ValueError(f"unknown inner solver {self.inner_solver!r}")
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.max_sweeps < 0 or self.inner_steps < 1:
            raise ValueError("max_sweeps must be >= 0 and inner_steps >= 1")

    def ranks(self, d: int) -> tuple[int, int]:
        r0 = self.r_init if self.r_init is not None else d + 1
        rmax = self.r_max if self.r_max is not None else d + 4
        if not d <= r0 <= rmax:
            raise ValueError(f"need d <= r_init <= r_max, got {d}, {r0}, {rmax}")
        return r0, rmax

    def tolerance(self, current_cost: float) -> float:
        if self.grad_tol is not None:
            return self.grad_tol
        return 1e-6 * (1.0 + current_cost)


@dataclass
class SolveTrace:
    costs: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    ranks: list[int] = field(default_factory=list)
    termination: Termination | None = None
    null_steps: int = 0
    block_updates: int = 0

    @property
    def sweeps(self) -> int:
        return max(len(self.costs) - 1, 0)

    def record(self, f: float, g: float, r: int):
        self.costs.append(float(f))
        self.grad_norms.append(float(g))
        self.ranks.append(int(r))

    def extend(self, other: SolveTrace):
        self.costs += other.costs
        self.grad_norms += other.grad_norms
        self.ranks += other.ranks
        self.null_steps += other.null_steps
        self.block_updates += other.block_updates
        self.termination = other.termination


# ---------------------------------------------------------------------------
# initialization


def embed(poses: dict[NodeId, Pose], graph: MultiRobotGraph, r: int) -> LiftedState:
    d = graph.d
    if r < d:
        raise ValueError(f"rank {r} below dimension {d}")
    y = np.zeros((graph.n, r, d))
    p = np.zeros((graph.n, r))
    for node in graph.nodes():
        i = global_index(graph, node)
        y[i, :d] = poses[node].rotation
        p[i, :d] = poses[node].translation
    return LiftedState(join_blocks(y, p), d)


def spanning_tree_poses(graph: MultiRobotGraph, root: NodeId = NodeId(0, 0)) -> dict[NodeId, Pose]:
    """Compose measurements along a breadth-first tree rooted at ``root``."""
    adj: dict[NodeId, list] = {}
    for e in graph.edges:
        adj.setdefault(e.source, []).append((e.target, e))
        adj.setdefault(e.target, []).append((e.source, e))
    poses = {root: Pose.identity(graph.d)}
    queue = deque([root])
    while queue:
        node = queue.popleft()
        for other, e in adj.get(node, []):
            if other in poses:
                continue
            rel = e.pose if e.source == node else e.pose.inverse()
            poses[other] = poses[node] @ rel
            queue.append(other)
    for node in graph.nodes():
        poses.setdefault(node, Pose.identity(graph.d))
    return poses


def random_state(graph: MultiRobotGraph, r: int, seed: int) -> LiftedState:
    rng = np.random.default_rng(seed)
    y = kernels.qr_retract(rng.normal(size=(graph.n, r, graph.d)))
    p = rng.normal(size=(graph.n, r))
    return LiftedState(join_blocks(y, p), graph.d)


def initialize(graph: MultiRobotGraph, strategy="spanning_tree", r: int | None = None, seed: int = 0) -> LiftedState:
    """Initial lifted state.

    ``strategy`` is ``"spanning_tree"``, ``"random"`` or a mapping
    ``NodeId -> Pose`` (the "given" strategy). Poses are embedded at rank
    ``r`` by zero padding.
    """
    r = graph.d + 1 if r is None else r
    if isinstance(strategy, dict):
        return embed(strategy, graph, r)
    strategy = str(strategy).replace("-", "_")
    if strategy == "spanning_tree":
        return embed(spanning_tree_poses(graph), graph, r)
    if strategy == "random":
        return random_state(graph, r, seed)
    raise ValueError(f"unknown initialization strategy {strategy!r}")


# ---------------------------------------------------------------------------
# block subproblem


def _power_lambda_max(mat: sp.csr_matrix, iters: int = 30) -> float:
    if mat.shape[0] == 0 or mat.nnz == 0:
        return 0.0
    gersh = float(abs(mat).sum(axis=1).max())
    v = np.cos(np.arange(mat.shape[0]) + 1.0)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = mat @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        lam = float(v @ w)
        v = w / nrm
    # the Rayleigh quotient underestimates; pad it and never exceed Gershgorin
    return min(gersh, 1.05 * lam + 1e-12 * gersh)


class BlockData:
    """Per-robot constant data for block updates (owned by one agent in netsim)."""

    def __init__(self, l_bb: sp.csr_matrix, d: int, robot: int = 0):
        self.robot = robot
        self.l_bb = l_bb.tocsr()
        self.d = d
        self.lam_max = _power_lambda_max(self.l_bb)
        scale = max(self.lam_max, 1.0)
        precond = (2.0 * self.l_bb + 1e-8 * scale * sp.identity(l_bb.shape[0])).tocsc()
        self._lu = splu(precond) if l_bb.shape[0] else None
        self.radius: float | None = None
        self.relax = RelaxationState()

    @property
    def m(self) -> int:
        return self.l_bb.shape[0] // (self.d + 1)

    def times_lbb(self, x: np.ndarray) -> np.ndarray:
        return np.asarray((self.l_bb @ x.T).T)

    def objective(self, xb: np.ndarray, ext: np.ndarray):
        xl = self.times_lbb(xb)
        return float(np.sum(xb * xl) + 2.0 * np.sum(xb * ext)), xl

    def precondition(self, xb: np.ndarray, v: np.ndarray) -> np.ndarray:
        z = self._lu.solve(np.ascontiguousarray(v.T)).T
        return project_tangent(xb, z, self.d)


@dataclass
class RelaxationState:
    """Local over-relaxation factor for one block.

    Adapted from the block's own contraction history (gradient norm at entry
    of successive updates), so agents need no global information. After
    ``window`` updates at factor ``w`` with observed contraction ``lam``, the
    two-block Gauss-Seidel/SOR eigenvalue relation
    ``(lam + w - 1)^2 = lam w^2 mu^2`` gives the Jacobi radius ``mu`` and the
    factor is raised towards ``2 / (1 + sqrt(1 - mu^2))``.
    """

    mode: str | float = "adaptive"
    window: int = 12
    omega: float = 1.0
    max_omega: float = 1.95
    entry_norms: list = field(default_factory=list)
    rejected: int = 0

    def observe(self, gnorm: float):
        if self.mode != "adaptive":
            self.omega = float(self.mode)
            return
        self.entry_norms.append(gnorm)
        if len(self.entry_norms) < self.window or self.rejected >= 3:
            return
        span = self.window // 2
        old, new = self.entry_norms[-1 - span], self.entry_norms[-1]
        self.entry_norms.clear()
        if not (old > 0 and new > 0):
            return
        lam = (new / old) ** (1.0 / span)
        if not 0.3 < lam < 1.0:
            return
        w = self.omega
        mu2 = min((lam + w - 1.0) ** 2 / (lam * w * w), 1.0 - 1e-8)
        target = 2.0 / (1.0 + np.sqrt(1.0 - mu2))
        if target > w + 0.01:
            self.omega = float(min(target, self.max_omega))

    def reject(self):
        # a relaxed step failed the safeguard: fall back and re-estimate later
        self.omega = 1.0
        self.rejected += 1
        self.entry_norms.clear()


@dataclass
class BlockResult:
    x: np.ndarray
    decrease: float  # objective decrease, computed from the step (no cancellation)
    grad_norm: float
    null_step: bool = False


def _inner(a, b):
    return float(np.sum(a * b))


def _hessian_op(blk: BlockData, xb, egrad):
    d = blk.d
    y, _ = split_blocks(xb, d)
    gy, _ = split_blocks(egrad, d)
    lam = np.einsum("nrd,nre->nde", y, gy)
    lam = 0.5 * (lam + lam.transpose(0, 2, 1))

    def hess(eta):
        h = 2.0 * blk.times_lbb(eta)
        hy, hp = split_blocks(h, d)
        ey, _ = split_blocks(eta, d)
        hy = kernels.tangent_project(y, hy - np.einsum("nrd,nde->nre", ey, lam))
        return join_blocks(hy, hp)

    return hess


def _truncated_cg(blk: BlockData, xb, grad, hess, radius, max_inner):
    """Steihaug-Toint truncated CG in the preconditioner norm."""
    eta = np.zeros_like(grad)
    heta = np.zeros_like(grad)
    res = grad.copy()
    z = blk.precondition(xb, res)
    z_r = _inner(z, res)
    d_pd = z_r
    delta = -z
    e_pe = 0.0
    e_pd = 0.0
    r0 = np.sqrt(_inner(res, res))
    hit_boundary = False
    for _ in range(max_inner):
        hdelta = hess(delta)
        d_hd = _inner(delta, hdelta)
        alpha = z_r / d_hd if d_hd != 0 else np.inf
        e_pe_new = e_pe + 2.0 * alpha * e_pd + alpha * alpha * d_pd
        if d_hd <= 0 or e_pe_new >= radius * radius:
            tau = (-e_pd + np.sqrt(max(e_pd * e_pd + d_pd * (radius * radius - e_pe), 0.0))) / d_pd
            eta = eta + tau * delta
            heta = heta + tau * hdelta
            hit_boundary = True
            break
        e_pe = e_pe_new
        eta = eta + alpha * delta
        heta = heta + alpha * hdelta
        res = res + alpha * hdelta
        r_norm = np.sqrt(_inner(res, res))
        if r_norm <= 0.1 * r0:
            break
        z = blk.precondition(xb, res)
        z_r_old, z_r = z_r, _inner(z, res)
        beta = z_r / z_r_old
        delta = project_tangent(xb, -z + beta * delta, blk.d)
        e_pd = beta * (e_pd + alpha * d_pd)
        d_pd = z_r + beta * beta * d_pd
    return eta, heta, hit_boundary


def _decrease(blk: BlockData, x: np.ndarray, cand: np.ndarray, egrad: np.ndarray) -> float:
    """``f(x) - f(cand)`` for the quadratic block objective, both points feasible.

    The normal part ``Y Lambda`` of the Euclidean gradient is large near
    optimality while the step is small, so ``<step, egrad>`` is split into the
    tangent gradient term plus ``-1/2 <step_Y^T step_Y, Lambda>``, which uses
    ``sym(Y^T step_Y) = -1/2 step_Y^T step_Y`` for orthonormal ``Y`` and ``Y + step_Y``.
    """
    d = blk.d
    step = cand - x
    y, _ = split_blocks(x, d)
    gy, _ = split_blocks(egrad, d)
    sy, _ = split_blocks(step, d)
    lam = np.einsum("nrd,nre->nde", y, gy)
    lam = 0.5 * (lam + lam.transpose(0, 2, 1))
    grad = project_tangent(x, egrad, d)
    normal = -0.5 * float(np.einsum("nrd,nre,nde->", sy, sy, lam))
    return -(_inner(step, grad) + normal + _inner(step, blk.times_lbb(step)))


def block_step(blk: BlockData, xb: np.ndarray, ext: np.ndarray, inner_steps: int = 5,
               method: str = "trust_region", tol: float = 0.0, relax: bool = True) -> BlockResult:
    """Improve one block with the others frozen (``ext`` carries their influence)."""
    d = blk.d
    x = xb
    egrad = 2.0 * (blk.times_lbb(x) + ext)
    grad = project_tangent(x, egrad, d)
    gnorm = np.sqrt(_inner(grad, grad))
    if gnorm <= tol or gnorm == 0.0:
        return BlockResult(xb, 0.0, gnorm)
    if relax:
        blk.relax.observe(gnorm)
    dim = x.size
    radius_max = np.sqrt(dim) * max(1.0, np.sqrt(np.sum(x * x) / max(blk.m, 1)))
    if blk.radius is None:
        blk.radius = radius_max / 8.0
    total = 0.0
    moved = False
    for _ in range(inner_steps):
        if gnorm <= tol:
            break
        if method == "trust_region":
            hess = _hessian_op(blk, x, egrad)
            eta, heta, boundary = _truncated_cg(blk, x, grad, hess, blk.radius, max_inner=min(dim, 200))
            cand = retract(x, eta, d)
            dec = _decrease(blk, x, cand, egrad)
            model = -(_inner(grad, eta) + 0.5 * _inner(eta, heta))
            rho = dec / model if model > 0 else -1.0
            if rho < 0.25:
                blk.radius /= 4.0
            elif rho > 0.75 and boundary:
                blk.radius = min(2.0 * blk.radius, radius_max)
            if not (rho > 0.1 and dec > 0):
                continue
        else:
            step = 1.0 / (2.0 * blk.lam_max) if blk.lam_max > 0 else 1.0
            for _ in range(40):
                cand = retract(x, -step * grad, d)
                dec = _decrease(blk, x, cand, egrad)
                if dec >= ARMIJO_C * step * gnorm * gnorm and dec > 0:
                    break
                step *= 0.5
            else:
                break
        x = cand
        total += dec
        moved = True
        egrad = 2.0 * (blk.times_lbb(x) + ext)
        grad = project_tangent(x, egrad, d)
        gnorm = np.sqrt(_inner(grad, grad))
    if not moved and method == "trust_region":
        # trust region made no progress: fall back to one Armijo gradient step
        return block_step(blk, xb, ext, 1, "gradient", tol, relax=False)
    omega = blk.relax.omega if relax else 1.0
    if moved and omega > 1.0:
        egrad0 = 2.0 * (blk.times_lbb(xb) + ext)
        cand = retract(xb, omega * (x - xb), d)
        dec = _decrease(blk, xb, cand, egrad0)
        # quadratic model: a relaxed exact step keeps (2w - w^2) of the plain decrease
        if dec >= 0.5 * (2.0 * omega - omega * omega) * total and dec > 0:
            egrad = 2.0 * (blk.times_lbb(cand) + ext)
            grad = project_tangent(cand, egrad, d)
            return BlockResult(cand, dec, float(np.sqrt(_inner(grad, grad))))
        blk.relax.reject()
    return BlockResult(x, total, float(gnorm), null_step=not moved)


# ---------------------------------------------------------------------------
# centralized sweeps


class BlockSolver:
    """Centralized RBCD driver; holds per-robot block data for one Laplacian."""

    def __init__(self, L: ConnectionLaplacian):
        self.L = L
        self.blocks = []
        self.couplings = []
        self._rows = []
        for robot in range(L.num_robots):
            l_bb, coupling = block_submatrices(L, robot)
            self.blocks.append(BlockData(l_bb, L.d, robot))
            self.couplings.append(coupling)
            self._rows.append(L.matrix[L.robot_columns(robot), :].tocsr())

    def external_term(self, x: np.ndarray, robot: int) -> np.ndarray:
        cols = self.L.robot_columns(robot)
        xl = np.asarray((self._rows[robot] @ x.T).T)
        return xl - self.blocks[robot].times_lbb(x[:, cols])

    def block_gradient_norms(self, x: np.ndarray) -> np.ndarray:
        g = riemannian_gradient(self.L, LiftedState(x, self.L.d))
        return np.array([np.linalg.norm(g[:, self.L.robot_columns(b)]) for b in range(self.L.num_robots)])

    def update(self, x: np.ndarray, robot: int, options: SolverOptions, tol: float = 0.0) -> BlockResult:
        cols = self.L.robot_columns(robot)
        ext = self.external_term(x, robot)
        return block_step(self.blocks[robot], x[:, cols], ext, options.inner_steps, options.inner_solver, tol)


def block_update(L: ConnectionLaplacian, state: LiftedState, robot: int, options: SolverOptions | None = None,
                 solver: BlockSolver | None = None) -> LiftedState:
    """One block update; only ``robot``'s columns change."""
    options = options or SolverOptions()
    solver = solver or BlockSolver(L)
    res = solver.update(state.X, robot, options)
    x = state.X.copy()
    x[:, L.robot_columns(robot)] = res.x
    return LiftedState(x, state.d)


def solve(graph: MultiRobotGraph | None, options: SolverOptions | None = None, init="spanning_tree",
          L: ConnectionLaplacian | None = None, solver: BlockSolver | None = None):
    """Run block sweeps until the full Riemannian gradient is below tolerance.

    ``init`` is a :class:`LiftedState` or anything :func:`initialize` accepts.
    Returns ``(state, trace)``.
    """
    options = options or SolverOptions()
    L = L if L is not None else assemble(graph)
    solver = solver or BlockSolver(L)
    if isinstance(init, LiftedState):
        state = init.copy()
    else:
        r0, _ = options.ranks(graph.d)
        state = initialize(graph, init, r0, options.seed)
    x = state.X
    d = state.d
    nrob = L.num_robots
    trace = SolveTrace()
    f = cost(L, state)
    g = riemannian_gradient(L, state)
    trace.record(f, np.linalg.norm(g), state.r)
    tol = options.tolerance(f)
    trace.termination = Termination.MAX_SWEEPS
    if trace.grad_norms[-1] <= tol:
        trace.termination = Termination.CONVERGED
        return state, trace
    block_tol = 0.1 * tol / np.sqrt(nrob)
    for sweep in range(options.max_sweeps):
        for step in range(nrob):
            if options.block_rule is BlockRule.GREEDY_GRADIENT:
                robot = int(np.argmax(solver.block_gradient_norms(x)))
            else:
                robot = step
            res = solver.update(x, robot, options, block_tol)
            trace.block_updates += 1
            trace.null_steps += int(res.null_step)
            if res.decrease > 0:
                x = x.copy()
                x[:, L.robot_columns(robot)] = res.x
        state = LiftedState(x, d)
        f = cost(L, state)
        gn = float(np.linalg.norm(riemannian_gradient(L, state)))
        trace.record(f, gn, state.r)
        tol = options.tolerance(f)
        block_tol = 0.1 * tol / np.sqrt(nrob)
        if gn <= tol:
            trace.termination = Termination.CONVERGED
            break
    log.debug("solve: %d sweeps, cost %.6g, |grad| %.3g (%s)", trace.sweeps, trace.costs[-1],
              trace.grad_norms[-1], trace.termination.value)
    return state, trace


# ---------------------------------------------------------------------------
# rank escalation


def pad_rank(state: LiftedState) -> LiftedState:
    return LiftedState(np.vstack([state.X, np.zeros((1, state.X.shape[1]))]), state.d)


def escape_saddle(L: ConnectionLaplacian, state: LiftedState, eigvec: np.ndarray, eigval: float,
                  r_max: int | None = None, min_decrease: float = 1e-12) -> LiftedState:
    """Leave a non-certified critical point along a negative-curvature direction.

    The state is padded with a zero row and moved along the certificate
    eigenvector placed in that row, with backtracking until the cost drops by
    at least ``min_decrease``.
    """
    r_max = r_max if r_max is not None else state.d + 4
    if state.r >= r_max:
        raise RankLimitReached(f"rank {state.r} already at limit {r_max}")
    padded = pad_rank(state)
    f0 = cost(L, padded)
    direction = np.zeros_like(padded.X)
    direction[-1] = eigvec / np.linalg.norm(eigvec)
    # tangent by construction: the new row is orthogonal to the (zero-padded) frames
    alpha = np.sqrt(state.n)
    best = None
    for _ in range(80):
        cand = LiftedState(retract(padded.X, alpha * direction, state.d), state.d)
        fc = cost(L, cand)
        if fc < f0 - min_decrease:
            best = cand
            break
        alpha *= 0.5
    if best is None:
        log.warning("escape_saddle: no decrease found (eigval %.3g); returning padded state", eigval)
        return padded
    return best
