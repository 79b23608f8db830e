"""Certified solve: rank staircase, certification, saddle escape, rounding."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .certify import Certificate, Verdict, assemble_dual, verify
from .errors import DegenerateSolution, StationarityViolation
from .graph import MultiRobotGraph, NodeId, Pose
from .quadratic import ConnectionLaplacian, LiftedState, assemble, cost
from .rounding import gauge_fix, round_solution
from .solver import BlockSolver, SolverOptions, SolveTrace, Termination, embed, escape_saddle, initialize, solve

log = logging.getLogger(__name__)


@dataclass
class CertifiedResult:
    state: LiftedState
    trace: SolveTrace
    certificate: Certificate | None
    poses: dict[NodeId, Pose]
    lifted_cost: float
    rounded_cost: float
    escapes: int = 0

    @property
    def certified(self) -> bool:
        return self.certificate is not None and self.certificate.certified


def certified_solve(graph: MultiRobotGraph, options: SolverOptions | None = None, init="spanning_tree",
                    L: ConnectionLaplacian | None = None, tol_rel: float = 1e-6, runner=None) -> CertifiedResult:
    """Staircase solve, certify, escape and re-solve when needed, then round and gauge-fix.

    ``runner(state) -> (state, trace)`` replaces the centralized block solver
    at each rank, e.g. a decentralized run; certification stays central.
    """
    options = options or SolverOptions()
    L = L if L is not None else assemble(graph)
    r0, rmax = options.ranks(graph.d)
    state = init if isinstance(init, LiftedState) else initialize(graph, init, r0, options.seed)
    solver = BlockSolver(L)
    trace = SolveTrace()
    certificate = None
    escapes = 0
    while True:
        if runner is None:
            state, part = solve(graph, options, state, L=L, solver=solver)
        else:
            state, part = runner(state)
        trace.extend(part)
        try:
            dual = assemble_dual(L, state)
        except StationarityViolation as exc:
            log.warning("certification skipped: %s", exc)
            certificate = None
            break
        certificate = verify(dual, state, L, tol_rel=tol_rel, seed=options.seed)
        if certificate.verdict is not Verdict.NOT_CERTIFIED:
            break
        if state.r >= rmax:
            trace.termination = Termination.ESCAPED_RANK_LIMIT
            break
        state = escape_saddle(L, state, certificate.escape_eigvec, certificate.lambda_min, rmax)
        escapes += 1
        for blk in solver.blocks:
            blk.radius = None
    lifted = cost(L, state)
    try:
        poses = gauge_fix(round_solution(state, graph))
    except DegenerateSolution:
        log.warning("rounding failed: degenerate lifted solution")
        raise
    rounded = cost(L, embed(poses, graph, graph.d))
    return CertifiedResult(state, trace, certificate, poses, lifted, rounded, escapes)
