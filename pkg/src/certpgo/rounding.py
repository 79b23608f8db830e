"""Recover SE(d) poses from a lifted solution and fix the global gauge."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateSolution, NodeNotFound
from .geometry import project_to_rotation
from .graph import MultiRobotGraph, NodeId, Pose
from .quadratic import LiftedState


def rounding_basis(state: LiftedState) -> np.ndarray:
    """Orthonormal ``r x d`` basis of the dominant frame subspace.

    The basis is canonicalized towards the first ``d`` lifted coordinates, so
    unpadded and zero-padded rotations map back to themselves, and its last
    direction is flipped when most frames would otherwise be reflections.
    """
    d = state.d
    y = state.frames()
    stacked = np.concatenate(list(y), axis=1) if len(y) else np.zeros((state.r, 0))
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    if len(s) < d or not s[d - 1] > 1e-12 * s[0]:
        raise DegenerateSolution("lifted frames do not span a d-dimensional subspace")
    basis = u[:, :d]
    w, _, vt = np.linalg.svd(basis[:d, :].T)
    basis = basis @ (w @ vt)
    dets = np.linalg.det(np.einsum("rd,nre->nde", basis, y))
    if np.count_nonzero(dets < 0) > len(dets) / 2:
        basis = basis.copy()
        basis[:, -1] *= -1
    return basis


def round_solution(state: LiftedState, graph: MultiRobotGraph) -> dict[NodeId, Pose]:
    basis = rounding_basis(state)
    y, p = state.frames(), state.translations()
    rots = np.einsum("rd,nre->nde", basis, y)
    trans = p @ basis
    return {node: Pose(project_to_rotation(rots[i]), trans[i]) for i, node in enumerate(graph.nodes())}


def gauge_fix(poses: dict[NodeId, Pose], anchor: NodeId = NodeId(0, 0)) -> dict[NodeId, Pose]:
    if anchor not in poses:
        raise NodeNotFound(anchor)
    inv = poses[anchor].inverse()
    out = {node: inv @ pose for node, pose in poses.items()}
    out[anchor] = Pose.identity(poses[anchor].d)
    return out
