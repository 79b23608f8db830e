"""Certifiably optimal multi-robot pose graph optimization.

Riemannian block-coordinate descent on a rank-lifted relaxation, a dual
certificate of global optimality, rounding back to SE(d), local-search and
one-time-fusion baselines, and a deterministic peer-to-peer simulator.
"""

from .baseline import (ate_rmse, gauss_newton_pgo, improvement_percent, odometry_guess, one_time_fusion,
                       pose_cost, rendezvous_align)
from .certify import Certificate, Verdict, assemble_dual, verify
from .graph import EdgeKind, MultiRobotGraph, NodeId, Pose, RelativeMeasurement, validate
from .io import parse_g2o, read_tum, write_g2o, write_tum
from .kernels import BACKEND
from .netsim import NetworkProfile, run_decentralized, traffic_report
from .pipeline import CertifiedResult, certified_solve
from .quadratic import ConnectionLaplacian, LiftedState, assemble, cost, riemannian_gradient
from .rounding import gauge_fix, round_solution
from .solver import SolverOptions, block_update, escape_saddle, solve
from .synth import MissionSpec, NoiseModel, Shape, generate

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Certificate", "CertifiedResult", "ConnectionLaplacian", "EdgeKind", "LiftedState", "MissionSpec",
    "MultiRobotGraph", "NetworkProfile", "NodeId", "NoiseModel", "Pose", "RelativeMeasurement", "Shape",
    "SolverOptions", "Verdict", "assemble", "assemble_dual", "ate_rmse", "block_update", "certified_solve", "cost",
    "escape_saddle", "gauge_fix", "gauss_newton_pgo", "generate", "improvement_percent", "odometry_guess",
    "one_time_fusion", "parse_g2o", "pose_cost", "read_tum", "rendezvous_align", "riemannian_gradient",
    "round_solution", "run_decentralized", "solve", "traffic_report", "validate", "verify", "write_g2o", "write_tum",
]
