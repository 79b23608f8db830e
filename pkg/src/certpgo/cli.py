"""Command-line entry point: ``certpgo generate | solve | compare``.

Exit codes: 0 success (certified, for the certified mode), 3 completed but
not certified, 2 input error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io as _stdio
import json
import logging
import sys
from pathlib import Path

from . import io as gio
from .baseline import ate_rmse, gauss_newton_pgo, improvement_percent, odometry_guess, one_time_fusion, pose_cost
from .errors import CertPGOError
from .graph import MultiRobotGraph, NodeId, Pose, require_valid
from .netsim import NetworkProfile, Traffic, run_decentralized
from .pipeline import certified_solve
from .rounding import gauge_fix
from .solver import SolverOptions, spanning_tree_poses
from .synth import MissionSpec, NoiseModel, generate, random_poses

log = logging.getLogger("certpgo")

EXIT_OK, EXIT_INPUT, EXIT_UNCERTIFIED = 0, 2, 3
MODES = ("certified", "gauss-newton", "one-time")

_MISSION_KEYS = {
    "num_robots": int, "poses_per_robot": int, "trajectory_shape": str, "intra_loop_period": int,
    "inter_overlap": float, "d": int, "step": float,
}
_NOISE_KEYS = {"rot_stddev": float, "trans_stddev": float, "seed": int}
_SOLVER_KEYS = {
    "r_init": int, "r_max": int, "grad_tol": float, "max_sweeps": int, "inner_steps": int,
    "block_rule": str, "inner_solver": str, "seed": int,
}


class InputError(Exception):
    pass


def _section(cfg, name, keys):
    out = {}
    if not cfg.has_section(name):
        return out
    for key, raw in cfg.items(name):
        if key not in keys:
            raise InputError(f"[{name}] unknown key {key!r}")
        try:
            out[key] = keys[key](raw)
        except ValueError:
            raise InputError(f"[{name}] {key} = {raw!r} is not a valid {keys[key].__name__}") from None
    return out


def _read_config(path) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cfg.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None
    return cfg


def mission_from_config(path) -> MissionSpec:
    cfg = _read_config(path)
    try:
        noise = NoiseModel(**_section(cfg, "noise", _NOISE_KEYS))
        return MissionSpec(noise=noise, **_section(cfg, "mission", _MISSION_KEYS))
    except (CertPGOError, ValueError) as exc:
        raise InputError(f"invalid mission: {exc}") from None


def solver_from_config(path, seed: int | None) -> SolverOptions:
    kw = _section(_read_config(path), "solver", _SOLVER_KEYS) if path else {}
    if seed is not None:
        kw["seed"] = seed
    try:
        return SolverOptions(**kw)
    except ValueError as exc:
        raise InputError(f"invalid solver options: {exc}") from None


def _load_graph(path, stride) -> MultiRobotGraph:
    try:
        graph = gio.parse_g2o(Path(path).read_bytes(), stride)
        require_valid(graph)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    except (CertPGOError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from None
    return graph


def _load_truth(path, graph, stride) -> dict[NodeId, Pose]:
    try:
        truth = gio.read_ground_truth(Path(path).read_text(), graph.d, stride)
    except OSError as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from None
    except CertPGOError as exc:
        raise InputError(f"{path}: {exc}") from None
    if set(truth) != set(graph.nodes()):
        raise InputError(f"ground truth {path} does not cover exactly the graph's poses")
    return truth


def _initial_poses(graph, init: str, seed: int) -> dict[NodeId, Pose]:
    if init == "spanning-tree":
        return spanning_tree_poses(graph)
    if init == "random":
        return random_poses(graph, seed)
    if init == "file":
        if graph.initial is None:
            raise InputError("--init file needs vertex estimates in the g2o input")
        return dict(graph.initial)
    raise InputError(f"unknown --init {init!r}")


def _decentralized_runner(graph, options, profile, traffic: Traffic):
    """Runner for ``certified_solve`` that sums traffic over staircase levels into ``traffic``."""
    def runner(state):
        run = run_decentralized(graph, options, profile, options.seed, init=state)
        t = run.traffic
        traffic.messages += t.messages
        traffic.bytes += t.bytes
        traffic.control_messages += t.control_messages
        traffic.retransmissions += t.retransmissions
        traffic.dropped += t.dropped
        traffic.log.extend(t.log)
        for k in range(graph.num_robots):
            traffic.per_robot_sent[k] += t.per_robot_sent[k]
            traffic.per_robot_received[k] += t.per_robot_received[k]
        return run.state, run.trace
    return runner


def run_mode(graph, mode, options, init_poses, decentralized=False, profile=None):
    """Run one pipeline; returns (poses, info dict, exit code)."""
    info = {"mode": mode}
    code = EXIT_OK
    if mode == "certified":
        traffic = Traffic(per_robot_sent=[0] * graph.num_robots, per_robot_received=[0] * graph.num_robots)
        runner = _decentralized_runner(graph, options, profile, traffic) if decentralized else None
        res = certified_solve(graph, options, init_poses, runner=runner)
        cert = res.certificate
        info.update(iterations=res.trace.sweeps, certified=res.certified,
                    verdict=cert.verdict.value if cert else "stationarity_failed",
                    lambda_d_plus_1=float(cert.lambda_d_plus_1) if cert else None)
        if decentralized:
            info["traffic"] = traffic
        if not res.certified:
            code = EXIT_UNCERTIFIED
        return res.poses, info, code
    if mode == "gauss-newton":
        out = gauss_newton_pgo(graph, init_poses)
        info["iterations"] = out.iterations
        return gauge_fix(out.poses), info, code
    if mode == "one-time":
        return gauge_fix(one_time_fusion(graph)), dict(info, iterations=0), code
    raise InputError(f"unknown mode {mode!r}")


def _odometry_baseline(graph, truth):
    starts = {k: truth[NodeId(k, 0)] for k in range(graph.num_robots)}
    return odometry_guess(graph, starts)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    spec = mission_from_config(args.config)
    try:
        graph = generate(spec)
    except CertPGOError as exc:
        raise InputError(f"cannot generate mission: {exc}") from None
    out = Path(args.output)
    out.write_text(gio.write_g2o(graph, graph.initial, args.stride))
    gt = Path(args.ground_truth) if args.ground_truth else out.with_suffix(".gt.tum")
    gt.write_text(gio.write_ground_truth(graph.ground_truth, args.stride))
    print(f"wrote {out} ({graph.n} poses, {len(graph.edges)} edges) and {gt}")
    return EXIT_OK


def cmd_solve(args) -> int:
    graph = _load_graph(args.input, args.stride)
    options = solver_from_config(args.config, args.seed)
    try:
        profile = NetworkProfile.parse(args.profile) if args.profile else NetworkProfile()
    except ValueError as exc:
        raise InputError(f"bad --profile: {exc}") from None
    if args.decentralized and args.mode != "certified":
        raise InputError("--decentralized applies to --mode certified only")
    truth = _load_truth(args.ground_truth, graph, args.stride) if args.ground_truth else None
    init = _initial_poses(graph, args.init, options.seed)
    poses, info, code = run_mode(graph, args.mode, options, init, args.decentralized, profile)

    report = gio.SolveReport(final_cost=pose_cost(graph, poses), iterations=int(info["iterations"]),
                             mode=args.mode)
    if args.mode == "certified":
        report.certified = bool(info["certified"])
        report.verdict = info["verdict"]
        report.lambda_d_plus_1 = info["lambda_d_plus_1"]
    if "traffic" in info:
        report.traffic = info["traffic"].as_dict()
        if args.message_log:
            info["traffic"].write_log(args.message_log)
    if truth is not None:
        base = ate_rmse(_odometry_baseline(graph, truth), truth)
        ours = ate_rmse(poses, truth)
        report.per_robot_rmse = ours
        report.baseline_rmse = base
        report.improvement_percent = [improvement_percent(b, o) for b, o in zip(base, ours)]

    if args.traj_out:
        outdir = Path(args.traj_out)
        outdir.mkdir(parents=True, exist_ok=True)
        for robot in range(graph.num_robots):
            (outdir / f"robot_{robot}.tum").write_text(gio.write_tum(gio.robot_trajectory(graph, poses, robot)))
    text = gio.write_report(report)
    if args.report:
        Path(args.report).write_text(text)
    else:
        sys.stdout.write(text)
    return code


def compare_rows(graph, truth, seeds, options, init="spanning-tree"):
    """Per seed, robot and method: RMSE and improvement over odometry."""
    rows = []
    odo = ate_rmse(_odometry_baseline(graph, truth), truth)
    for seed in seeds:
        opts = SolverOptions(**{**options.__dict__, "seed": seed})
        start = _initial_poses(graph, init, seed)
        results = {"odometry": odo}
        for mode in MODES:
            poses, _, _ = run_mode(graph, mode, opts, start)
            results[mode] = ate_rmse(poses, truth)
        for robot in range(graph.num_robots):
            for method, rmse in results.items():
                rows.append({"seed": seed, "robot": robot, "method": method, "rmse_m": round(rmse[robot], 6),
                             "improvement_percent": improvement_percent(odo[robot], rmse[robot])})
    return rows


def cmd_compare(args) -> int:
    graph = _load_graph(args.input, args.stride)
    if not args.ground_truth:
        raise InputError("compare needs --ground-truth")
    truth = _load_truth(args.ground_truth, graph, args.stride)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise InputError(f"bad --seeds {args.seeds!r}") from None
    options = solver_from_config(args.config, None)
    rows = compare_rows(graph, truth, seeds or [0], options, args.init)
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["seed", "robot", "method", "rmse_m", "improvement_percent"],
                            lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    if args.csv:
        Path(args.csv).write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="certpgo", description="Certifiably optimal multi-robot pose graph optimization")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a mission (g2o + ground-truth TUM sidecar)")
    g.add_argument("config", help="INI file with [mission] and [noise] sections")
    g.add_argument("output", help="output .g2o path")
    g.add_argument("--ground-truth", help="sidecar path (default: <output>.gt.tum)")
    g.add_argument("--stride", type=int, default=gio.DEFAULT_STRIDE, help="vertex id = robot * stride + index")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="optimize a g2o pose graph")
    s.add_argument("input")
    s.add_argument("--mode", choices=MODES, default="certified")
    s.add_argument("--init", choices=("spanning-tree", "random", "file"), default="spanning-tree")
    s.add_argument("--decentralized", action="store_true", help="run the block solver as message-passing agents")
    s.add_argument("--profile", help='network profile, e.g. "latency=1-5,drop=0.3,mode=synchronous_rounds"')
    s.add_argument("--message-log", help="write one line per message (tick from to sweep bytes)")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--config", help="INI file with an optional [solver] section")
    s.add_argument("--ground-truth", help="TUM sidecar for RMSE fields in the report")
    s.add_argument("--report", help="JSON report path (default: stdout)")
    s.add_argument("--traj-out", help="directory for per-robot TUM trajectories")
    s.add_argument("--stride", type=int, default=gio.DEFAULT_STRIDE)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("compare", help="RMSE table of all methods against odometry")
    c.add_argument("input")
    c.add_argument("--ground-truth", help="TUM sidecar written by generate")
    c.add_argument("--seeds", default="0", help="comma-separated seeds")
    c.add_argument("--init", choices=("spanning-tree", "random", "file"), default="spanning-tree")
    c.add_argument("--config", help="INI file with an optional [solver] section")
    c.add_argument("--csv", help="CSV output path (default: stdout)")
    c.add_argument("--json", help="JSON output path")
    c.add_argument("--stride", type=int, default=gio.DEFAULT_STRIDE)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
