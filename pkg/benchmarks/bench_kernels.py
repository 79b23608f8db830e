"""Compare the numba and pure-numpy kernel paths.

Kernel timings call both implementations directly in this process; the
end-to-end timing runs a certified solve in two subprocesses, one with
CERTPGO_DISABLE_NUMBA=1.

    python3 benchmarks/bench_kernels.py [--edges 20000] [--repeat 5]
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from certpgo import kernels
from certpgo._accel import USE_NUMBA
from certpgo.geometry import random_rotation

E2E = """
import time
from certpgo import MissionSpec, NoiseModel, Shape, generate, certified_solve
from certpgo.kernels import BACKEND
g = generate(MissionSpec(num_robots=2, poses_per_robot=100, trajectory_shape=Shape.GRID,
                         intra_loop_period=5, noise=NoiseModel(0.05, 0.05, 0), d={d}))
certified_solve(g)  # warm-up (includes compilation)
t = time.perf_counter(); r = certified_solve(g); t = time.perf_counter() - t
print(BACKEND, t, r.lifted_cost)
"""


def best_of(fn, repeat):
    fn()  # warm-up, triggers compilation
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_cases(m, d, rng):
    rot = np.array([random_rotation(rng, d) for _ in range(m)])
    rot_j = np.array([random_rotation(rng, d) for _ in range(m)])
    rot_m = np.array([random_rotation(rng, d) for _ in range(m)])
    ti, tj, tm = (rng.standard_normal((m, d)) for _ in range(3))
    w1, w2 = rng.uniform(1, 100, m), rng.uniform(1, 100, m)
    r = d + 2
    y = np.linalg.qr(rng.standard_normal((m, r, d)))[0]
    z = rng.standard_normal((m, r, d))
    return {
        "edge_matrices": ((rot_m, tm, w1, w2), kernels.edge_matrices_np, kernels.edge_matrices_nb),
        "tangent_project": ((y, z), kernels.tangent_project_np, kernels.tangent_project_nb),
        "qr_retract": ((y + 0.1 * z,), kernels.qr_retract_np, kernels.qr_retract_nb),
        "se_jacobians": ((rot, rot_j, ti, tj, rot_m, tm, np.sqrt(w1), np.sqrt(w2)),
                         kernels.se_jacobians_np, kernels.se_jacobians_nb),
    }


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(a - b)))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--edges", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-e2e", action="store_true")
    args = ap.parse_args(argv)
    if not USE_NUMBA:
        print("numba unavailable or disabled: the *_nb kernels run as plain Python", file=sys.stderr)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16} {'d':>2} {'numpy [ms]':>11} {'numba [ms]':>11} {'speedup':>8} {'max |diff|':>11}")
    for d in (2, 3):
        for name, (inputs, f_np, f_nb) in kernel_cases(args.edges, d, rng).items():
            t_np = best_of(lambda: f_np(*inputs), args.repeat)
            t_nb = best_of(lambda: f_nb(*inputs), args.repeat)
            diff = max_diff(f_np(*inputs), f_nb(*inputs))
            print(f"{name:<16} {d:>2} {1e3 * t_np:>11.2f} {1e3 * t_nb:>11.2f} {t_np / t_nb:>8.2f} {diff:>11.2e}")
    if args.skip_e2e:
        return
    print("\nend-to-end certified solve, 2 robots x 100 poses")
    for d in (2, 3):
        for disable in ("0", "1"):
            env = dict(os.environ, CERTPGO_DISABLE_NUMBA=disable)
            out = subprocess.run([sys.executable, "-c", E2E.format(d=d)], env=env, capture_output=True,
                                 text=True, check=True).stdout.split()
            print(f"  d={d} backend={out[0]:<6} {float(out[1]):7.3f} s   cost {float(out[2]):.10g}")


if __name__ == "__main__":
    main()
