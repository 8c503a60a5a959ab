"""Time the hot kernels with numba and with the pure-numpy fallback.

Each mode runs in its own interpreter because the fallback is chosen at
import time through ``WHEELODO_NO_JIT``. The first call of every kernel is
excluded so compilation does not count.

    python benchmarks/bench_jit.py [--repeat 3] [--scale 1.0]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from wheelodo import JIT_ENABLED
from wheelodo.bias import estimate_bias
from wheelodo.graph import build_graph, chain_poses, solve_gauss_newton
from wheelodo.odometry import integrate_arcs
from wheelodo.rate_kf import RateNoiseParams, offline_gain_iteration, rate_kf_filter
from wheelodo.rls import RlsConfig, rls_filter
from wheelodo.types import VehicleGeometry

repeat, scale = int(sys.argv[1]), float(sys.argv[2])
rng = np.random.default_rng(0)
n = int(100_000 * scale)
omega = np.array([0.01, -0.02, 0.005]) + rng.normal(0, 0.002, (n, 3))
z = 1.0 + rng.normal(0, 0.01, n)
arcs = 0.01 + rng.normal(0, 1e-4, (2, n))
m = int(5_000 * scale)
deltas = np.column_stack([np.full(m, 0.01), np.zeros(m), np.full(m, 2 * np.pi / m)])
truth = chain_poses(np.zeros(3), deltas)
t = np.arange(m + 1) * 0.01
tg = t[::20] + 0.003
gps = np.column_stack([np.interp(tg, t, truth[:, 0]), np.interp(tg, t, truth[:, 1])]) + rng.normal(0, 0.5, (len(tg), 2))
noisy = deltas * (1 + rng.normal(0, 0.02, deltas.shape))
graph = build_graph(t, noisy, tg, gps)
gain = offline_gain_iteration(RateNoiseParams())

cases = {
    f"bias KF ({n} samples)": lambda: estimate_bias(omega),
    "gain iteration (defaults)": lambda: offline_gain_iteration(RateNoiseParams()),
    f"rate KF ({n} samples)": lambda: rate_kf_filter(z, gain),
    f"RLS ({n} samples)": lambda: rls_filter(z, RlsConfig()),
    f"dead reckoning ({n} steps)": lambda: integrate_arcs(arcs[0], arcs[1], VehicleGeometry()),
    f"Gauss-Newton ({graph.n_variables} poses)": lambda: solve_gauss_newton(graph),
}
out = {}
for name, fn in cases.items():
    fn()
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps({"jit": JIT_ENABLED, "times": out}))
"""


def run(no_jit: bool, repeat: int, scale: float) -> dict:
    env = dict(os.environ)
    env.pop("WHEELODO_NO_JIT", None)
    if no_jit:
        env["WHEELODO_NO_JIT"] = "1"
    proc = subprocess.run([sys.executable, "-c", WORKER, str(repeat), str(scale)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    args = p.parse_args(argv)
    t0 = time.perf_counter()
    fast = run(False, args.repeat, args.scale)
    slow = run(True, args.repeat, args.scale)
    if not fast["jit"]:
        print("warning: numba unavailable, both columns use the fallback", file=sys.stderr)
    width = max(len(k) for k in fast["times"])
    print(f"{'kernel':<{width}}  {'numba s':>10}  {'numpy s':>10}  {'speedup':>8}")
    for name, tj in fast["times"].items():
        tp = slow["times"][name]
        print(f"{name:<{width}}  {tj:10.4f}  {tp:10.4f}  {tp / tj:7.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
