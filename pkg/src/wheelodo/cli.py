"""Command-line driver: simulate, calibrate, filter, deadreckon, localize.

Exit codes: 0 ok, 2 usage/config error, 3 data error, 4 solver divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import logs
from .bias import estimate_bias
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .evaluation import closure_error, path_length, residual_stats
from .geodesy import OutOfDomainError, project_fixes
from .graph import SingularSystemError, build_graph, solve_gauss_newton
from .odometry import dead_reckon_wheels
from .rate_kf import offline_gain_iteration, rate_kf_filter
from .rls import RlsStateError, rls_filter
from .sim import histogram, simulate_run
from .types import Pose2

log = logging.getLogger("wheelodo")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

HIST_BIN = 1e-5
MIN_CALIBRATION_SAMPLES = 100

SIM_FILES = ("gyro_left.csv", "gyro_right.csv", "gps.csv", "truth_trajectory.csv", "truth_wheels.csv")


class DataError(ValueError):
    pass


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# --- simulate ---------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    run = simulate_run(cfg.trajectory, cfg.gyro_noise)
    logs.write_gyro(out / SIM_FILES[0], run.gyro_left.t, run.gyro_left.omega)
    logs.write_gyro(out / SIM_FILES[1], run.gyro_right.t, run.gyro_right.omega)
    logs.write_gps(out / SIM_FILES[2], run.gps.t, run.gps.lat, run.gps.lon)
    logs.write_trajectory(out / SIM_FILES[3], run.truth.t, run.truth.poses)
    w = run.wheels
    logs.write_csv(out / SIM_FILES[4], logs.TRUTH_WHEELS_HEADER, [w.t, w.omega_left, w.v_left, w.omega_right, w.v_right])
    print(f"simulated {cfg.trajectory.shape}: {len(run.gyro_left.t)} gyro samples/wheel, "
          f"{len(run.gps.t)} GPS fixes -> {out}")
    return EXIT_OK


# --- calibrate --------------------------------------------------------------

def _window(cfg: RunConfig, t: np.ndarray, window) -> tuple[float, float]:
    if window is not None:
        return float(window[0]), float(window[1])
    if cfg.calibration_window is not None:
        return cfg.calibration_window
    return float(t[0]), float(t[0]) + cfg.trajectory.stationary_s


def calibrate(t: np.ndarray, omega: np.ndarray, cfg: RunConfig, window=None):
    if len(t) == 0:
        raise DataError("gyro log is empty")
    t0, t1 = _window(cfg, t, window)
    sel = (t >= t0) & (t < t1)
    n = int(np.count_nonzero(sel))
    if n < MIN_CALIBRATION_SAMPLES:
        raise DataError(f"calibration window [{t0}, {t1}) has {n} samples; need >= {MIN_CALIBRATION_SAMPLES}")
    return estimate_bias(omega[sel], cfg.bias), (t0, t1), sel


def cmd_calibrate(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    t, omega = logs.read_gyro(args.gyro_log)
    est, (t0, t1), sel = calibrate(t, omega, cfg, args.window)
    stem = Path(args.gyro_log).stem
    report = {
        "bias": est.b.tolist(),
        "std": est.std.tolist(),
        "noise_cov": est.noise_cov.tolist(),
        "n_samples": est.n_samples,
        "n_skipped": est.n_skipped,
        "nis_mean": est.nis_mean,
        "stationary_consistent": est.stationary_consistent,
        "window": [t0, t1],
    }
    _write_json(out / f"{stem}_bias.json", report)
    rows = ["axis,stage,bin_left,count"]
    window = omega[sel]
    for axis, name in enumerate("xyz"):
        for stage, data in (("before", window[:, axis]), ("after", window[:, axis] - est.b[axis])):
            edges, counts = histogram(data, HIST_BIN)
            rows += [f"{name},{stage},{edges[i]!r},{int(c)}" for i, c in enumerate(counts)]
    (out / f"{stem}_hist.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    for axis, name in enumerate("xyz"):
        print(f"bias_{name} = {est.b[axis]:+.6e} rad/s  (sigma {est.std[axis]:.2e})")
    if not est.stationary_consistent:
        print(f"warning: residuals inconsistent with a stationary window (mean NIS {est.nis_mean:.3g})",
              file=sys.stderr)
    return EXIT_OK


# --- filter -----------------------------------------------------------------

def _load_bias(args, cfg, t, omega) -> np.ndarray:
    if args.bias_report:
        with open(args.bias_report, encoding="utf-8") as f:
            return np.asarray(json.load(f)["bias"], dtype=float)
    if args.window is not None or cfg.calibration_window is not None:
        return calibrate(t, omega, cfg, args.window)[0].b
    log.info("no bias report or window given; treating the log as already bias-corrected")
    return np.zeros(3)


def run_filter(t: np.ndarray, z: np.ndarray, cfg: RunConfig, choice: str, b_static: float = 0.0):
    """Return (omega_hat, b_hat, wheel_rate) for a bias-corrected spin-rate stream."""
    if choice == "kf":
        T = float(np.median(np.diff(t))) if len(t) > 1 else cfg.noise.T
        gain = offline_gain_iteration(replace(cfg.noise, T=T))
        x = rate_kf_filter(z, gain)
        # only the sum is observable; it is what feeds odometry
        return x[:, 0], x[:, 1], x[:, 0] + x[:, 1]
    if choice == "rls":
        yhat, betas = rls_filter(z, cfg.rls, b_static)
        return yhat, betas[:, 1], yhat
    return z.copy(), np.zeros_like(z), z.copy()


def cmd_filter(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    t, omega = logs.read_gyro(args.gyro_log)
    if len(t) == 0:
        raise DataError("gyro log is empty")
    b = _load_bias(args, cfg, t, omega)
    z = omega[:, 2] - b[2]
    omega_hat, b_hat, rate = run_filter(t, z, cfg, cfg.filter_choice, float(b[2]))
    stem = Path(args.gyro_log).stem
    logs.write_csv(out / f"{stem}_filtered.csv", logs.FILTERED_HEADER, [t, z, omega_hat, b_hat])
    logs.write_wheel(out / f"{stem}_wheel.csv", t, rate, rate * cfg.geometry.wheel_radius)
    summary = {
        "filter": cfg.filter_choice,
        "n_samples": int(len(t)),
        "bias_removed": b.tolist(),
        "filtered_minus_raw": residual_stats(rate, z),
    }
    if args.truth:
        tt, wl, _, wr, _ = logs.read_csv(args.truth, logs.TRUTH_WHEELS_HEADER)
        side = args.side or ("right" if "right" in stem else "left")
        truth = np.interp(t, tt, wl if side == "left" else wr)
        summary["side"] = side
        summary["raw_vs_truth"] = residual_stats(z, truth)
        summary["filtered_vs_truth"] = residual_stats(rate, truth)
    _write_json(out / f"{stem}_filter_summary.json", summary)
    print(f"{cfg.filter_choice}: {len(t)} samples -> {out / (stem + '_wheel.csv')}")
    if "filtered_vs_truth" in summary:
        print(f"residual variance vs truth: raw {summary['raw_vs_truth']['variance']:.3e}, "
              f"filtered {summary['filtered_vs_truth']['variance']:.3e}")
    return EXIT_OK


# --- deadreckon -------------------------------------------------------------

def _odometry_from_wheels(left_path, right_path, cfg: RunConfig):
    tl, wl, _ = logs.read_wheel(left_path)
    tr, wr, _ = logs.read_wheel(right_path)
    if len(tl) == 0 or len(tr) == 0:
        raise DataError("wheel log is empty")
    if tl[-1] < tr[0] or tr[-1] < tl[0]:
        raise DataError("left and right wheel logs do not overlap in time")
    return dead_reckon_wheels(tl, wl, tr, wr, cfg.geometry, Pose2(0.0, 0.0, cfg.yaw0))


def cmd_deadreckon(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    odo = _odometry_from_wheels(args.left, args.right, cfg)
    logs.write_trajectory(out / "deadreckon.csv", odo.t, odo.poses)
    length = path_length(odo.poses)
    dist, frac = closure_error(odo.poses, length)
    _write_json(out / "deadreckon_summary.json", {
        "n_poses": int(len(odo.t)),
        "n_unpaired_samples": odo.n_dropped,
        "path_length_m": length,
        "closure_error_m": dist,
        "closure_error_fraction": frac,
    })
    print(f"path {length:.3f} m, closure error {dist:.3f} m ({100 * frac:.3f} % of path)")
    return EXIT_OK


# --- localize ---------------------------------------------------------------

def cmd_localize(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    if args.trajectory:
        t, poses = logs.read_trajectory(args.trajectory)
        if len(t) < 2:
            raise DataError("trajectory needs at least two poses")
        c, s = np.cos(poses[:-1, 2]), np.sin(poses[:-1, 2])
        d = np.diff(poses[:, :2], axis=0)
        dth = np.remainder(np.diff(poses[:, 2]) + np.pi, 2 * np.pi) - np.pi
        deltas = np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1], dth])
        yaw0 = float(poses[0, 2])
    elif args.left and args.right:
        odo = _odometry_from_wheels(args.left, args.right, cfg)
        t, deltas, yaw0 = odo.t, odo.deltas, cfg.yaw0
    else:
        raise ConfigError("localize", "give --trajectory or both --left and --right")
    gt, lat, lon = logs.read_gps(args.gps)
    xy, origin = project_fixes(gt, lat, lon)
    graph = build_graph(t, deltas, gt, xy, yaw0, gps_sigma=cfg.gps_sigma_m,
                        sigma_fraction=cfg.odo_sigma_fraction, sigma_floor=cfg.odo_sigma_floor,
                        prior_sigma=cfg.solver.prior_sigma)
    res = solve_gauss_newton(graph, cfg.solver.max_iter, cfg.solver.tol)
    logs.write_trajectory(out / "map_trajectory.csv", graph.t, res.poses)
    logs.write_trajectory(out / "deadreckon_trajectory.csv", graph.t, graph.initial)
    logs.write_csv(out / "gn_cost.csv", logs.COST_HEADER, [np.arange(len(res.cost_history)), res.cost_history])
    logs.write_svg(out / "trajectories.svg", {"map": res.poses, "dead reckoning": graph.initial})
    summary = {
        "n_variables": graph.n_variables,
        "n_gps_factors": int(len(graph.gps_index)),
        "n_gps_dropped": graph.n_gps_dropped,
        "n_splits": graph.n_splits,
        "iterations": res.iterations,
        "final_error": res.final_error,
        "converged": res.converged,
        "diverged": res.diverged,
        "origin_utm": None if origin is None else
        {"easting_m": origin.easting_m, "northing_m": origin.northing_m, "zone": origin.zone,
         "hemisphere": origin.hemisphere},
    }
    _write_json(out / "localize_summary.json", summary)
    print(f"MAP over {graph.n_variables} poses, {len(graph.gps_index)} GPS factors: "
          f"error {res.final_error:.6g} after {res.iterations} iterations")
    if res.diverged:
        print("error: Gauss-Newton diverged; wrote best-so-far estimate", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# --- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--filter", dest="filter_choice", choices=("kf", "rls", "raw"))
    common.add_argument("--wheel-radius", type=float)
    common.add_argument("--track-width", type=float)
    common.add_argument("--lambda", dest="lam", type=float, help="RLS forgetting factor")
    common.add_argument("--gps-sigma", type=float, help="GPS standard deviation per axis, m")
    common.add_argument("--out-dir", default=".")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wheelodo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="write synthetic gyro, GPS and truth logs")

    c = sub.add_parser("calibrate", parents=[common], help="estimate static gyro bias")
    c.add_argument("gyro_log")
    c.add_argument("--window", nargs=2, type=float, metavar=("T0", "T1"))

    f = sub.add_parser("filter", parents=[common], help="track the spin rate with KF or RLS")
    f.add_argument("gyro_log")
    f.add_argument("--bias-report", help="JSON written by calibrate")
    f.add_argument("--window", nargs=2, type=float, metavar=("T0", "T1"), help="calibrate inline")
    f.add_argument("--truth", help="truth_wheels.csv for residual statistics")
    f.add_argument("--side", choices=("left", "right"))

    d = sub.add_parser("deadreckon", parents=[common], help="integrate wheel speed logs")
    d.add_argument("left")
    d.add_argument("right")
    d.add_argument("--yaw0", type=float)

    loc = sub.add_parser("localize", parents=[common], help="GPS + odometry MAP trajectory")
    loc.add_argument("--gps", required=True)
    loc.add_argument("--left")
    loc.add_argument("--right")
    loc.add_argument("--trajectory")
    loc.add_argument("--yaw0", type=float)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "filter": cmd_filter,
    "deadreckon": cmd_deadreckon,
    "localize": cmd_localize,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), seed=args.seed, filter_choice=args.filter_choice,
                              wheel_radius=args.wheel_radius, track_width=args.track_width,
                              lam=args.lam, gps_sigma=args.gps_sigma)
        if getattr(args, "yaw0", None) is not None:
            cfg = replace(cfg, yaw0=args.yaw0)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, logs.LogFormatError, OutOfDomainError, SingularSystemError, RlsStateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
