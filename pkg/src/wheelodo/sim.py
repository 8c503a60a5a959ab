"""Synthetic wheel-gyro, GPS and ground-truth generator.

Paths are built from whole sample steps of constant speed and curvature, so
ground truth is an exact chain of circular arcs and closed shapes close to
rounding error. Every sample holds its rate over ``[t_k, t_{k+1})``.

Random streams come from Philox generators keyed by ``(seed, stream_id)``
through ``numpy.random.SeedSequence``; adding a stream never changes the
draws of another.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geodesy import latlon_to_utm, unproject
from .types import GpsFix, VehicleGeometry

SHAPES = ("straight", "circle", "figure-eight", "closed-loop-polyline")

# stable stream ids, never renumber
STREAM_LEFT_WHITE = 0
STREAM_LEFT_WALK = 1
STREAM_RIGHT_WHITE = 2
STREAM_RIGHT_WALK = 3
STREAM_GPS = 4
STREAM_STATIONARY = 5

MAX_SPEED = 30.0


def rng_for(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass(frozen=True)
class GyroNoiseSpec:
    bias0: tuple[float, float, float] = (0.01, -0.02, 0.005)
    arw_sigma: float = 0.002
    rrw_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "bias0", tuple(float(v) for v in self.bias0))
        if len(self.bias0) != 3:
            raise ValueError("bias0 must have three components")
        if self.arw_sigma < 0 or self.rrw_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")


@dataclass(frozen=True)
class TrajectorySpec:
    shape: str = "closed-loop-polyline"
    path_length: float = 250.0
    speed: float = 1.0
    sample_rate_hz: float = 100.0
    gps_rate_hz: float = 5.0
    gps_sigma_m: float = 5.0
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    origin: GpsFix = field(default_factory=lambda: GpsFix(0.0, 22.3194, 87.3091))
    yaw0: float = 0.0
    stationary_s: float = 5.0
    corner_radius: float = 5.0
    gps_phase_s: float = 0.013

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if not self.sample_rate_hz > 0 or not self.gps_rate_hz > 0:
            raise ValueError("rates must be positive")
        if not self.gps_rate_hz < self.sample_rate_hz:
            raise ValueError("GPS rate must be below the odometry sample rate")
        if not 0 < self.speed <= MAX_SPEED:
            raise ValueError(f"speed must be in (0, {MAX_SPEED}] m/s, got {self.speed}")
        if not self.path_length > 0:
            raise ValueError("path_length must be positive")
        if self.gps_sigma_m < 0 or self.stationary_s < 0:
            raise ValueError("gps_sigma_m and stationary_s must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz


@dataclass(frozen=True)
class GyroLog:
    t: np.ndarray
    omega: np.ndarray  # (N, 3)


@dataclass(frozen=True)
class GpsLog:
    t: np.ndarray
    lat: np.ndarray
    lon: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    poses: np.ndarray  # (N, 3)


@dataclass(frozen=True)
class WheelTruth:
    t: np.ndarray
    omega_left: np.ndarray
    omega_right: np.ndarray
    v_left: np.ndarray
    v_right: np.ndarray


@dataclass(frozen=True)
class SimRun:
    gyro_left: GyroLog
    gyro_right: GyroLog
    gps: GpsLog
    truth: Trajectory
    wheels: WheelTruth
    gps_truth_xy: np.ndarray  # true local position at each fix
    bias_left: np.ndarray  # true bias history (N, 3)
    bias_right: np.ndarray


def path_steps(traj: TrajectorySpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-step arc length and heading change of the moving part of the run."""
    ds = traj.speed * traj.dt
    n = max(1, int(round(traj.path_length / ds)))
    if traj.shape == "straight":
        dth = np.zeros(n)
    elif traj.shape == "circle":
        dth = np.full(n, 2 * math.pi / n)
    elif traj.shape == "figure-eight":
        half = max(1, n // 2)
        dth = np.concatenate([np.full(half, 2 * math.pi / half), np.full(half, -2 * math.pi / half)])
    else:
        nc = max(1, int(round(0.5 * math.pi * traj.corner_radius / ds)))
        rest = n - 4 * nc
        if rest < 6:
            raise ValueError("path too short for the corner radius")
        nb = rest // 6
        na = (rest - 2 * nb) // 2
        corner = np.full(nc, 0.5 * math.pi / nc)
        parts = []
        for side in (na, nb, na, nb):
            parts += [np.zeros(side), corner]
        dth = np.concatenate(parts)
    return np.full(len(dth), ds), dth


def _check_feasible(dth: np.ndarray, ds: float, geom: VehicleGeometry) -> None:
    kappa = np.abs(dth).max() / ds if len(dth) else 0.0
    # inner wheel must not reverse
    if kappa * geom.track_width / 2.0 > 1.0:
        raise ValueError(f"turn radius {1 / kappa:.3g} m is tighter than half the track width")


def _exact_arcs(ds: np.ndarray, dth: np.ndarray, pose0: tuple[float, float, float]) -> np.ndarray:
    """Integrate constant-curvature steps exactly; heading is left unwrapped."""
    th = pose0[2] + np.concatenate([[0.0], np.cumsum(dth)])
    chord = ds * np.sinc(dth / (2 * math.pi))  # ds * sin(dth/2)/(dth/2)
    mid = th[:-1] + 0.5 * dth
    x = pose0[0] + np.concatenate([[0.0], np.cumsum(chord * np.cos(mid))])
    y = pose0[1] + np.concatenate([[0.0], np.cumsum(chord * np.sin(mid))])
    return np.column_stack([x, y, th])


def simulate_gyro(true_rate_z: np.ndarray, noise: GyroNoiseSpec, white_stream: int,
                  walk_stream: int) -> tuple[np.ndarray, np.ndarray]:
    """Measured 3-axis rates ``true + bias(t) + white``; x/y carry no motion.

    Returns (measured (N, 3), bias history (N, 3)).
    """
    n = len(true_rate_z)
    white = rng_for(noise.seed, white_stream).standard_normal((n, 3)) * noise.arw_sigma
    steps = rng_for(noise.seed, walk_stream).standard_normal((n, 3)) * noise.rrw_sigma
    steps[0] = 0.0
    bias = np.asarray(noise.bias0) + np.cumsum(steps, axis=0)
    meas = bias + white
    meas[:, 2] += true_rate_z
    return meas, bias


def simulate_stationary(duration_s: float, rate_hz: float, noise: GyroNoiseSpec) -> GyroLog:
    n = int(round(duration_s * rate_hz))
    t = np.round(np.arange(n) / rate_hz, 9)
    meas, _ = simulate_gyro(np.zeros(n), noise, STREAM_STATIONARY, STREAM_STATIONARY + 1)
    return GyroLog(t, meas)


def simulate_run(traj: TrajectorySpec, noise: GyroNoiseSpec,
                 noise_right: GyroNoiseSpec | None = None) -> SimRun:
    """Generate one run; the right wheel uses ``noise_right`` if given."""
    noise_right = noise_right or noise
    geom = traj.geom
    dt = traj.dt
    ds_move, dth_move = path_steps(traj)
    _check_feasible(dth_move, traj.speed * dt, geom)
    n_still = int(round(traj.stationary_s / dt))
    ds = np.concatenate([np.zeros(n_still), ds_move, np.zeros(n_still)])
    dth = np.concatenate([np.zeros(n_still), dth_move, np.zeros(n_still)])
    m = len(ds)
    t = np.round(np.arange(m + 1) * dt, 9)

    poses = _exact_arcs(ds, dth, (0.0, 0.0, traj.yaw0))

    half_b = 0.5 * geom.track_width
    # last sample closes the run at rest
    arc_l = np.concatenate([ds - half_b * dth, [0.0]])
    arc_r = np.concatenate([ds + half_b * dth, [0.0]])
    v_l, v_r = arc_l / dt, arc_r / dt
    w_l, w_r = v_l / geom.wheel_radius, v_r / geom.wheel_radius

    meas_l, bias_l = simulate_gyro(w_l, noise, STREAM_LEFT_WHITE, STREAM_LEFT_WALK)
    meas_r, bias_r = simulate_gyro(w_r, noise_right, STREAM_RIGHT_WHITE, STREAM_RIGHT_WALK)

    # GPS: truth at fix times (partial arcs), noise in metres, back to lat/lon
    t_end = t[-1]
    n_gps = int(math.floor((t_end - traj.gps_phase_s) * traj.gps_rate_hz + 1e-9)) + 1
    t_gps = np.round(traj.gps_phase_s + np.arange(max(n_gps, 0)) / traj.gps_rate_hz, 9)
    t_gps = t_gps[t_gps <= t_end]
    k = np.minimum((t_gps / dt).astype(int), m - 1)
    frac = (t_gps - t[k]) / dt
    th0 = poses[k, 2]
    d_part = ds[k] * frac
    a_part = dth[k] * frac
    chord = d_part * np.sinc(a_part / (2 * math.pi))
    gx = poses[k, 0] + chord * np.cos(th0 + 0.5 * a_part)
    gy = poses[k, 1] + chord * np.sin(th0 + 0.5 * a_part)
    gps_truth = np.column_stack([gx, gy])
    noise_xy = rng_for(noise.seed, STREAM_GPS).standard_normal((len(t_gps), 2)) * traj.gps_sigma_m
    origin = latlon_to_utm(traj.origin)
    lat, lon = unproject(origin.easting_m + gx + noise_xy[:, 0], origin.northing_m + gy + noise_xy[:, 1],
                         origin.zone, origin.hemisphere == "north")

    wrapped = poses.copy()
    wrapped[:, 2] = np.remainder(poses[:, 2] + math.pi, 2 * math.pi) - math.pi
    wrapped[wrapped[:, 2] <= -math.pi, 2] += 2 * math.pi

    return SimRun(
        gyro_left=GyroLog(t, meas_l),
        gyro_right=GyroLog(t, meas_r),
        gps=GpsLog(t_gps, np.atleast_1d(lat), np.atleast_1d(lon)),
        truth=Trajectory(t, wrapped),
        wheels=WheelTruth(t, w_l, w_r, v_l, v_r),
        gps_truth_xy=gps_truth,
        bias_left=bias_l,
        bias_right=bias_r,
    )


def histogram(stream, bin_width: float) -> tuple[np.ndarray, np.ndarray]:
    """Counts in bins ``[k w, (k+1) w)`` spanning the data; edges are multiples of ``w``."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    x = np.asarray(stream, dtype=float).ravel()
    if x.size == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    idx = np.floor(x / bin_width).astype(np.int64)
    lo = idx.min()
    counts = np.bincount(idx - lo)
    edges = (lo + np.arange(len(counts) + 1)) * bin_width
    return edges, counts


def histogram_mode(edges: np.ndarray, counts: np.ndarray) -> float:
    """Centre of the most populated bin."""
    i = int(np.argmax(counts))
    return 0.5 * (edges[i] + edges[i + 1])
