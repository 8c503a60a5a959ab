"""Differential-drive dead reckoning from per-wheel arc lengths."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit
from .types import OdometryDelta, Pose2, Timestamp, VehicleGeometry, WheelSpeedSample, wrap_angle

SIGMA_FRACTION = 0.10
SIGMA_FLOOR = 1e-4
V_MAX = 30.0


@dataclass(frozen=True)
class WheelArcPair:
    t: Timestamp
    ds_left: float
    ds_right: float


@dataclass(frozen=True)
class Odometry:
    """Dead-reckoned run: ``poses[k]`` at ``t[k]``; ``deltas[k]`` moves k -> k+1."""

    t: np.ndarray
    poses: np.ndarray
    deltas: np.ndarray
    n_dropped: int = 0

    def __len__(self):
        return len(self.t)


def odometry_covariance(dx: float, dy: float, dtheta: float,
                        fraction: float = SIGMA_FRACTION, floor: float = SIGMA_FLOOR) -> np.ndarray:
    """Diagonal covariance with standard deviations of ``fraction`` of each component."""
    sig = np.maximum(fraction * np.abs([dx, dy, dtheta]), floor)
    return np.diag(sig**2)


def odometry_sigmas(deltas: np.ndarray, fraction: float = SIGMA_FRACTION,
                    floor: float = SIGMA_FLOOR) -> np.ndarray:
    return np.maximum(fraction * np.abs(deltas), floor)


def wheel_speeds_to_arcs(left: WheelSpeedSample, right: WheelSpeedSample, dt: float,
                         geom: VehicleGeometry) -> WheelArcPair:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    r = geom.wheel_radius
    return WheelArcPair(left.t, left.omega_z * r * dt, right.omega_z * r * dt)


@jit
def _step(x, y, th, ds_l, ds_r, track):
    ds = 0.5 * (ds_l + ds_r)
    dth = (ds_r - ds_l) / track
    h = th + 0.5 * dth
    return (x + ds * np.cos(h), y + ds * np.sin(h), wrap_angle(th + dth),
            ds * np.cos(0.5 * dth), ds * np.sin(0.5 * dth), dth)


def dead_reckon_step(pose: Pose2, arcs: WheelArcPair, geom: VehicleGeometry,
                     fraction: float = SIGMA_FRACTION,
                     floor: float = SIGMA_FLOOR) -> tuple[Pose2, OdometryDelta]:
    """Midpoint-heading pose update; also returns the step as a body-frame delta."""
    if not (math.isfinite(arcs.ds_left) and math.isfinite(arcs.ds_right)):
        raise ValueError("arc lengths must be finite")
    x, y, th, dx, dy, dth = _step(pose.x, pose.y, pose.theta, arcs.ds_left, arcs.ds_right,
                                  geom.track_width)
    return Pose2(x, y, th), OdometryDelta(dx, dy, dth, odometry_covariance(dx, dy, dth, fraction, floor))


@jit
def _integrate(ds_l, ds_r, track, x, y, th):
    n = ds_l.shape[0]
    poses = np.empty((n + 1, 3))
    deltas = np.empty((n, 3))
    poses[0, 0] = x
    poses[0, 1] = y
    poses[0, 2] = th
    for k in range(n):
        x, y, th, dx, dy, dth = _step(x, y, th, ds_l[k], ds_r[k], track)
        poses[k + 1, 0] = x
        poses[k + 1, 1] = y
        poses[k + 1, 2] = th
        deltas[k, 0] = dx
        deltas[k, 1] = dy
        deltas[k, 2] = dth
    return poses, deltas


def integrate_arcs(ds_left: np.ndarray, ds_right: np.ndarray, geom: VehicleGeometry,
                   pose0: Pose2 = Pose2()) -> tuple[np.ndarray, np.ndarray]:
    """Bulk dead reckoning: (N+1, 3) poses and (N, 3) body-frame deltas."""
    ds_left = np.ascontiguousarray(ds_left, dtype=float)
    ds_right = np.ascontiguousarray(ds_right, dtype=float)
    if ds_left.shape != ds_right.shape:
        raise ValueError("left/right arc arrays differ in length")
    if not (np.all(np.isfinite(ds_left)) and np.all(np.isfinite(ds_right))):
        raise ValueError("arc lengths must be finite")
    return _integrate(ds_left, ds_right, geom.track_width, pose0.x, pose0.y, pose0.theta)


def pair_wheel_samples(t_left: np.ndarray, t_right: np.ndarray,
                       period: float | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Match each left sample to the nearest right sample within half a period.

    Returns index arrays into both streams and the number of unpaired samples.
    """
    t_left = np.asarray(t_left, dtype=float)
    t_right = np.asarray(t_right, dtype=float)
    if len(t_left) == 0 or len(t_right) == 0:
        return np.empty(0, int), np.empty(0, int), len(t_left) + len(t_right)
    if period is None:
        period = float(np.median(np.diff(t_left))) if len(t_left) > 1 else np.inf
    j = np.clip(np.searchsorted(t_right, t_left), 1, max(len(t_right) - 1, 1))
    if len(t_right) == 1:
        j = np.zeros(len(t_left), int)
    else:
        prev_closer = np.abs(t_left - t_right[j - 1]) <= np.abs(t_right[j] - t_left)
        j = np.where(prev_closer, j - 1, j)
    ok = np.abs(t_right[j] - t_left) <= 0.5 * period
    il = np.flatnonzero(ok)
    ir = j[ok]
    # a right sample may only be used once
    keep = np.concatenate([[True], np.diff(ir) > 0]) if len(ir) else np.empty(0, bool)
    il, ir = il[keep], ir[keep]
    dropped = (len(t_left) - len(il)) + (len(t_right) - len(ir))
    return il, ir, int(dropped)


def dead_reckon_wheels(t_left, omega_left, t_right, omega_right, geom: VehicleGeometry,
                       pose0: Pose2 = Pose2(), v_max: float = V_MAX) -> Odometry:
    """Pair two wheel-rate streams and integrate them.

    Sample ``k`` holds the rate over ``[t_k, t_{k+1})``; the last sample only
    closes the final interval.
    """
    il, ir, dropped = pair_wheel_samples(t_left, t_right)
    if len(il) < 2:
        raise ValueError("wheel logs do not overlap in time")
    t = np.asarray(t_left, dtype=float)[il]
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("wheel timestamps must be strictly increasing")
    r = geom.wheel_radius
    ds_l = np.asarray(omega_left, dtype=float)[il][:-1] * r * dt
    ds_r = np.asarray(omega_right, dtype=float)[ir][:-1] * r * dt
    bound = v_max * dt
    if np.any(np.abs(ds_l) > bound) or np.any(np.abs(ds_r) > bound):
        raise ValueError(f"wheel speed exceeds sanity bound of {v_max} m/s")
    poses, deltas = integrate_arcs(ds_l, ds_r, geom, pose0)
    return Odometry(t, poses, deltas, dropped)
