"""Shared value types and planar pose arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import jit

Timestamp = float

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    theta = float(theta)
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


@jit
def wrap_angle(theta):
    # kernel twin of normalize_angle, no finiteness check
    r = theta - TWO_PI * np.floor((theta + np.pi) / TWO_PI)
    # r in [-pi, pi)
    if r <= -np.pi:
        r += TWO_PI
    return r


def _check_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite value {v!r}")


@dataclass(frozen=True)
class VehicleGeometry:
    wheel_radius: float = 0.165
    track_width: float = 0.555

    def __post_init__(self):
        if not (self.wheel_radius > 0 and math.isfinite(self.wheel_radius)):
            raise ValueError(f"wheel_radius must be > 0, got {self.wheel_radius}")
        if not (self.track_width > 0 and math.isfinite(self.track_width)):
            raise ValueError(f"track_width must be > 0, got {self.track_width}")


@dataclass(frozen=True)
class GyroSample:
    t: Timestamp
    omega_meas: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.omega_meas, dtype=float).reshape(3)
        if not np.all(np.isfinite(w)):
            raise ValueError("gyro sample must be finite")
        object.__setattr__(self, "omega_meas", w)


@dataclass(frozen=True)
class GpsFix:
    t: Timestamp
    latitude_deg: float
    longitude_deg: float

    def __post_init__(self):
        if not -90.0 <= self.latitude_deg <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude_deg}")
        if not -180.0 <= self.longitude_deg <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude_deg}")


@dataclass(frozen=True)
class UtmCoord:
    easting_m: float
    northing_m: float
    zone: int
    hemisphere: str = "north"

    def __post_init__(self):
        if not 1 <= self.zone <= 60:
            raise ValueError(f"UTM zone must be in [1, 60], got {self.zone}")
        if self.hemisphere not in ("north", "south"):
            raise ValueError(f"hemisphere must be 'north' or 'south', got {self.hemisphere!r}")
        if not 0.0 < self.easting_m < 1_000_000.0:
            raise ValueError(f"easting out of range: {self.easting_m}")


@dataclass(frozen=True)
class WheelSpeedSample:
    t: Timestamp
    omega_z: float
    v: float


@dataclass(frozen=True)
class Pose2:
    """Planar pose; theta is kept in (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        _check_finite(self.x, self.y)
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> Pose2:
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def compose(self, d) -> Pose2:
        return pose_compose(self, d)

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def between(self, other: Pose2) -> Pose2:
        """Relative pose ``self^-1 * other``."""
        return self.inverse().compose(other)


@dataclass(frozen=True)
class OdometryDelta:
    """Relative SE(2) motion expressed in the frame of the starting pose."""

    dx: float
    dy: float
    dtheta: float
    covariance: np.ndarray = field(default_factory=lambda: np.eye(3) * 1e-8)

    def __post_init__(self):
        _check_finite(self.dx, self.dy, self.dtheta)
        cov = np.asarray(self.covariance, dtype=float).reshape(3, 3)
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-15 * max(1.0, np.abs(cov).max())):
            raise ValueError("odometry covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ValueError("odometry covariance must be positive semi-definite")
        object.__setattr__(self, "covariance", cov)

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta])


def pose_compose(a: Pose2, d) -> Pose2:
    """SE(2) composition ``a * d``; ``d`` may be a Pose2 or an OdometryDelta."""
    if isinstance(d, OdometryDelta):
        dx, dy, dth = d.dx, d.dy, d.dtheta
    else:
        dx, dy, dth = d.x, d.y, d.theta
    _check_finite(a.x, a.y, a.theta, dx, dy, dth)
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * dx - s * dy, a.y + s * dx + c * dy, a.theta + dth)


@jit
def compose_arrays(ax, ay, ath, dx, dy, dth):
    c = np.cos(ath)
    s = np.sin(ath)
    return ax + c * dx - s * dy, ay + s * dx + c * dy, wrap_angle(ath + dth)
