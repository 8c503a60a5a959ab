import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wheelodo.types import (
    GpsFix,
    GyroSample,
    OdometryDelta,
    Pose2,
    UtmCoord,
    VehicleGeometry,
    compose_arrays,
    normalize_angle,
    pose_compose,
    wrap_angle,
)

angles = st.floats(-50.0, 50.0, allow_nan=False)
coords = st.floats(-1e3, 1e3, allow_nan=False)
poses = st.builds(Pose2, coords, coords, angles)


def close(a: Pose2, b: Pose2, tol=1e-9):
    d = normalize_angle(a.theta - b.theta)
    return abs(a.x - b.x) < tol and abs(a.y - b.y) < tol and abs(d) < tol


@given(angles)
def test_normalize_range_and_idempotent(th):
    r = normalize_angle(th)
    assert -math.pi < r <= math.pi
    assert normalize_angle(r) == r
    assert math.isclose(math.cos(r), math.cos(th), abs_tol=1e-9)
    assert math.isclose(math.sin(r), math.sin(th), abs_tol=1e-9)


def test_normalize_boundary():
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(math.pi) == math.pi
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        normalize_angle(float("nan"))
    with pytest.raises(ValueError):
        normalize_angle(float("inf"))


@given(angles)
def test_wrap_matches_normalize(th):
    r = wrap_angle(th)
    assert -math.pi < r <= math.pi + 1e-15
    assert math.isclose(math.cos(r), math.cos(th), abs_tol=1e-9)
    assert math.isclose(math.sin(r), math.sin(th), abs_tol=1e-9)


@given(poses, poses, poses)
def test_compose_associative(a, b, c):
    assert close(a.compose(b).compose(c), a.compose(b.compose(c)), 1e-7)


@given(poses)
def test_inverse_is_identity(p):
    assert close(p.compose(p.inverse()), Pose2(), 1e-9)
    assert close(p.inverse().compose(p), Pose2(), 1e-9)


@given(poses, poses)
def test_between_roundtrip(a, b):
    assert close(a.compose(a.between(b)), b, 1e-7)


def test_compose_with_delta_and_arrays():
    a = Pose2(1.0, 2.0, math.pi / 2)
    d = OdometryDelta(1.0, 0.0, 0.1)
    p = pose_compose(a, d)
    assert p.x == pytest.approx(1.0) and p.y == pytest.approx(3.0)
    assert p.theta == pytest.approx(math.pi / 2 + 0.1)
    x, y, th = compose_arrays(1.0, 2.0, math.pi / 2, 1.0, 0.0, 0.1)
    assert (x, y, th) == pytest.approx((p.x, p.y, p.theta))


def test_pose_roundtrip_array():
    p = Pose2(1.5, -2.0, 4.0)
    assert Pose2.from_array(p.as_array()) == p
    assert -math.pi < p.theta <= math.pi


def test_validation():
    with pytest.raises(ValueError):
        VehicleGeometry(wheel_radius=0.0)
    with pytest.raises(ValueError):
        VehicleGeometry(track_width=-1.0)
    with pytest.raises(ValueError):
        GyroSample(0.0, [0.0, np.nan, 0.0])
    with pytest.raises(ValueError):
        GpsFix(0.0, 91.0, 0.0)
    with pytest.raises(ValueError):
        GpsFix(0.0, 0.0, 181.0)
    with pytest.raises(ValueError):
        UtmCoord(500000.0, 0.0, 61)
    with pytest.raises(ValueError):
        UtmCoord(500000.0, 0.0, 10, "east")
    with pytest.raises(ValueError):
        OdometryDelta(0.0, 0.0, 0.0, np.diag([1.0, -1.0, 1.0]))
    with pytest.raises(ValueError):
        OdometryDelta(0.0, 0.0, 0.0, np.array([[1.0, 0.5, 0], [0, 1.0, 0], [0, 0, 1.0]]))
    with pytest.raises(ValueError):
        Pose2(float("nan"), 0.0, 0.0)
