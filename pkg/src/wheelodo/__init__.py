"""Wheel-mounted gyroscope odometry with GPS fusion on a pose graph."""
from ._jit import JIT_ENABLED
from .bias import BiasEstimate, BiasKfConfig, estimate_bias, remove_bias
from .geodesy import latlon_to_utm, project_fixes, utm_to_latlon
from .graph import build_graph, solve_gauss_newton
from .odometry import dead_reckon_step, dead_reckon_wheels
from .rate_kf import RateNoiseParams, discretize, offline_gain_iteration, rate_kf_filter
from .rls import RlsConfig, rls_filter
from .sim import GyroNoiseSpec, TrajectorySpec, simulate_run
from .types import GpsFix, GyroSample, OdometryDelta, Pose2, UtmCoord, VehicleGeometry, WheelSpeedSample

__version__ = "0.1.0"

__all__ = [
    "JIT_ENABLED", "BiasEstimate", "BiasKfConfig", "estimate_bias", "remove_bias",
    "latlon_to_utm", "project_fixes", "utm_to_latlon", "build_graph", "solve_gauss_newton",
    "dead_reckon_step", "dead_reckon_wheels", "RateNoiseParams", "discretize",
    "offline_gain_iteration", "rate_kf_filter", "RlsConfig", "rls_filter", "GyroNoiseSpec",
    "TrajectorySpec", "simulate_run", "GpsFix", "GyroSample", "OdometryDelta", "Pose2",
    "UtmCoord", "VehicleGeometry", "WheelSpeedSample",
]
