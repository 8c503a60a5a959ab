"""Trajectory error metrics against simulator ground truth."""
from __future__ import annotations

import numpy as np


def path_length(xy: np.ndarray) -> float:
    xy = np.asarray(xy, dtype=float)[:, :2]
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0


def closure_error(xy: np.ndarray, length: float | None = None) -> tuple[float, float]:
    """End-to-start distance in metres and as a fraction of the path length."""
    xy = np.asarray(xy, dtype=float)[:, :2]
    dist = float(np.hypot(*(xy[-1] - xy[0])))
    length = path_length(xy) if length is None else length
    return dist, dist / length if length > 0 else float("nan")


def position_rmse(est_xy: np.ndarray, truth_xy: np.ndarray) -> float:
    d = np.asarray(est_xy, dtype=float)[:, :2] - np.asarray(truth_xy, dtype=float)[:, :2]
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def interpolate_xy(t_query: np.ndarray, t: np.ndarray, xy: np.ndarray) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    return np.column_stack([np.interp(t_query, t, xy[:, 0]), np.interp(t_query, t, xy[:, 1])])


def residual_stats(estimate: np.ndarray, truth: np.ndarray) -> dict:
    r = np.asarray(estimate, dtype=float) - np.asarray(truth, dtype=float)
    return {"mean": float(np.mean(r)), "variance": float(np.var(r)), "rms": float(np.sqrt(np.mean(r * r)))}
