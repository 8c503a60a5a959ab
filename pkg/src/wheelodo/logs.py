"""CSV log formats shared by the simulator and the command-line tools.

Every file is UTF-8 with a fixed header. Timestamps are written with nine
decimals and all other values with ``repr`` precision, so a write/read cycle
returns the same floats.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

GYRO_HEADER = ("t", "wx", "wy", "wz")
GPS_HEADER = ("t", "lat", "lon")
WHEEL_HEADER = ("t", "omega_z", "v")
TRAJECTORY_HEADER = ("t", "x", "y", "theta")
FILTERED_HEADER = ("t", "raw", "omega_hat", "b_hat")
TRUTH_WHEELS_HEADER = ("t", "omega_left", "v_left", "omega_right", "v_right")
COST_HEADER = ("iteration", "cost")


class LogFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(path, header, columns) -> Path:
    """Write columns (first one is time) with a header line."""
    path = Path(path)
    cols = [np.asarray(c) for c in columns]
    n = len(cols[0])
    if any(len(c) != n for c in cols):
        raise ValueError("columns differ in length")
    first_is_time = header[0] == "t"
    lines = [",".join(header)]
    tcol = cols[0]
    rest = cols[1:]
    for i in range(n):
        head = f"{float(tcol[i]):.9f}" if first_is_time else str(int(tcol[i]))
        lines.append(",".join([head] + [_fmt(c[i]) for c in rest]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path, header) -> tuple[np.ndarray, ...]:
    path = Path(path)
    if not path.exists():
        raise LogFormatError(f"{path}: no such file")
    with path.open(encoding="utf-8") as f:
        first = f.readline().strip()
        if tuple(first.split(",")) != tuple(header):
            raise LogFormatError(f"{path}: expected header {','.join(header)!r}, got {first!r}")
        rows = [line.split(",") for line in f if line.strip()]
    if not rows:
        return tuple(np.empty(0) for _ in header)
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise LogFormatError(f"{path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise LogFormatError(f"{path}: expected {len(header)} columns")
    if not np.all(np.isfinite(data)):
        raise LogFormatError(f"{path}: non-finite values")
    return tuple(data[:, i] for i in range(len(header)))


def write_gyro(path, t, omega):
    omega = np.asarray(omega)
    return write_csv(path, GYRO_HEADER, [t, omega[:, 0], omega[:, 1], omega[:, 2]])


def read_gyro(path):
    t, wx, wy, wz = read_csv(path, GYRO_HEADER)
    return t, np.column_stack([wx, wy, wz]) if len(t) else np.empty((0, 3))


def write_gps(path, t, lat, lon):
    return write_csv(path, GPS_HEADER, [t, lat, lon])


def read_gps(path):
    return read_csv(path, GPS_HEADER)


def write_wheel(path, t, omega_z, v):
    return write_csv(path, WHEEL_HEADER, [t, omega_z, v])


def read_wheel(path):
    return read_csv(path, WHEEL_HEADER)


def write_trajectory(path, t, poses):
    poses = np.asarray(poses)
    return write_csv(path, TRAJECTORY_HEADER, [t, poses[:, 0], poses[:, 1], poses[:, 2]])


def read_trajectory(path):
    t, x, y, th = read_csv(path, TRAJECTORY_HEADER)
    return t, np.column_stack([x, y, th]) if len(t) else np.empty((0, 3))


def write_svg(path, trajectories: dict, size: int = 600) -> Path:
    """Polyline plot of named (N, 2) tracks; equal axis scaling."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd"]
    pts = np.vstack([np.asarray(xy)[:, :2] for xy in trajectories.values() if len(xy)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    pad = 20
    scale = (size - 2 * pad) / span
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">']
    for i, (name, xy) in enumerate(trajectories.items()):
        xy = np.asarray(xy)[:, :2]
        # thin long tracks to keep the file small
        step = max(1, len(xy) // 2000)
        sx = pad + (xy[::step, 0] - lo[0]) * scale
        sy = size - pad - (xy[::step, 1] - lo[1]) * scale
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(sx, sy))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"><title>{name}</title></polyline>')
        out.append(f'<text x="{pad}" y="{pad + 14 * (i + 1)}" fill="{c}" font-size="12">{name}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path
