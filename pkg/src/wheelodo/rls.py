"""Exponentially-weighted recursive least squares spin-rate tracker.

The regressor is ``x_n = [n / n_scale, yhat_{n-1} - y_ref]``: a ramp in the
step index plus a prediction-error feedback term. ``regressor="lagged"``
(default) uses ``y_ref = y_{n-1}``; ``regressor="current"`` uses the current
sample ``y_ref = y_n``, which lets the fit reproduce ``y_n`` almost exactly
and removes little noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit

REGRESSORS = ("lagged", "current")


class RlsStateError(FloatingPointError):
    pass


@dataclass(frozen=True)
class RlsConfig:
    lam: float = 0.98
    p0_scale: float = 1e3
    beta0: tuple[float, float] = (0.0, 0.0)
    n_scale: float = 1000.0
    regressor: str = "lagged"

    def __post_init__(self):
        # lam == 1 is ordinary growing-window least squares
        if not (0.0 < self.lam <= 1.0):
            raise ValueError(f"lambda must be in (0, 1], got {self.lam}")
        if not self.p0_scale > 0:
            raise ValueError(f"p0_scale must be positive, got {self.p0_scale}")
        if not self.n_scale > 0:
            raise ValueError(f"n_scale must be positive, got {self.n_scale}")
        if self.regressor not in REGRESSORS:
            raise ValueError(f"regressor must be one of {REGRESSORS}, got {self.regressor!r}")
        object.__setattr__(self, "beta0", tuple(float(v) for v in self.beta0))


@dataclass(frozen=True)
class RlsState:
    beta: np.ndarray
    P: np.ndarray
    y_prev_hat: float
    y_prev: float
    n: int = 0


def rls_init(cfg: RlsConfig, y0: float, b_static: float | None = None) -> RlsState:
    """Fresh state; ``yhat_{-1}`` and ``y_{-1}`` are seeded with the first sample."""
    beta = np.array(cfg.beta0, dtype=float)
    if b_static is not None:
        beta[1] = b_static
    return RlsState(beta, cfg.p0_scale * np.eye(2), float(y0), float(y0), 0)


@jit
def _rls_update(beta, P, x0, x1, y, lam):
    # P first: the parameter update uses the new P
    px0 = P[0, 0] * x0 + P[0, 1] * x1
    px1 = P[1, 0] * x0 + P[1, 1] * x1
    den = lam + x0 * px0 + x1 * px1
    Pn = np.empty((2, 2))
    Pn[0, 0] = (P[0, 0] - px0 * px0 / den) / lam
    Pn[0, 1] = (P[0, 1] - px0 * px1 / den) / lam
    Pn[1, 0] = Pn[0, 1]
    Pn[1, 1] = (P[1, 1] - px1 * px1 / den) / lam
    err = y - (x0 * beta[0] + x1 * beta[1])
    bn = np.empty(2)
    bn[0] = beta[0] + (Pn[0, 0] * x0 + Pn[0, 1] * x1) * err
    bn[1] = beta[1] + (Pn[1, 0] * x0 + Pn[1, 1] * x1) * err
    return bn, Pn, den


@jit
def _rls_run(y, beta, P, y_prev_hat, y_prev, n0, lam, n_scale, lagged):
    m = y.shape[0]
    yhat = np.empty(m)
    betas = np.empty((m, 2))
    for k in range(m):
        n = n0 + k + 1
        x0 = n / n_scale
        x1 = y_prev_hat - (y_prev if lagged else y[k])
        beta, P, den = _rls_update(beta, P, x0, x1, y[k], lam)
        if not den > 0.0:
            return yhat[:k], betas[:k], beta, P, y_prev_hat, y_prev, k
        y_prev_hat = x0 * beta[0] + x1 * beta[1]
        y_prev = y[k]
        yhat[k] = y_prev_hat
        betas[k] = beta
    return yhat, betas, beta, P, y_prev_hat, y_prev, m


def rls_step(state: RlsState, y: float, cfg: RlsConfig) -> tuple[RlsState, float]:
    """Consume one sample, returning the new state and the fitted output."""
    if not math.isfinite(y):
        raise ValueError("measurement must be finite")
    n = state.n + 1
    x0 = n / cfg.n_scale
    x1 = state.y_prev_hat - (state.y_prev if cfg.regressor == "lagged" else y)
    beta, P, den = _rls_update(state.beta, state.P, x0, x1, float(y), cfg.lam)
    if not den > 0.0:
        raise RlsStateError(f"non-positive RLS denominator {den} at step {n}")
    y_hat = float(x0 * beta[0] + x1 * beta[1])
    return RlsState(beta, P, y_hat, float(y), n), y_hat


def rls_filter(
    y: np.ndarray, cfg: RlsConfig | None = None, b_static: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Run RLS over a stream. Returns (yhat (N,), beta history (N, 2))."""
    cfg = cfg or RlsConfig()
    y = np.ascontiguousarray(y, dtype=float)
    if y.size == 0:
        return np.empty(0), np.empty((0, 2))
    if not np.all(np.isfinite(y)):
        raise ValueError("measurement stream must be finite")
    st = rls_init(cfg, y[0], b_static)
    yhat, betas, *_, done = _rls_run(
        y, st.beta, st.P, st.y_prev_hat, st.y_prev, 0, cfg.lam, cfg.n_scale, cfg.regressor == "lagged"
    )
    if done != len(y):
        raise RlsStateError(f"non-positive RLS denominator at step {done + 1}")
    return yhat, betas


def regressors(y: np.ndarray, yhat: np.ndarray, cfg: RlsConfig) -> np.ndarray:
    """Rebuild the (N, 2) regressor rows a run used, from its inputs and outputs."""
    y = np.asarray(y, dtype=float)
    prev_hat = np.concatenate([[y[0]], yhat[:-1]])
    ref = np.concatenate([[y[0]], y[:-1]]) if cfg.regressor == "lagged" else y
    n = np.arange(1, len(y) + 1) / cfg.n_scale
    return np.column_stack([n, prev_hat - ref])
