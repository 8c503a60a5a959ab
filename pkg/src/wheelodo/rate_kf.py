"""Steady-state Kalman filter tracking spin rate and bias drift.

State ``X = [omega, b]`` with continuous dynamics ``X' = w`` (zero drift
matrix) and measurement ``z = [1 1] X + v``. The gain is found offline by
iterating the discrete filter until the gain settles (the covariance itself
grows without bound along the unobservable ``[1, -1]`` direction). The
resulting continuous filter ``X' = -m X + k z`` with ``m = k [1 1]`` is then
discretised exactly through the closed-form eigendecomposition of ``m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit

H = np.array([1.0, 1.0])
F_CONT = np.zeros((2, 2))


class GainIterationError(RuntimeError):
    def __init__(self, message: str, last_delta: float):
        super().__init__(message)
        self.last_delta = last_delta


@dataclass(frozen=True)
class RateNoiseParams:
    q_w: float = 4e-6
    q_b: float = 4e-10
    q_n: float = 4e-6
    T: float = 0.01

    def __post_init__(self):
        for name in ("q_w", "q_b", "q_n", "T"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass(frozen=True)
class RateState:
    omega_hat: float = 0.0
    b_hat: float = 0.0

    @property
    def total(self) -> float:
        """Filtered measurement ``H X``; the only observable combination."""
        return self.omega_hat + self.b_hat


@dataclass(frozen=True)
class SteadyStateGain:
    k1: float
    k2: float
    T: float
    phi: np.ndarray
    gamma: np.ndarray
    iterations: int = 0

    def __post_init__(self):
        if not self.k1 + self.k2 > 0:
            raise ValueError(f"k1 + k2 must be positive, got {self.k1 + self.k2}")


@jit
def kf_gain_step(P, q_w, q_b, q_n):
    """One discrete KF cycle with F = I, H = [1 1]; Joseph-form update."""
    Pp = P.copy()
    Pp[0, 0] += q_w
    Pp[1, 1] += q_b
    ph0 = Pp[0, 0] + Pp[0, 1]
    ph1 = Pp[1, 0] + Pp[1, 1]
    s = ph0 + ph1 + q_n
    k0 = ph0 / s
    k1 = ph1 / s
    A = np.empty((2, 2))
    A[0, 0] = 1.0 - k0
    A[0, 1] = -k0
    A[1, 0] = -k1
    A[1, 1] = 1.0 - k1
    Pn = A @ Pp @ A.T
    Pn[0, 0] += k0 * k0 * q_n
    Pn[0, 1] += k0 * k1 * q_n
    Pn[1, 0] += k1 * k0 * q_n
    Pn[1, 1] += k1 * k1 * q_n
    return Pn, k0, k1


@jit
def _iterate_gain(P0, q_w, q_b, q_n, max_iter, tol):
    P = P0.copy()
    k0_prev = np.nan
    k1_prev = np.nan
    delta = np.inf
    for it in range(1, max_iter + 1):
        P, k0, k1 = kf_gain_step(P, q_w, q_b, q_n)
        if it > 1:
            delta = max(abs(k0 - k0_prev), abs(k1 - k1_prev))
            if delta < tol:
                return k0, k1, it, delta, True
        k0_prev = k0
        k1_prev = k1
    return k0_prev, k1_prev, max_iter, delta, False


def discretize(k1: float, k2: float, T: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order discretisation of ``X' = -m X + [k1, k2] z``.

    Eigenvalues of ``m`` are ``k1 + k2`` (vector ``[k1, k2]``) and 0 (vector
    ``[1, -1]``).
    """
    lam = k1 + k2
    if lam == 0.0 or not math.isfinite(lam):
        raise ValueError("k1 + k2 must be non-zero and finite")
    if T < 0:
        raise ValueError("T must be non-negative")
    S = np.array([[k1, 1.0], [k2, -1.0]])
    S_inv = np.array([[1.0, 1.0], [k2, -k1]]) / lam
    decay = math.exp(-lam * T)
    phi = S @ np.diag([decay, 1.0]) @ S_inv
    # -expm1 keeps (1 - e^{-lam T}) accurate for small lam T
    integral = S @ np.diag([-math.expm1(-lam * T) / lam, T]) @ S_inv
    gamma = integral @ np.array([k1, k2])
    return phi, gamma


def offline_gain_iteration(
    noise: RateNoiseParams,
    P0: np.ndarray | None = None,
    max_iter: int = 10_000_000,
    tol: float = 1e-12,
) -> SteadyStateGain:
    """Iterate the discrete filter until the gain changes by less than ``tol``."""
    P0 = 1e-2 * np.eye(2) if P0 is None else np.asarray(P0, dtype=float)
    if P0.shape != (2, 2) or not np.allclose(P0, P0.T) or np.linalg.eigvalsh(P0).min() < 0:
        raise ValueError("P0 must be a symmetric PSD 2x2 matrix")
    if not tol > 0:
        raise ValueError("tol must be positive")
    k1, k2, iters, delta, ok = _iterate_gain(
        np.ascontiguousarray(P0), noise.q_w, noise.q_b, noise.q_n, int(max_iter), float(tol)
    )
    if not ok:
        raise GainIterationError(
            f"gain did not settle within {max_iter} iterations (last change {delta:.3g})", delta
        )
    if not k1 + k2 > 0:
        raise ValueError(f"invalid steady state: k1 + k2 = {k1 + k2}")
    phi, gamma = discretize(k1, k2, noise.T)
    return SteadyStateGain(float(k1), float(k2), noise.T, phi, gamma, int(iters))


def with_period(gain: SteadyStateGain, T: float) -> SteadyStateGain:
    phi, gamma = discretize(gain.k1, gain.k2, T)
    return SteadyStateGain(gain.k1, gain.k2, T, phi, gamma, gain.iterations)


def rate_kf_step(state: RateState, gain: SteadyStateGain, z: float) -> RateState:
    if not math.isfinite(z):
        raise ValueError("measurement must be finite")
    x = gain.phi @ np.array([state.omega_hat, state.b_hat]) + gain.gamma * z
    return RateState(float(x[0]), float(x[1]))


@jit
def _kf_run(z, phi, gamma, x0, x1):
    n = z.shape[0]
    out = np.empty((n, 2))
    for k in range(n):
        y0 = phi[0, 0] * x0 + phi[0, 1] * x1 + gamma[0] * z[k]
        y1 = phi[1, 0] * x0 + phi[1, 1] * x1 + gamma[1] * z[k]
        x0 = y0
        x1 = y1
        out[k, 0] = x0
        out[k, 1] = x1
    return out


def rate_kf_filter(z: np.ndarray, gain: SteadyStateGain, x0: RateState | None = None) -> np.ndarray:
    """Filter a whole stream; returns (N, 2) rows of ``[omega_hat, b_hat]``.

    Without ``x0`` the filter starts at ``[z[0], 0]``.
    """
    z = np.ascontiguousarray(z, dtype=float)
    if z.size == 0:
        return np.empty((0, 2))
    if not np.all(np.isfinite(z)):
        raise ValueError("measurement stream must be finite")
    if x0 is None:
        x0 = RateState(float(z[0]), 0.0)
    return _kf_run(z, np.ascontiguousarray(gain.phi), np.ascontiguousarray(gain.gamma), x0.omega_hat, x0.b_hat)


def observability_matrix(F: np.ndarray = F_CONT, h: np.ndarray = H) -> np.ndarray:
    return np.vstack([h, h @ F])
