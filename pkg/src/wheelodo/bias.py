"""Static gyro bias estimation from a stationary window.

The filter drives a scalar pseudo-measurement ``h(b) = ||G_k - b||^2`` towards
zero. Its observation row is ``H_k = 2 (G_k - b)^T`` and its noise variance is
``R_k = 4 (G_k - b)^T S (G_k - b) + 2 tr(S @ S)``, where ``S`` is the gyro
white-noise covariance. ``H_k`` is the negated Jacobian of ``h``, so the
innovation is taken as ``h(b) - 0`` and the update moves ``b`` towards ``G_k``.

Note: the trailing term could also be read as ``2 (tr S)^2``; ``2 tr(S^2)`` is
the variance of a Gaussian quadratic form and is what is used here.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ._jit import jit
from .types import GyroSample

log = logging.getLogger(__name__)

# mean normalized innovation above this flags a window that was not stationary
NIS_WARN_THRESHOLD = 5.0


@dataclass(frozen=True)
class BiasKfConfig:
    sigma0: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    q_bias: np.ndarray = field(default_factory=lambda: 1e-12 * np.eye(3))
    # gyro white-noise covariance; None -> sample covariance of the init window
    noise_cov: np.ndarray | None = None
    init_samples: int = 100

    def __post_init__(self):
        for name in ("sigma0", "q_bias", "noise_cov"):
            m = getattr(self, name)
            if m is None:
                continue
            m = np.asarray(m, dtype=float)
            if m.ndim == 0:
                m = float(m) * np.eye(3)
            if m.shape != (3, 3) or not np.allclose(m, m.T):
                raise ValueError(f"{name} must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(m).min() < -1e-15:
                raise ValueError(f"{name} must be positive semi-definite")
            object.__setattr__(self, name, m)
        if self.init_samples < 1:
            raise ValueError("init_samples must be >= 1")


@dataclass(frozen=True)
class BiasKfState:
    b: np.ndarray
    sigma: np.ndarray
    noise_cov: np.ndarray
    n_updates: int = 0
    n_skipped: int = 0

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sigma), 0.0, None))


@dataclass(frozen=True)
class BiasEstimate:
    b: np.ndarray
    sigma: np.ndarray
    noise_cov: np.ndarray
    n_samples: int
    n_skipped: int
    nis_mean: float

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sigma), 0.0, None))

    @property
    def stationary_consistent(self) -> bool:
        return self.nis_mean <= NIS_WARN_THRESHOLD


@jit
def _bias_kf_update(b, P, g, noise_cov, q_bias):
    """One predict/update. Returns (b, P, nis, ok); P is not updated when the
    innovation covariance is degenerate."""
    P = P + q_bias
    e = g - b
    r_k = 4.0 * (e @ noise_cov @ e) + 2.0 * np.trace(noise_cov @ noise_cov)
    H = 2.0 * e
    PH = P @ H
    s = H @ PH + r_k
    innov = e @ e
    if not (s > 1e-300) or not np.isfinite(s):
        return b, P, 0.0, False
    K = PH / s
    b_new = b + K * innov
    A = np.eye(3) - np.outer(K, H)
    P_new = A @ P @ A.T + np.outer(K, K) * r_k
    P_new = 0.5 * (P_new + P_new.T)
    return b_new, P_new, innov * innov / s, True


@jit
def _bias_kf_run(omega, b, P, noise_cov, q_bias):
    nis_sum = 0.0
    n_ok = 0
    n_skip = 0
    for k in range(omega.shape[0]):
        b, P, nis, ok = _bias_kf_update(b, P, omega[k], noise_cov, q_bias)
        if ok:
            nis_sum += nis
            n_ok += 1
        else:
            n_skip += 1
    return b, P, nis_sum, n_ok, n_skip


def init_bias_state(omega: np.ndarray, cfg: BiasKfConfig | None = None) -> BiasKfState:
    """Initial bias = mean of the first ``cfg.init_samples`` rows of ``omega``."""
    cfg = cfg or BiasKfConfig()
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    head = omega[: cfg.init_samples]
    if len(head) == 0:
        raise ValueError("need at least one sample to initialize the bias filter")
    if cfg.noise_cov is not None:
        noise_cov = cfg.noise_cov
    elif len(head) > 1:
        noise_cov = np.cov(head, rowvar=False)
    else:
        noise_cov = np.zeros((3, 3))
    return BiasKfState(b=head.mean(axis=0), sigma=cfg.sigma0.copy(), noise_cov=noise_cov)


def bias_kf_step(state: BiasKfState, sample: GyroSample, cfg: BiasKfConfig | None = None) -> BiasKfState:
    """Single predict/update cycle. A degenerate step is skipped and counted."""
    cfg = cfg or BiasKfConfig()
    b, P, _, ok = _bias_kf_update(state.b, state.sigma, sample.omega_meas, state.noise_cov, cfg.q_bias)
    if not ok:
        log.debug("bias step at t=%s skipped: singular innovation covariance", sample.t)
        return replace(state, sigma=P, n_skipped=state.n_skipped + 1)
    return replace(state, b=b, sigma=P, n_updates=state.n_updates + 1)


def estimate_bias(omega: np.ndarray, cfg: BiasKfConfig | None = None) -> BiasEstimate:
    """Run the bias filter over a stationary window of 3-axis rates (N, 3)."""
    cfg = cfg or BiasKfConfig()
    omega = np.ascontiguousarray(omega, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(omega)):
        raise ValueError("gyro window contains non-finite samples")
    st = init_bias_state(omega, cfg)
    b, P, nis_sum, n_ok, n_skip = _bias_kf_run(
        omega, st.b.copy(), st.sigma.copy(), st.noise_cov, cfg.q_bias
    )
    nis_mean = nis_sum / n_ok if n_ok else 0.0
    if n_skip:
        log.info("bias filter skipped %d degenerate steps", n_skip)
    if nis_mean > NIS_WARN_THRESHOLD:
        log.warning(
            "calibration window looks non-stationary: mean normalized residual %.3g > %.3g",
            nis_mean,
            NIS_WARN_THRESHOLD,
        )
    return BiasEstimate(b, P, st.noise_cov, len(omega), int(n_skip), float(nis_mean))


def remove_bias(stream: Iterable[GyroSample] | np.ndarray, b) -> list[GyroSample] | np.ndarray:
    """Subtract ``b`` from every sample. Arrays of shape (N, 3) are handled in bulk."""
    b = np.asarray(b, dtype=float).reshape(3)
    if not np.all(np.isfinite(b)):
        raise ValueError("bias must be finite")
    if isinstance(stream, np.ndarray):
        return stream - b
    return [GyroSample(s.t, s.omega_meas - b) for s in stream]


def stationary_samples(omega: Sequence[GyroSample]) -> np.ndarray:
    return np.array([s.omega_meas for s in omega], dtype=float).reshape(-1, 3)
