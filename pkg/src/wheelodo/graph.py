"""Pose-chain factor graph with GPS position factors, solved by Gauss-Newton.

Variables are planar poses in time order. Consecutive poses are linked by
between factors (residual: SE(2) log of ``measured^-1 * (a^-1 * b)``), some
poses carry a GPS factor on their position, and the first pose carries a
weak prior that fixes the gauge. Because the between factors form a chain,
the normal equations are block tridiagonal with 3x3 blocks; they are
factorised from the last pose towards the anchored first one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ._jit import jit
from .odometry import SIGMA_FLOOR, SIGMA_FRACTION, odometry_sigmas
from .types import OdometryDelta, Pose2, wrap_angle

log = logging.getLogger(__name__)

PRIOR_SIGMA = 1e3
GPS_SIGMA = 5.0
# GPS timestamps this close to an odometry epoch attach to it without a split
TIME_EPS = 1e-9


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class VariableId:
    index: int


@dataclass(frozen=True)
class BetweenFactor:
    from_: VariableId
    to: VariableId
    measured: OdometryDelta


@dataclass(frozen=True)
class GpsFactor:
    on: VariableId
    measured_xy: tuple[float, float]
    sigma_m: float = GPS_SIGMA


@dataclass
class Graph:
    """Array-backed graph; ``between_info[k]`` is the 3x3 information of factor k -> k+1."""

    t: np.ndarray
    initial: np.ndarray  # (n, 3)
    between: np.ndarray  # (n-1, 3)
    between_info: np.ndarray  # (n-1, 3, 3)
    gps_index: np.ndarray  # (k,)
    gps_xy: np.ndarray  # (k, 2)
    gps_sigma: np.ndarray  # (k,)
    prior_pose: np.ndarray  # (3,)
    prior_sigma: np.ndarray | None  # (3,), None disables the anchor
    n_gps_dropped: int = 0
    n_splits: int = 0

    def __post_init__(self):
        n = len(self.initial)
        if n == 0:
            raise ValueError("graph needs at least one variable")
        if self.between.shape != (n - 1, 3) or self.between_info.shape != (n - 1, 3, 3):
            raise ValueError("between factors must form a chain over all variables")
        if len(self.gps_index) and (self.gps_index.min() < 0 or self.gps_index.max() >= n):
            raise ValueError("GPS factor refers to a missing variable")
        if np.any(self.gps_sigma <= 0):
            raise ValueError("GPS sigma must be positive")

    @property
    def n_variables(self) -> int:
        return len(self.initial)

    def between_factors(self):
        for k in range(len(self.between)):
            cov = np.linalg.inv(self.between_info[k])
            d = self.between[k]
            yield BetweenFactor(VariableId(k), VariableId(k + 1), OdometryDelta(d[0], d[1], d[2], 0.5 * (cov + cov.T)))

    def gps_factors(self):
        for i, xy, s in zip(self.gps_index, self.gps_xy, self.gps_sigma):
            yield GpsFactor(VariableId(int(i)), (float(xy[0]), float(xy[1])), float(s))

    @classmethod
    def from_factors(cls, initial, betweens, gps=(), prior_pose=None,
                     prior_sigma=PRIOR_SIGMA, t=None) -> Graph:
        initial = np.asarray([p.as_array() if isinstance(p, Pose2) else p for p in initial], dtype=float)
        betweens = sorted(betweens, key=lambda f: f.from_.index)
        for k, f in enumerate(betweens):
            if f.from_.index != k or f.to.index != k + 1:
                raise ValueError("between factors must link consecutive variables")
        gps = list(gps)
        return cls(
            t=np.arange(len(initial), dtype=float) if t is None else np.asarray(t, dtype=float),
            initial=initial,
            between=np.array([f.measured.as_array() for f in betweens]).reshape(-1, 3),
            between_info=np.array([np.linalg.inv(f.measured.covariance) for f in betweens]).reshape(-1, 3, 3),
            gps_index=np.array([g.on.index for g in gps], dtype=np.int64),
            gps_xy=np.array([g.measured_xy for g in gps], dtype=float).reshape(-1, 2),
            gps_sigma=np.array([g.sigma_m for g in gps], dtype=float),
            prior_pose=initial[0].copy() if prior_pose is None else np.asarray(prior_pose, dtype=float),
            prior_sigma=None if prior_sigma is None else np.broadcast_to(np.asarray(prior_sigma, dtype=float), (3,)).copy(),
        )


@dataclass(frozen=True)
class GnResult:
    poses: np.ndarray
    final_error: float
    iterations: int
    converged: bool
    diverged: bool
    cost_history: np.ndarray


# --- residuals and Jacobians -------------------------------------------------

@jit
def _vinv_coeffs(phi):
    """a(phi) = (phi/2) cot(phi/2) and its derivative."""
    if abs(phi) < 1e-4:
        p2 = phi * phi
        return 1.0 - p2 / 12.0 - p2 * p2 / 720.0, -phi / 6.0 - p2 * phi / 180.0
    h = 0.5 * phi
    s = np.sin(h)
    cot = np.cos(h) / s
    return h * cot, 0.5 * cot - 0.5 * h / (s * s)


@jit
def between_residual(a, b, meas, with_jac):
    """Residual of one between factor; Jacobians w.r.t. additive (x, y, theta)."""
    ca, sa = np.cos(a[2]), np.sin(a[2])
    dxw = b[0] - a[0]
    dyw = b[1] - a[1]
    # relative pose a^-1 b
    tdx = ca * dxw + sa * dyw
    tdy = -sa * dxw + ca * dyw
    # error pose meas^-1 (a^-1 b)
    cm, sm = np.cos(meas[2]), np.sin(meas[2])
    ux = tdx - meas[0]
    uy = tdy - meas[1]
    ex = cm * ux + sm * uy
    ey = -sm * ux + cm * uy
    phi = wrap_angle(b[2] - a[2] - meas[2])
    al, dal = _vinv_coeffs(phi)
    hp = 0.5 * phi
    r = np.empty(3)
    r[0] = al * ex + hp * ey
    r[1] = -hp * ex + al * ey
    r[2] = phi
    Ja = np.zeros((3, 3))
    Jb = np.zeros((3, 3))
    if with_jac:
        # d r_xy / d e = V^-1, d r_xy / d phi
        v00, v01, v10, v11 = al, hp, -hp, al
        drp0 = dal * ex + 0.5 * ey
        drp1 = -0.5 * ex + dal * ey
        # d e / d t_rel = R_m^T ; d t_rel / d t_b = R_a^T
        m00, m01, m10, m11 = cm, sm, -sm, cm
        g00 = v00 * m00 + v01 * m10
        g01 = v00 * m01 + v01 * m11
        g10 = v10 * m00 + v11 * m10
        g11 = v10 * m01 + v11 * m11
        # G @ R_a^T
        q00 = g00 * ca - g01 * sa
        q01 = g00 * sa + g01 * ca
        q10 = g10 * ca - g11 * sa
        q11 = g10 * sa + g11 * ca
        Jb[0, 0] = q00
        Jb[0, 1] = q01
        Jb[1, 0] = q10
        Jb[1, 1] = q11
        Jb[0, 2] = drp0
        Jb[1, 2] = drp1
        Jb[2, 2] = 1.0
        Ja[0, 0] = -q00
        Ja[0, 1] = -q01
        Ja[1, 0] = -q10
        Ja[1, 1] = -q11
        # d t_rel / d theta_a = (tdy, -tdx)
        Ja[0, 2] = g00 * tdy - g01 * tdx - drp0
        Ja[1, 2] = g10 * tdy - g11 * tdx - drp1
        Ja[2, 2] = -1.0
    return r, Ja, Jb


@jit
def gps_residual(p, xy):
    r = np.empty(2)
    r[0] = p[0] - xy[0]
    r[1] = p[1] - xy[1]
    J = np.zeros((2, 3))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    return r, J


@jit
def prior_residual(p, prior):
    r = np.empty(3)
    r[0] = p[0] - prior[0]
    r[1] = p[1] - prior[1]
    r[2] = wrap_angle(p[2] - prior[2])
    return r


# --- assembly and solve ------------------------------------------------------

@jit
def _linearize(poses, meas, info, gidx, gxy, gw, prior, prior_w, use_prior, with_jac):
    n = poses.shape[0]
    D = np.zeros((n, 3, 3))
    U = np.zeros((max(n - 1, 0), 3, 3))  # block (k, k+1)
    g = np.zeros((n, 3))
    cost = 0.0
    for k in range(n - 1):
        r, Ja, Jb = between_residual(poses[k], poses[k + 1], meas[k], with_jac)
        W = info[k]
        Wr = W @ r
        cost += r @ Wr
        if with_jac:
            WJa = W @ Ja
            WJb = W @ Jb
            D[k] += Ja.T @ WJa
            D[k + 1] += Jb.T @ WJb
            U[k] += Ja.T @ WJb
            g[k] += Ja.T @ Wr
            g[k + 1] += Jb.T @ Wr
    for j in range(gidx.shape[0]):
        i = gidx[j]
        r, J = gps_residual(poses[i], gxy[j])
        w = gw[j]
        cost += w * (r[0] * r[0] + r[1] * r[1])
        if with_jac:
            D[i, 0, 0] += w
            D[i, 1, 1] += w
            g[i, 0] += w * r[0]
            g[i, 1] += w * r[1]
    if use_prior:
        r = prior_residual(poses[0], prior)
        for c in range(3):
            cost += prior_w[c] * r[c] * r[c]
            if with_jac:
                D[0, c, c] += prior_w[c]
                g[0, c] += prior_w[c] * r[c]
    return D, U, g, cost


@jit
def _chol3(A):
    L = np.zeros((3, 3))
    for i in range(3):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not s > 0.0:
                    return L, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return L, True


@jit
def _chol3_solve(L, B):
    """Solve (L L^T) X = B for B of shape (3, m)."""
    m = B.shape[1]
    X = np.empty((3, m))
    for c in range(m):
        y0 = B[0, c] / L[0, 0]
        y1 = (B[1, c] - L[1, 0] * y0) / L[1, 1]
        y2 = (B[2, c] - L[2, 0] * y0 - L[2, 1] * y1) / L[2, 2]
        x2 = y2 / L[2, 2]
        x1 = (y1 - L[2, 1] * x2) / L[1, 1]
        x0 = (y0 - L[1, 0] * x1 - L[2, 0] * x2) / L[0, 0]
        X[0, c] = x0
        X[1, c] = x1
        X[2, c] = x2
    return X


@jit
def solve_block_tridiagonal(D, U, rhs):
    """Solve the SPD block-tridiagonal system (diag D, upper U) from the last block up.

    Returns (x, ok); ok is False when a pivot block is not positive definite.
    """
    n = D.shape[0]
    S = np.empty((n, 3, 3))
    Ls = np.empty((n, 3, 3))
    y = np.empty((n, 3))
    x = np.zeros((n, 3))
    S[n - 1] = D[n - 1]
    y[n - 1] = rhs[n - 1]
    for k in range(n - 1, -1, -1):
        L, ok = _chol3(S[k])
        if not ok:
            return x, False
        Ls[k] = L
        if k > 0:
            Uk = U[k - 1]  # block (k-1, k)
            Z = _chol3_solve(L, Uk.T.copy())  # S_k^-1 U^T, 3x3
            yk = _chol3_solve(L, y[k].reshape(3, 1).copy())
            S[k - 1] = D[k - 1] - Uk @ Z
            y[k - 1] = rhs[k - 1] - (Uk @ yk)[:, 0]
    x[0] = _chol3_solve(Ls[0], y[0].reshape(3, 1).copy())[:, 0]
    for k in range(1, n):
        b = y[k] - U[k - 1].T @ x[k - 1]
        x[k] = _chol3_solve(Ls[k], b.reshape(3, 1).copy())[:, 0]
    return x, True


@jit
def _linearize_factors(poses, meas, info, gidx, gxy, gw, prior, prior_w, use_prior):
    """Per-factor residuals/Jacobians of the chain plus unary (GPS, prior) blocks."""
    n = poses.shape[0]
    m = max(n - 1, 0)
    R = np.empty((m, 3))
    JA = np.empty((m, 3, 3))
    JB = np.empty((m, 3, 3))
    Du = np.zeros((n, 3, 3))
    gu = np.zeros((n, 3))
    cost = 0.0
    for k in range(m):
        r, Ja, Jb = between_residual(poses[k], poses[k + 1], meas[k], True)
        R[k] = r
        JA[k] = Ja
        JB[k] = Jb
        cost += r @ (info[k] @ r)
    for j in range(gidx.shape[0]):
        i = gidx[j]
        r, _ = gps_residual(poses[i], gxy[j])
        w = gw[j]
        cost += w * (r[0] * r[0] + r[1] * r[1])
        Du[i, 0, 0] += w
        Du[i, 1, 1] += w
        gu[i, 0] += w * r[0]
        gu[i, 1] += w * r[1]
    if use_prior:
        r = prior_residual(poses[0], prior)
        for c in range(3):
            cost += prior_w[c] * r[c] * r[c]
            Du[0, c, c] += prior_w[c]
            gu[0, c] += prior_w[c] * r[c]
    return R, JA, JB, Du, gu, cost


@jit
def _solve_chain(R, JA, JB, W, Du, gu):
    """Gauss-Newton step for a pose chain, eliminating from the last pose back.

    The information handed across factor k is ``K = W (W + N)^-1 N``, where N
    is everything beyond the factor mapped into its residual space. This
    harmonic form has no subtraction, so a weak anchor on the first pose is
    not lost to cancellation against the stiff odometry blocks.
    Returns (step, ok); ok is False when the first pivot is not PD.
    """
    n = Du.shape[0]
    step = np.zeros((n, 3))
    C = np.empty((max(n - 1, 0), 3, 3))
    LA = np.empty((max(n - 1, 0), 3, 3))
    NN = np.empty((max(n - 1, 0), 3))
    M = Du[n - 1].copy()
    mv = -gu[n - 1]
    for k in range(n - 2, -1, -1):
        Ck = np.linalg.inv(JB[k])
        N = Ck.T @ M @ Ck
        N = 0.5 * (N + N.T)
        nn = Ck.T @ mv
        L, ok = _chol3(W[k] + N)
        if not ok:
            return step, False
        X = _chol3_solve(L, N.copy())
        K = W[k] @ X
        K = 0.5 * (K + K.T)
        h = W[k] @ np.ascontiguousarray(_chol3_solve(L, nn.reshape(3, 1).copy())[:, 0])
        Ja = JA[k]
        M = Du[k] + Ja.T @ K @ Ja
        M = 0.5 * (M + M.T)
        mv = -gu[k] - Ja.T @ (K @ R[k] + h)
        C[k] = Ck
        LA[k] = L
        NN[k] = nn
    L0, ok = _chol3(M)
    if not ok:
        return step, False
    step[0] = _chol3_solve(L0, mv.reshape(3, 1).copy())[:, 0]
    for k in range(n - 1):
        c = R[k] + JA[k] @ step[k]
        u = _chol3_solve(LA[k], (NN[k] - W[k] @ c).reshape(3, 1).copy())[:, 0]
        step[k + 1] = C[k] @ np.ascontiguousarray(u)
    return step, True


def _arrays(graph: Graph):
    use_prior = graph.prior_sigma is not None
    prior_w = 1.0 / np.asarray(graph.prior_sigma) ** 2 if use_prior else np.zeros(3)
    return (
        np.ascontiguousarray(graph.between, dtype=float),
        np.ascontiguousarray(graph.between_info, dtype=float),
        np.ascontiguousarray(graph.gps_index, dtype=np.int64),
        np.ascontiguousarray(graph.gps_xy, dtype=float).reshape(-1, 2),
        np.ascontiguousarray(1.0 / graph.gps_sigma**2, dtype=float),
        np.ascontiguousarray(graph.prior_pose, dtype=float),
        np.ascontiguousarray(prior_w, dtype=float),
        use_prior,
    )


def graph_cost(graph: Graph, poses: np.ndarray) -> float:
    """Weighted squared error sum over all factors."""
    poses = np.ascontiguousarray(poses, dtype=float).reshape(-1, 3)
    return float(_linearize(poses, *_arrays(graph), False)[3])


def linearize(graph: Graph, poses: np.ndarray):
    """Return (D, U, g, cost): Hessian blocks of the cost/2 and gradient of cost/2."""
    poses = np.ascontiguousarray(poses, dtype=float).reshape(-1, 3)
    return _linearize(poses, *_arrays(graph), True)


def solve_gauss_newton(graph: Graph, max_iter: int = 50, tol: float = 1e-9,
                       initial: np.ndarray | None = None) -> GnResult:
    """Gauss-Newton MAP estimate.

    A step is kept only if it lowers the cost. The solve stops when the
    relative decrease falls below ``tol``; three rejected steps in a row end
    it with ``diverged`` set and the best poses so far.
    """
    args = _arrays(graph)
    info = args[1]
    poses = np.array(graph.initial if initial is None else initial, dtype=float)
    lin = _linearize_factors(poses, *args)
    cost = lin[5]
    history = [cost]
    converged = diverged = False
    rejects = 0
    it = 0
    for it in range(1, max_iter + 1):
        step, ok = _solve_chain(lin[0], lin[1], lin[2], info, lin[3], lin[4])
        if not ok:
            raise SingularSystemError(
                "normal equations are singular: the graph has gauge freedom; "
                "add the anchor prior on the first pose"
            )
        cand = poses + step
        cand[:, 2] = (cand[:, 2] + math.pi) % (2 * math.pi) - math.pi
        new_cost = float(_linearize(cand, *args, False)[3])
        if new_cost < cost:
            rel = (cost - new_cost) / max(cost, 1e-300)
            poses, cost = cand, new_cost
            history.append(cost)
            rejects = 0
            if rel < tol:
                converged = True
                break
            lin = _linearize_factors(poses, *args)
            cost = lin[5]
        else:
            # no decrease: at the optimum to rounding, or a bad step
            if new_cost - cost <= tol * max(cost, 1e-300) or cost < 1e-300:
                converged = True
                break
            rejects += 1
            history.append(cost)
            if rejects >= 3:
                diverged = True
                log.warning("Gauss-Newton failed to decrease the cost 3 times; returning best estimate")
                break
    else:
        log.info("Gauss-Newton stopped at max_iter=%d", max_iter)
    return GnResult(poses, float(cost), it, converged, diverged, np.array(history))


def gradient(graph: Graph, poses: np.ndarray) -> np.ndarray:
    """Gradient of the weighted squared error w.r.t. (x, y, theta) of every pose."""
    return 2.0 * linearize(graph, poses)[2]


# --- construction --------------------------------------------------------------

@jit
def _chain(pose0, deltas):
    n = deltas.shape[0]
    out = np.empty((n + 1, 3))
    out[0] = pose0
    x, y, th = pose0[0], pose0[1], pose0[2]
    for k in range(n):
        c, s = np.cos(th), np.sin(th)
        x, y, th = x + c * deltas[k, 0] - s * deltas[k, 1], y + s * deltas[k, 0] + c * deltas[k, 1], wrap_angle(th + deltas[k, 2])
        out[k + 1, 0] = x
        out[k + 1, 1] = y
        out[k + 1, 2] = th
    return out


def chain_poses(pose0, deltas: np.ndarray) -> np.ndarray:
    return _chain(np.asarray(pose0, dtype=float), np.ascontiguousarray(deltas, dtype=float).reshape(-1, 3))


def build_graph(
    odom_t: np.ndarray,
    deltas: np.ndarray,
    gps_t: np.ndarray,
    gps_xy: np.ndarray,
    yaw0: float = 0.0,
    covariances: np.ndarray | None = None,
    gps_sigma: float = GPS_SIGMA,
    sigma_fraction: float = SIGMA_FRACTION,
    sigma_floor: float = SIGMA_FLOOR,
    prior_sigma: float | None = PRIOR_SIGMA,
) -> Graph:
    """Interleave odometry epochs and GPS fixes into one pose chain.

    ``deltas[k]`` moves ``odom_t[k] -> odom_t[k+1]``. A fix that falls inside
    an interval splits that delta linearly at the fix time; split pieces get
    covariances from the fractional rule, unsplit ones keep ``covariances``
    (or the rule when none are given). ``gps_xy`` is already metric and
    relative to the run origin. Fixes outside the odometry span are dropped.
    """
    odom_t = np.asarray(odom_t, dtype=float)
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 3)
    if len(odom_t) == 0:
        raise ValueError("odometry stream is empty")
    if len(deltas) != len(odom_t) - 1:
        raise ValueError("need one delta per odometry interval")
    if np.any(np.diff(odom_t) <= 0):
        raise ValueError("odometry timestamps must be strictly increasing")
    if not gps_sigma > 0:
        raise ValueError(f"GPS sigma must be positive, got {gps_sigma}")
    gps_t = np.asarray(gps_t, dtype=float)
    gps_xy = np.asarray(gps_xy, dtype=float).reshape(-1, 2)
    if np.any(np.diff(gps_t) < 0):
        raise ValueError("GPS timestamps must be sorted")

    def rule_info(d):
        return np.diag(1.0 / odometry_sigmas(d, sigma_fraction, sigma_floor) ** 2)

    inside = (gps_t >= odom_t[0] - TIME_EPS) & (gps_t <= odom_t[-1] + TIME_EPS)
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        log.info("dropped %d GPS fixes outside the odometry time span", dropped)
    gps_t = gps_t[inside]
    gps_xy = gps_xy[inside]
    # interval index each fix falls into: odom_t[k] <= t < odom_t[k+1]
    k_of = np.clip(np.searchsorted(odom_t, gps_t, side="right") - 1, 0, len(deltas) - 1 if len(deltas) else 0)

    ts, meas, infos, g_idx, g_xy = [odom_t[0]], [], [], [], []
    splits = 0
    j = 0
    n_fix = len(gps_t)
    for k in range(len(deltas)):
        t0, t1 = odom_t[k], odom_t[k + 1]
        # fixes at the start epoch
        while j < n_fix and k_of[j] == k and abs(gps_t[j] - t0) <= TIME_EPS:
            g_idx.append(len(ts) - 1)
            g_xy.append(gps_xy[j])
            j += 1
        done = 0.0
        d = deltas[k]
        while j < n_fix and k_of[j] == k and gps_t[j] < t1 - TIME_EPS:
            alpha = (gps_t[j] - t0) / (t1 - t0)
            piece = (alpha - done) * d
            meas.append(piece)
            infos.append(rule_info(piece))
            ts.append(gps_t[j])
            g_idx.append(len(ts) - 1)
            g_xy.append(gps_xy[j])
            done = alpha
            splits += 1
            j += 1
        if done > 0.0:
            piece = (1.0 - done) * d
            meas.append(piece)
            infos.append(rule_info(piece))
        else:
            meas.append(d.copy())
            infos.append(np.linalg.inv(covariances[k]) if covariances is not None else rule_info(d))
        ts.append(t1)
        # fixes within TIME_EPS before t1 belong to the end epoch
        while j < n_fix and k_of[j] == k and gps_t[j] >= t1 - TIME_EPS:
            g_idx.append(len(ts) - 1)
            g_xy.append(gps_xy[j])
            j += 1
    # fixes at the final epoch
    while j < n_fix:
        g_idx.append(len(ts) - 1)
        g_xy.append(gps_xy[j])
        j += 1

    meas_arr = np.array(meas, dtype=float).reshape(-1, 3)
    pose0 = np.array([0.0, 0.0, wrap_angle(float(yaw0))])
    return Graph(
        t=np.array(ts),
        initial=chain_poses(pose0, meas_arr),
        between=meas_arr,
        between_info=np.array(infos, dtype=float).reshape(-1, 3, 3),
        gps_index=np.array(g_idx, dtype=np.int64),
        gps_xy=np.array(g_xy, dtype=float).reshape(-1, 2),
        gps_sigma=np.full(len(g_idx), float(gps_sigma)),
        prior_pose=pose0,
        prior_sigma=None if prior_sigma is None else np.full(3, float(prior_sigma)),
        n_gps_dropped=dropped,
        n_splits=splits,
    )
