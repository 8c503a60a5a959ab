import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize

from oracles import se2_log, se2_log_batch, se2_mat, se2_mat_batch
from wheelodo.graph import (
    BetweenFactor,
    GpsFactor,
    Graph,
    SingularSystemError,
    VariableId,
    _arrays,
    _linearize_factors,
    _solve_chain,
    between_residual,
    build_graph,
    chain_poses,
    gps_residual,
    gradient,
    graph_cost,
    linearize,
    prior_residual,
    solve_block_tridiagonal,
    solve_gauss_newton,
)
from wheelodo.types import OdometryDelta, Pose2

small = st.floats(-3.0, 3.0, allow_nan=False)
pose3 = st.tuples(small, small, st.floats(-3.1, 3.1))


def fd_jacobian(f, x, h=1e-6):
    J = np.empty((len(f(x)), len(x)))
    for i in range(len(x)):
        e = np.zeros(len(x))
        e[i] = h
        J[:, i] = (f(x + e) - f(x - e)) / (2 * h)
    return J


@given(pose3, pose3, pose3)
def test_between_residual_matches_matrix_log(a, b, m):
    a, b, m = map(np.array, (a, b, m))
    err = np.linalg.inv(se2_mat(m)) @ np.linalg.inv(se2_mat(a)) @ se2_mat(b)
    phi = math.atan2(err[1, 0], err[0, 0])
    if abs(abs(phi) - math.pi) < 1e-3:
        return  # log is ambiguous at pi
    r, _, _ = between_residual(a, b, m, False)
    np.testing.assert_allclose(r, se2_log(err), atol=1e-8)


@given(pose3, pose3, pose3)
def test_between_jacobians_finite_difference(a, b, m):
    a, b, m = map(np.array, (a, b, m))
    phi = b[2] - a[2] - m[2]
    if abs(math.remainder(phi, 2 * math.pi)) > math.pi - 1e-2:
        return  # wrap discontinuity
    _, Ja, Jb = between_residual(a, b, m, True)
    na = fd_jacobian(lambda x: between_residual(x, b, m, False)[0], a)
    nb = fd_jacobian(lambda x: between_residual(a, x, m, False)[0], b)
    np.testing.assert_allclose(Ja, na, rtol=1e-5, atol=1e-6)
    np.testing.assert_allclose(Jb, nb, rtol=1e-5, atol=1e-6)


def test_small_angle_branch_is_continuous():
    a = np.zeros(3)
    m = np.array([0.5, -0.2, 0.0])
    for phi in (1e-4 * 0.999, 1e-4 * 1.001):
        b = np.array([1.0, 0.3, phi])
        r, _, Jb = between_residual(a, b, m, True)
        err = np.linalg.inv(se2_mat(m)) @ se2_mat(b)
        np.testing.assert_allclose(r, se2_log(err), atol=1e-12)
        nb = fd_jacobian(lambda x: between_residual(a, x, m, False)[0], b)
        np.testing.assert_allclose(Jb, nb, rtol=1e-5, atol=1e-7)


def test_gps_and_prior_residuals():
    r, J = gps_residual(np.array([1.0, 2.0, 0.3]), np.array([0.5, 2.5]))
    np.testing.assert_allclose(r, [0.5, -0.5])
    np.testing.assert_allclose(J, fd_jacobian(lambda x: gps_residual(x, np.array([0.5, 2.5]))[0], np.array([1.0, 2.0, 0.3])))
    r = prior_residual(np.array([0.0, 0.0, 3.1]), np.array([0.0, 0.0, -3.1]))
    assert r[2] == pytest.approx(6.2 - 2 * math.pi)


def test_block_tridiagonal_matches_dense(rng):
    n = 7
    A = np.zeros((3 * n, 3 * n))
    for k in range(n):
        M = rng.standard_normal((3, 3))
        A[3 * k:3 * k + 3, 3 * k:3 * k + 3] = M @ M.T + 3 * np.eye(3)
        if k < n - 1:
            U = 0.3 * rng.standard_normal((3, 3))
            A[3 * k:3 * k + 3, 3 * k + 3:3 * k + 6] = U
            A[3 * k + 3:3 * k + 6, 3 * k:3 * k + 3] = U.T
    D = np.array([A[3 * k:3 * k + 3, 3 * k:3 * k + 3] for k in range(n)])
    U = np.array([A[3 * k:3 * k + 3, 3 * k + 3:3 * k + 6] for k in range(n - 1)])
    rhs = rng.standard_normal((n, 3))
    x, ok = solve_block_tridiagonal(D, U, rhs)
    assert ok
    np.testing.assert_allclose(x.ravel(), np.linalg.solve(A, rhs.ravel()), atol=1e-12)


def three_pose_graph(sigma_odo=0.1):
    cov = np.diag([sigma_odo**2] * 3)
    betweens = [BetweenFactor(VariableId(k), VariableId(k + 1), OdometryDelta(1.0, 0.0, 0.0, cov)) for k in range(2)]
    gps = [GpsFactor(VariableId(0), (0.0, 0.0), 1.0), GpsFactor(VariableId(2), (2.5, 0.0), 1.0)]
    initial = [Pose2(), Pose2(1.0), Pose2(2.0)]
    return Graph.from_factors(initial, betweens, gps)


def test_three_pose_analytic():
    g = three_pose_graph(0.1)
    res = solve_gauss_newton(g)
    wo, wg, wp = 1 / 0.1**2, 1.0, 1e-6
    # normal equations of the 1-D problem in x0, x1, x2
    A = np.array([[wo + wg + wp, -wo, 0.0], [-wo, 2 * wo, -wo], [0.0, -wo, wo + wg]])
    b = np.array([-wo, 0.0, wo + 2.5 * wg])
    x = np.linalg.solve(A, b)
    np.testing.assert_allclose(res.poses[:, 0], x, atol=1e-8)
    np.testing.assert_allclose(res.poses[:, 1:], 0.0, atol=1e-12)
    assert res.converged and not res.diverged


def test_factor_views_roundtrip():
    g = three_pose_graph()
    again = Graph.from_factors(g.initial, list(g.between_factors()), list(g.gps_factors()))
    np.testing.assert_allclose(again.between_info, g.between_info)
    np.testing.assert_array_equal(again.gps_index, g.gps_index)


def test_perfect_data_recovers_truth(rng):
    deltas = np.column_stack([np.full(40, 0.5), np.zeros(40), rng.uniform(-0.2, 0.2, 40)])
    truth = chain_poses(np.zeros(3), deltas)
    t = np.arange(41.0)
    g = build_graph(t, deltas, t[::4], truth[::4, :2])
    # corrupt the starting point
    start = g.initial + rng.normal(0, 0.3, g.initial.shape)
    res = solve_gauss_newton(g, initial=start)
    assert res.final_error < 1e-10
    np.testing.assert_allclose(res.poses, truth, atol=1e-6)


def independent_cost(g, flat):
    P = flat.reshape(-1, 3)
    Ta = se2_mat_batch(P[:-1])
    Tb = se2_mat_batch(P[1:])
    Tm = se2_mat_batch(g.between)
    r = se2_log_batch(np.linalg.inv(Tm) @ np.linalg.inv(Ta) @ Tb)
    c = np.einsum("ki,kij,kj->", r, g.between_info, r)
    c += np.sum(np.sum((P[g.gps_index, :2] - g.gps_xy) ** 2, axis=1) / g.gps_sigma**2)
    c += np.sum((P[0] - g.prior_pose) ** 2 / g.prior_sigma**2)
    return c


def test_oracle_log_agrees_with_matrix_log(rng):
    P = rng.uniform(-3, 3, (20, 3))
    T = se2_mat_batch(P)
    np.testing.assert_allclose(se2_log_batch(T), [se2_log(m) for m in T], atol=1e-9)


@pytest.mark.parametrize("seed", range(4))
def test_matches_derivative_free_minimum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    deltas = np.column_stack([rng.uniform(0.5, 1.5, n - 1), rng.normal(0, 0.1, n - 1), rng.normal(0, 0.2, n - 1)])
    truth = chain_poses(np.zeros(3), deltas)
    noisy = deltas + rng.normal(0, 0.05, deltas.shape)
    t = np.arange(float(n))
    gps = truth[:, :2] + rng.normal(0, 0.3, (n, 2))
    g = build_graph(t, noisy, t, gps, gps_sigma=0.5, sigma_fraction=0.2, sigma_floor=0.05)
    res = solve_gauss_newton(g)
    assert res.final_error == pytest.approx(independent_cost(g, res.poses.ravel()), rel=1e-9)
    x = res.poses.ravel()
    for _ in range(3):
        opt = minimize(lambda v: independent_cost(g, v), g.initial.ravel() if _ == 0 else x,
                       method="Powell", options={"xtol": 1e-12, "ftol": 1e-15, "maxfev": 200_000})
        x = opt.x
    np.testing.assert_allclose(opt.x, res.poses.ravel(), atol=1e-4)
    assert res.final_error <= opt.fun + 1e-9


def noisy_loop(seed, n=400):
    rng = np.random.default_rng(seed)
    deltas = np.column_stack([np.full(n, 0.1), np.zeros(n), np.full(n, 2 * math.pi / n)])
    truth = chain_poses(np.zeros(3), deltas)
    meas = deltas * (1 + rng.normal(0, 0.02, deltas.shape))
    t = np.arange(n + 1) * 0.01
    tg = t[::20] + 0.003
    gps = np.column_stack([np.interp(tg, t, truth[:, 0]), np.interp(tg, t, truth[:, 1])]) + rng.normal(0, 0.5, (len(tg), 2))
    return t, meas, tg, gps


def test_cost_monotone_and_stationary():
    t, meas, tg, gps = noisy_loop(1)
    # with the default 1e-4 m floor the weights reach 1e8 and rounding alone
    # puts the gradient near 1e-6, so check stationarity on a softer graph
    g = build_graph(t, meas, tg, gps, sigma_floor=1e-2)
    res = solve_gauss_newton(g)
    assert res.converged
    assert np.all(np.diff(res.cost_history) <= 0)
    grad = gradient(g, res.poses)
    assert np.linalg.norm(grad) < 1e-6 * (1 + res.final_error)


def test_chain_step_matches_dense_solve():
    t, meas, tg, gps = noisy_loop(7, n=50)
    g = build_graph(t, meas, tg, gps, sigma_floor=1e-2, prior_sigma=1.0)
    args = _arrays(g)
    R, JA, JB, Du, gu, _ = _linearize_factors(g.initial, *args)
    step, ok = _solve_chain(R, JA, JB, args[1], Du, gu)
    D, U, grad, _ = linearize(g, g.initial)
    ref, ok2 = solve_block_tridiagonal(D, U, -grad)
    assert ok and ok2
    np.testing.assert_allclose(step, ref, rtol=1e-8, atol=1e-10)


def test_translation_equivariance():
    t, meas, tg, gps = noisy_loop(2)
    shift = np.array([123.0, -45.0])
    g = build_graph(t, meas, tg, gps)
    g2 = build_graph(t, meas, tg, gps + shift)
    # the anchor moves with the data
    g2.prior_pose = g.prior_pose + np.r_[shift, 0.0]
    g2.initial = g.initial + np.r_[shift, 0.0]
    a = solve_gauss_newton(g)
    b = solve_gauss_newton(g2)
    np.testing.assert_allclose(b.poses[:, :2], a.poses[:, :2] + shift, atol=1e-9)
    np.testing.assert_allclose(b.poses[:, 2], a.poses[:, 2], atol=1e-9)
    assert b.final_error == pytest.approx(a.final_error, rel=1e-9)


def test_huge_gps_sigma_gives_dead_reckoning():
    t, meas, tg, gps = noisy_loop(3)
    g = build_graph(t, meas, tg, gps, gps_sigma=1e9)
    res = solve_gauss_newton(g)
    np.testing.assert_allclose(res.poses, g.initial, atol=1e-6)


def test_no_gps_returns_initial():
    t, meas, _, _ = noisy_loop(4)
    g = build_graph(t, meas, np.empty(0), np.empty((0, 2)))
    res = solve_gauss_newton(g)
    np.testing.assert_array_equal(res.poses, g.initial)
    assert res.final_error == pytest.approx(0.0, abs=1e-20)


def test_missing_anchor_is_singular():
    t, meas, _, _ = noisy_loop(5, n=20)
    g = build_graph(t, meas, np.empty(0), np.empty((0, 2)), prior_sigma=None)
    with pytest.raises(SingularSystemError, match="anchor"):
        solve_gauss_newton(g)


def test_gps_split_and_attach():
    t = np.array([0.0, 1.0, 2.0])
    d = np.array([[2.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    g = build_graph(t, d, np.array([0.5, 2.0]), np.array([[1.0, 0.0], [4.0, 0.0]]))
    np.testing.assert_allclose(g.t, [0.0, 0.5, 1.0, 2.0])
    np.testing.assert_allclose(g.between, [[1.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    np.testing.assert_array_equal(g.gps_index, [1, 3])
    assert g.n_splits == 1
    np.testing.assert_allclose(np.diag(g.between_info[0]), 1 / np.array([0.1, 1e-4, 1e-4]) ** 2)
    # a fix exactly on an epoch attaches without a split
    g = build_graph(t, d, np.array([1.0]), np.array([[2.0, 0.0]]))
    assert g.n_variables == 3 and g.n_splits == 0
    np.testing.assert_array_equal(g.gps_index, [1])


def test_gps_outside_span_dropped():
    t = np.array([0.0, 1.0])
    g = build_graph(t, np.array([[1.0, 0, 0]]), np.array([-1.0, 0.5, 3.0]), np.zeros((3, 2)))
    assert g.n_gps_dropped == 2 and len(g.gps_index) == 1


def test_build_graph_errors():
    with pytest.raises(ValueError):
        build_graph(np.empty(0), np.empty((0, 3)), np.empty(0), np.empty((0, 2)))
    with pytest.raises(ValueError):
        build_graph(np.array([0.0, 0.0]), np.zeros((1, 3)), np.empty(0), np.empty((0, 2)))
    with pytest.raises(ValueError):
        build_graph(np.array([0.0, 1.0]), np.zeros((1, 3)), np.empty(0), np.empty((0, 2)), gps_sigma=0.0)


def test_graph_cost_matches_independent():
    t, meas, tg, gps = noisy_loop(6, n=60)
    g = build_graph(t, meas, tg, gps)
    assert graph_cost(g, g.initial) == pytest.approx(independent_cost(g, g.initial.ravel()), rel=1e-9)
