import numpy as np
import pytest
import scipy.linalg as sla

from fedlqr import lqr
from fedlqr.fleet import nominal_system
from fedlqr.rng import spawn_generator

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def random_stable(rng, n, rho_max=0.95):
    a = rng.standard_normal((n, n))
    return a * (rng.uniform(0.2, rho_max) / max(lqr.spectral_radius(a), 1e-12))


def random_spd(rng, n):
    h = rng.standard_normal((n, n))
    return h @ h.T + np.eye(n)


def scalar_system(a=0.5, b=1.0, q=1.0, r=1.0):
    return (
        lqr.LtiSystem(np.array([[a]]), np.array([[b]])),
        lqr.CostMatrices(np.array([[q]]), np.array([[r]])),
    )


# --- spectral radius ------------------------------------------------------


def test_spectral_radius_zero():
    assert lqr.spectral_radius(np.zeros((3, 3))) == 0.0


def test_spectral_radius_diagonal():
    assert lqr.spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9, abs=1e-12)


def test_spectral_radius_nominal_vs_charpoly():
    # independent oracle: roots of the characteristic polynomial via
    # Faddeev-LeVerrier coefficients
    a = nominal_system()[0].a
    c2 = -np.trace(a)
    c1 = 0.5 * (np.trace(a) ** 2 - np.trace(a @ a))
    c0 = -np.linalg.det(a)
    roots = np.roots([1.0, c2, c1, c0])
    assert lqr.spectral_radius(a) == pytest.approx(np.abs(roots).max(), rel=1e-9)


def test_spectral_radius_rejects_nonsquare():
    with pytest.raises(ValueError):
        lqr.spectral_radius(np.ravel(np.ones((2, 3))).reshape(2, 3))


# --- Schur stability ------------------------------------------------------


def test_is_schur_stable_nominal_initial_gain():
    sys_, _, k0 = nominal_system()
    assert lqr.is_schur_stable(sys_, k0)


def test_is_schur_stable_scalar_unstable():
    sys_ = lqr.LtiSystem(2.0 * np.eye(1), np.eye(1))
    assert not lqr.is_schur_stable(sys_, np.zeros((1, 1)))


def test_is_schur_stable_zero_plant():
    sys_ = lqr.LtiSystem(np.zeros((2, 2)), np.eye(2))
    assert lqr.is_schur_stable(sys_, 0.5 * np.eye(2))  # closed loop is -k


def test_is_schur_stable_dimension_mismatch():
    sys_, _, _ = nominal_system()
    with pytest.raises(ValueError):
        lqr.is_schur_stable(sys_, np.eye(2))


# --- Lyapunov solver ------------------------------------------------------


def test_dlyap_zero_dynamics():
    q = np.diag([1.0, 2.0])
    assert np.allclose(lqr.solve_dlyap(np.zeros((2, 2)), q), q)


def test_dlyap_scalar_geometric():
    p = lqr.solve_dlyap(np.array([[0.5]]), np.array([[1.0]]))
    assert p[0, 0] == pytest.approx(4.0 / 3.0, rel=1e-12)


def test_dlyap_residual_contract_random():
    rng = spawn_generator(101)
    for trial in range(100):
        n = int(rng.integers(1, 9))
        a = random_stable(rng, n)
        w = random_spd(rng, n)
        p = lqr.solve_dlyap(a, w)
        resid = np.linalg.norm(p - a.T @ p @ a - w)
        assert resid <= 1e-10 * (1 + np.linalg.norm(p)), f"trial {trial}"
        # independent route: scipy solves A X A' - X + Q = 0
        ref = sla.solve_discrete_lyapunov(a.T, w)
        assert np.allclose(p, ref, rtol=1e-8, atol=1e-10)


def test_dlyap_doubling_path_matches_kron():
    rng = spawn_generator(102)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        a = random_stable(rng, n)
        w = random_spd(rng, n)
        p_kron = lqr.solve_dlyap(a, w)
        p_doubling = lqr.solve_dlyap(a, w, kron_limit=0)
        assert np.allclose(p_kron, p_doubling, rtol=1e-10, atol=1e-12)


def test_dlyap_rejects_unstable():
    with pytest.raises(lqr.UnstableSystemError):
        lqr.solve_dlyap(np.array([[1.001]]), np.array([[1.0]]))


def test_dlyap_rejects_asymmetric_w():
    with pytest.raises(ValueError):
        lqr.solve_dlyap(0.5 * np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


# --- exact cost -----------------------------------------------------------


def test_exact_cost_scalar_one_step():
    sys_, cost = scalar_system()
    value = lqr.exact_cost(sys_, cost, np.array([[0.5]]), np.eye(1))
    assert value == pytest.approx(1.25, rel=1e-12)  # closed loop 0: q + k^2 r


def test_exact_cost_at_optimum_is_riccati_trace():
    sys_, cost, _ = nominal_system()
    k_star = lqr.optimal_gain(sys_, cost)
    p = lqr.solve_dare(sys_, cost)
    assert lqr.exact_cost(sys_, cost, k_star) == pytest.approx(np.trace(p), rel=1e-10)


def test_exact_cost_nominal_vs_truncated_series():
    sys_, cost, k0 = nominal_system()
    value = lqr.exact_cost(sys_, cost, k0)
    a_cl = sys_.a - sys_.b @ k0
    w = cost.q + k0.T @ cost.r @ k0
    total, m = 0.0, np.eye(3)
    for _ in range(1000):
        total += np.trace(m.T @ w @ m)
        m = a_cl @ m
    assert value == pytest.approx(total, rel=1e-10)


def test_exact_cost_rejects_destabilizing_gain():
    sys_, cost = scalar_system(a=2.0)
    with pytest.raises(lqr.UnstableSystemError):
        lqr.exact_cost(sys_, cost, np.zeros((1, 1)))


def test_stability_iff_finite_cost():
    rng = spawn_generator(103)
    sys_, cost, _ = nominal_system()
    for _ in range(50):
        k = rng.uniform(-2, 2) * np.eye(3) + 0.5 * rng.standard_normal((3, 3))
        if lqr.is_schur_stable(sys_, k):
            assert np.isfinite(lqr.exact_cost(sys_, cost, k))
        else:
            with pytest.raises(lqr.UnstableSystemError):
                lqr.exact_cost(sys_, cost, k)


# --- exact gradient -------------------------------------------------------


def finite_difference_gradient(sys_, cost, k, sigma0=None, h=1e-6):
    fd = np.zeros_like(k)
    for i in range(k.shape[0]):
        for j in range(k.shape[1]):
            e = np.zeros_like(k)
            e[i, j] = h
            fd[i, j] = (
                lqr.exact_cost(sys_, cost, k + e, sigma0)
                - lqr.exact_cost(sys_, cost, k - e, sigma0)
            ) / (2 * h)
    return fd


def test_gradient_scalar_hand_value():
    sys_, cost = scalar_system()
    k = np.array([[0.5]])
    g = lqr.exact_policy_gradient(sys_, cost, k, np.eye(1))
    # closed loop zero: J(k) = (q + r k^2) / (1 - (a - k)^2); dJ/dk at a=k: 2 r k
    assert g[0, 0] == pytest.approx(1.0, rel=1e-10)
    fd = finite_difference_gradient(sys_, cost, k, np.eye(1))
    assert g[0, 0] == pytest.approx(fd[0, 0], rel=1e-7)


def test_gradient_matches_finite_differences_random():
    rng = spawn_generator(104)
    sys_, cost, k0 = nominal_system()
    for _ in range(10):
        k = k0 + 0.2 * rng.standard_normal((3, 3))
        if not lqr.is_schur_stable(sys_, k):
            continue
        g = lqr.exact_policy_gradient(sys_, cost, k)
        fd = finite_difference_gradient(sys_, cost, k)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gradient_vanishes_at_optimum():
    sys_, cost, _ = nominal_system()
    k_star = lqr.optimal_gain(sys_, cost)
    assert np.linalg.norm(lqr.exact_policy_gradient(sys_, cost, k_star)) <= 1e-8


def test_line_search_descent_property():
    rng = spawn_generator(105)
    sys_, cost, k0 = nominal_system()
    for _ in range(10):
        k = k0 + 0.1 * rng.standard_normal((3, 3))
        if not lqr.is_schur_stable(sys_, k):
            continue
        j = lqr.exact_cost(sys_, cost, k)
        g = lqr.exact_policy_gradient(sys_, cost, k)
        j_step = lqr.exact_cost(sys_, cost, k - 1e-6 * g)
        assert j_step < j


def test_optimum_is_fixed_point():
    sys_, cost, _ = nominal_system()
    k_star = lqr.optimal_gain(sys_, cost)
    j_star = lqr.exact_cost(sys_, cost, k_star)
    g = lqr.exact_policy_gradient(sys_, cost, k_star)
    j_step = lqr.exact_cost(sys_, cost, k_star - 1e-3 * g)
    assert abs(j_step - j_star) <= 1e-12 * j_star


# --- Riccati solver -------------------------------------------------------


def test_dare_zero_dynamics():
    sys_ = lqr.LtiSystem(np.zeros((2, 2)), np.eye(2))
    cost = lqr.CostMatrices(np.diag([1.0, 3.0]), np.eye(2))
    assert np.allclose(lqr.solve_dare(sys_, cost), cost.q)


def test_dare_golden_ratio():
    sys_, cost = scalar_system(a=1.0, b=1.0, q=1.0, r=1.0)
    p = lqr.solve_dare(sys_, cost)
    assert abs(p[0, 0] - GOLDEN) <= 1e-12
    k_star = lqr.optimal_gain(sys_, cost)
    assert k_star[0, 0] == pytest.approx(GOLDEN / (1.0 + GOLDEN), rel=1e-10)


def test_optimal_gain_zero_plant():
    sys_ = lqr.LtiSystem(np.zeros((2, 2)), np.eye(2))
    cost = lqr.CostMatrices(np.eye(2), np.eye(2))
    assert np.allclose(lqr.optimal_gain(sys_, cost), 0.0)


def test_dare_random_vs_scipy():
    rng = spawn_generator(106)
    for trial in range(30):
        n = int(rng.integers(1, 9))
        m = int(rng.integers(1, n + 1))
        a = random_stable(rng, n, rho_max=1.4)  # may be unstable but stabilizable
        b = rng.standard_normal((n, m))
        sys_ = lqr.LtiSystem(a, b)
        cost = lqr.CostMatrices(random_spd(rng, n), random_spd(rng, m))
        p = lqr.solve_dare(sys_, cost)
        bpa = b.T @ p @ a
        resid = np.linalg.norm(p - (cost.q + a.T @ p @ a - bpa.T @ np.linalg.solve(cost.r + b.T @ p @ b, bpa)))
        assert resid <= 1e-9 * (1 + np.linalg.norm(p)), f"trial {trial}"
        assert lqr.is_schur_stable(sys_, lqr.optimal_gain(sys_, cost))
        ref = sla.solve_discrete_are(a, b, cost.q, cost.r)
        assert np.allclose(p, ref, rtol=1e-7, atol=1e-9)


def test_cost_matrices_reject_indefinite_r():
    with pytest.raises(ValueError):
        lqr.CostMatrices(np.eye(2), np.diag([1.0, -0.1]))
