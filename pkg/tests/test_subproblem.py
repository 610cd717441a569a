"""Trust-region subproblem solvers: hand-checkable instances, KKT
certificates for the dense solver, and seeded sweeps comparing the Krylov
solver against the exact one."""

import numpy as np
import pytest

from trustvi.subproblem import (
    QuadraticModel,
    cauchy_point,
    solve_tr_exact,
    solve_tr_krylov,
)


def matmul_op(h):
    h = np.asarray(h, dtype=float)
    return lambda v: h @ v


def kkt_certificate(grad, hessian, s, delta, tol=1e-8):
    """Verify the exact optimality conditions for max g's + s'Hs/2, |s| <= delta.

    There must exist alpha >= max(0, lambda_max(H)) with
    alpha*s = H s + g, and alpha*(delta - |s|) = 0.
    """
    grad = np.asarray(grad, dtype=float)
    hessian = np.asarray(hessian, dtype=float)
    norm = np.linalg.norm(s)
    assert norm <= delta * (1 + 1e-9)
    residual_scale = max(1.0, np.linalg.norm(grad), np.linalg.norm(hessian, 2))
    hs = hessian @ s
    if norm < delta * (1 - 1e-6):
        # interior: plain stationary point, concave curvature
        assert np.linalg.norm(hs + grad) <= tol * residual_scale
        assert np.linalg.eigvalsh(hessian)[-1] <= 1e-8
        return
    alpha = float(s @ (grad + hs)) / float(s @ s)
    lam_max = np.linalg.eigvalsh(hessian)[-1]
    assert alpha >= max(0.0, lam_max) - tol * residual_scale
    assert np.linalg.norm(alpha * s - hs - grad) <= tol * residual_scale


# ---------------------------------------------------------------------------
# hand-checkable instances


def test_zero_gradient_returns_zero_step():
    model = QuadraticModel(np.zeros(3), matmul_op(-np.eye(3)), 1.0)
    step = solve_tr_krylov(model)
    np.testing.assert_array_equal(step.s, np.zeros(3))
    assert step.m_prime == 0.0


def test_cauchy_point_flat_curvature():
    model = QuadraticModel(np.array([1.0, 0.0]), matmul_op(np.zeros((2, 2))), 2.0)
    step = cauchy_point(model)
    np.testing.assert_allclose(step.s, [2.0, 0.0])
    assert step.m_prime == pytest.approx(2.0)


def test_cauchy_point_concave_interior():
    model = QuadraticModel(np.array([1.0, 0.0]), matmul_op(-np.eye(2)), 5.0)
    step = cauchy_point(model)
    # maximizer of t - t^2/2 is t = 1, value 1/2
    np.testing.assert_allclose(step.s, [1.0, 0.0])
    assert step.m_prime == pytest.approx(0.5)


def test_exact_interior_solution():
    step = solve_tr_exact(np.array([0.2, 0.0]), -2.0 * np.eye(2), 1.0)
    np.testing.assert_allclose(step.s, [0.1, 0.0], atol=1e-12)
    assert step.m_prime == pytest.approx(0.01)
    assert step.status == "interior"


def test_exact_convex_pushes_to_boundary():
    step = solve_tr_exact(np.array([1.0, 0.0]), np.eye(2), 1.0)
    np.testing.assert_allclose(step.s, [1.0, 0.0], atol=1e-10)
    assert step.m_prime == pytest.approx(1.5)
    assert step.status == "boundary"


def test_exact_hard_case():
    # gradient orthogonal to the top eigenvector; solution needs padding
    # along that eigenvector to reach the boundary
    hessian = np.diag([1.0, -1.0])
    grad = np.array([0.0, 0.1])
    step = solve_tr_exact(grad, hessian, 1.0)
    assert np.linalg.norm(step.s) == pytest.approx(1.0, abs=1e-9)
    assert step.s[1] == pytest.approx(0.05, abs=1e-9)
    assert abs(step.s[0]) == pytest.approx(np.sqrt(1.0 - 0.0025), abs=1e-9)
    kkt_certificate(grad, hessian, step.s, 1.0)
    # value must beat simply following the gradient to the boundary
    follow = grad / np.linalg.norm(grad)
    assert step.m_prime > QuadraticModel(grad, matmul_op(hessian), 1.0).value(follow)


def test_krylov_convex_direction_exit():
    # gradient points along a convex direction: the model is unbounded
    # there, so the solver rides it to the boundary
    model = QuadraticModel(np.array([1.0, 0.0]), matmul_op(np.eye(2)), 0.5)
    step = solve_tr_krylov(model)
    np.testing.assert_allclose(step.s, [0.5, 0.0], atol=1e-12)
    assert step.status == "negative-curvature"
    assert step.m_prime == pytest.approx(0.625)


def test_krylov_stays_in_its_subspace_on_hard_case():
    # the Krylov space of this instance never leaves the second axis, so
    # the iterative solver settles for the subspace optimum while the
    # dense solver finds the global boundary solution
    hessian = np.diag([1.0, -1.0])
    grad = np.array([0.0, 0.1])
    krylov = solve_tr_krylov(QuadraticModel(grad, matmul_op(hessian), 1.0))
    np.testing.assert_allclose(krylov.s, [0.0, 0.1], atol=1e-12)
    assert krylov.m_prime == pytest.approx(0.005)
    exact = solve_tr_exact(grad, hessian, 1.0)
    # 0.1*0.05 + (0.9975 - 0.0025)/2
    assert exact.m_prime == pytest.approx(0.5025, abs=1e-9)


def test_statuses_reported():
    concave = QuadraticModel(np.array([1e-3, 0.0]), matmul_op(-np.eye(2)), 10.0)
    assert solve_tr_krylov(concave).status == "interior"
    convex = QuadraticModel(np.array([1.0, 0.0]), matmul_op(np.eye(2)), 0.5)
    assert solve_tr_krylov(convex).status in ("boundary", "negative-curvature")


# ---------------------------------------------------------------------------
# validation


def test_quadratic_model_validation():
    with pytest.raises(ValueError):
        QuadraticModel(np.array([1.0]), matmul_op(np.eye(1)), 0.0)
    with pytest.raises(ValueError):
        QuadraticModel(np.array([np.nan]), matmul_op(np.eye(1)), 1.0)


def test_exact_rejects_asymmetric_or_large():
    with pytest.raises(ValueError):
        solve_tr_exact(np.ones(2), np.array([[0.0, 1.0], [0.5, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        solve_tr_exact(np.ones(65), np.eye(65), 1.0)


# ---------------------------------------------------------------------------
# seeded sweeps


def random_instance(rng, dim):
    kind = rng.integers(4)
    if kind == 0:  # concave
        a = rng.normal(size=(dim, dim))
        hessian = -(a @ a.T) - 0.1 * np.eye(dim)
    elif kind == 1:  # convex
        a = rng.normal(size=(dim, dim))
        hessian = a @ a.T + 0.1 * np.eye(dim)
    elif kind == 2:  # indefinite
        hessian = rng.normal(size=(dim, dim))
        hessian = 0.5 * (hessian + hessian.T)
    else:  # near-singular
        hessian = np.diag(np.concatenate([rng.normal(size=dim - 1), [1e-12]]))
    grad = rng.normal(size=dim)
    if kind == 3 and rng.integers(2):
        grad[-1] = 0.0  # push toward the hard case
    delta = float(rng.uniform(0.1, 3.0))
    return grad, hessian, delta


def test_sweep_feasibility_and_model_value():
    rng = np.random.default_rng(50)
    for _ in range(200):
        dim = int(rng.integers(1, 9))
        grad, hessian, delta = random_instance(rng, dim)
        model = QuadraticModel(grad, matmul_op(hessian), delta)
        step = solve_tr_krylov(model)
        assert np.linalg.norm(step.s) <= delta * (1 + 1e-9)
        assert step.m_prime == pytest.approx(model.value(step.s), rel=1e-8, abs=1e-12)
        m_cauchy = cauchy_point(model).m_prime
        assert step.m_prime >= m_cauchy - 1e-10
        assert m_cauchy >= -1e-12


def test_sweep_exact_dominates_krylov():
    rng = np.random.default_rng(51)
    for _ in range(100):
        dim = int(rng.integers(2, 9))
        grad, hessian, delta = random_instance(rng, dim)
        exact = solve_tr_exact(grad, hessian, delta)
        kkt_certificate(grad, hessian, exact.s, delta)
        krylov = solve_tr_krylov(QuadraticModel(grad, matmul_op(hessian), delta))
        assert exact.m_prime >= krylov.m_prime - 1e-8 * max(1.0, abs(exact.m_prime))


def test_sweep_concave_interior_agrees():
    # strictly concave with an interior optimum: both solvers find it
    rng = np.random.default_rng(52)
    for _ in range(50):
        dim = int(rng.integers(2, 9))
        a = rng.normal(size=(dim, dim))
        hessian = -(a @ a.T) - 0.5 * np.eye(dim)
        target = np.linalg.solve(hessian, -0.1 * rng.normal(size=dim))
        grad = -hessian @ target
        delta = np.linalg.norm(target) * 3.0 + 1.0
        exact = solve_tr_exact(grad, hessian, delta)
        krylov = solve_tr_krylov(QuadraticModel(grad, matmul_op(hessian), delta))
        assert exact.status == "interior"
        np.testing.assert_allclose(krylov.s, exact.s, rtol=1e-5, atol=1e-8)
        assert krylov.m_prime == pytest.approx(exact.m_prime, rel=1e-6)


def test_max_iter_cap_still_feasible():
    rng = np.random.default_rng(53)
    dim = 30
    a = rng.normal(size=(dim, dim))
    hessian = -(a @ a.T)
    grad = rng.normal(size=dim)
    model = QuadraticModel(grad, matmul_op(hessian), 0.5)
    step = solve_tr_krylov(model, max_iter=3)
    assert np.linalg.norm(step.s) <= 0.5 * (1 + 1e-9)
    assert step.m_prime >= 0.0
