import numpy as np
import pytest
from numpy.testing import assert_allclose

from utils.errors import DataError, RetractionBreakdownError, SingularPreconditionerError
from utils.manifold import (
    REGULARIZATION,
    GrassmannPoint,
    MetricMode,
    ProductPoint,
    TangentTriple,
    egrad_to_rgrad,
    inner,
    metric_state,
    norm,
    orthonormality_error,
    project_to_horizontal,
    project_to_tangent,
    qf,
    random_horizontal,
    random_point,
    retract,
    solve_lyapunov,
    tangent_residual,
    transport,
    vertical_part,
)
from utils.plsr import cost, egrad


def _sym(a):
    return 0.5 * (a + a.T)


def _skew(a):
    return 0.5 * (a - a.T)


def _point_with_core(s, rng, n=5, m=4):
    r = s.shape[0]
    return ProductPoint.from_arrays(qf(rng.standard_normal((n, r))), qf(rng.standard_normal((m, r))), s)


# metric_state


def test_metric_identity_core(rng):
    metric = metric_state(_point_with_core(np.eye(2), rng))
    assert_allclose(metric.m_u, (1 + REGULARIZATION) * np.eye(2), rtol=0, atol=1e-15)
    assert_allclose(metric.m_v, (1 + REGULARIZATION) * np.eye(2), rtol=0, atol=1e-15)


def test_metric_diagonal_core(rng):
    metric = metric_state(_point_with_core(np.diag([2.0, 3.0]), rng))
    assert_allclose(metric.m_u, np.diag([4.0, 9.0]), atol=1e-10)
    assert_allclose(metric.m_v, np.diag([4.0, 9.0]), atol=1e-10)


def test_metric_matches_dense_products(rng):
    s = rng.standard_normal((3, 3))
    metric = metric_state(_point_with_core(s, rng))
    delta = REGULARIZATION * max(1.0, np.trace(s @ s.T) / 3)
    assert_allclose(metric.m_u - delta * np.eye(3), s @ s.T, rtol=0, atol=1e-14 * max(1.0, np.abs(s).max() ** 2))
    assert_allclose(metric.m_v - delta * np.eye(3), s.T @ s, rtol=0, atol=1e-14 * max(1.0, np.abs(s).max() ** 2))
    assert np.linalg.eigvalsh(metric.m_u).min() >= delta * 0.5


def test_metric_identity_mode(rng):
    metric = metric_state(_point_with_core(rng.standard_normal((3, 3)), rng), MetricMode.IDENTITY)
    assert_allclose(metric.m_u, np.eye(3))
    assert_allclose(metric.m_v, np.eye(3))


def test_metric_rejects_non_finite_core(rng):
    point = _point_with_core(np.array([[1.0, np.nan], [0.0, 1.0]]), rng)
    with pytest.raises(DataError, match="invalid core factor"):
        metric_state(point)


# inner


def test_inner_zero_and_identity_mode(rng):
    point = random_point(6, 4, 2, rng)
    zero = TangentTriple.zeros(point)
    assert inner(point, metric_state(point), zero, zero) == 0.0

    metric = metric_state(point, "identity")
    a = TangentTriple(rng.standard_normal((6, 2)), rng.standard_normal((4, 2)), rng.standard_normal((2, 2)))
    expected = sum(np.sum(block**2) for block in a)
    assert_allclose(inner(point, metric, a, a), expected, rtol=1e-13)


def test_inner_matches_trace_formula(rng):
    point = random_point(7, 5, 3, rng)
    metric = metric_state(point)
    a = random_horizontal(point, rng)
    b = random_horizontal(point, rng)
    expected = (
        np.trace(metric.m_u @ a.xi_u.T @ b.xi_u)
        + np.trace(metric.m_v @ a.xi_v.T @ b.xi_v)
        + np.trace(a.xi_s.T @ b.xi_s)
    )
    assert_allclose(inner(point, metric, a, b), expected, rtol=1e-12)
    assert_allclose(inner(point, metric, a, b), inner(point, metric, b, a), rtol=1e-12)


def test_inner_positive_definite(rng):
    for _ in range(100):
        point = random_point(5, 3, 2, rng)
        a = TangentTriple(rng.standard_normal((5, 2)), rng.standard_normal((3, 2)), rng.standard_normal((2, 2)))
        assert inner(point, metric_state(point), a, a) > 0


def test_norm_is_root_of_inner(rng):
    point = random_point(6, 4, 2, rng)
    metric = metric_state(point)
    a = random_horizontal(point, rng)
    assert_allclose(norm(point, metric, a), np.sqrt(inner(point, metric, a, a)), rtol=1e-14)
    assert norm(point, metric, TangentTriple.zeros(point)) == 0.0


def test_inner_shape_mismatch(rng):
    point = random_point(5, 3, 2, rng)
    bad = TangentTriple(np.zeros((4, 2)), np.zeros((3, 2)), np.zeros((2, 2)))
    with pytest.raises(DataError):
        inner(point, metric_state(point), bad, bad)


# solve_lyapunov


def test_lyapunov_identity_halves(rng):
    c = rng.standard_normal((3, 3))
    assert_allclose(solve_lyapunov(np.eye(3), c), c / 2, atol=1e-15)


def test_lyapunov_worked_example():
    b = solve_lyapunov(np.diag([1.0, 2.0]), np.array([[2.0, 3.0], [3.0, 4.0]]))
    assert_allclose(b, np.ones((2, 2)), atol=1e-14)


def test_lyapunov_residual_and_structure(rng, spd):
    for _ in range(100):
        m = spd(4, rng)
        c = rng.standard_normal((4, 4))
        b = solve_lyapunov(m, c)
        assert np.linalg.norm(m @ b + b @ m - c) <= 1e-12 * np.linalg.norm(c)

        b_sym = solve_lyapunov(m, _sym(c))
        b_skew = solve_lyapunov(m, _skew(c))
        assert_allclose(b_sym, b_sym.T, atol=1e-12)
        assert_allclose(b_skew, -b_skew.T, atol=1e-12)


def test_lyapunov_singular():
    with pytest.raises(SingularPreconditionerError, match="singular preconditioner"):
        solve_lyapunov(np.zeros((2, 2)), np.eye(2))


# projections


def test_tangent_projection_identity_metric_closed_form(rng):
    u = qf(rng.standard_normal((6, 3)))
    a = rng.standard_normal((6, 3))
    assert_allclose(project_to_tangent(u, a, np.eye(3)), a - u @ _sym(u.T @ a), atol=1e-12)


def test_tangent_projection_kills_normal_input(rng, spd):
    u = qf(rng.standard_normal((6, 3)))
    m = spd(3, rng)
    h = _sym(rng.standard_normal((3, 3)))
    a = u @ h @ np.linalg.inv(m)
    assert_allclose(project_to_tangent(u, a, m), np.zeros_like(a), atol=1e-12)


def test_tangent_projection_is_metric_orthogonal(rng, spd):
    for _ in range(100):
        u = qf(rng.standard_normal((6, 3)))
        m = spd(3, rng)
        a = rng.standard_normal((6, 3))
        xi = project_to_tangent(u, a, m)
        assert tangent_residual(u, xi) <= 1e-12 * max(1.0, np.linalg.norm(a))
        assert_allclose(project_to_tangent(u, xi, m), xi, atol=1e-12)
        for _ in range(10):
            eta = project_to_tangent(u, rng.standard_normal((6, 3)), m)
            assert abs(np.trace(m @ (a - xi).T @ eta)) <= 1e-10


def test_horizontal_projection_kills_vertical_input(rng, spd):
    u = qf(rng.standard_normal((6, 3)))
    omega = _skew(rng.standard_normal((3, 3)))
    assert_allclose(project_to_horizontal(u, u @ omega, spd(3, rng)), np.zeros((6, 3)), atol=1e-12)


def test_horizontal_projection_identity_metric_closed_form(rng):
    u = qf(rng.standard_normal((6, 3)))
    xi = project_to_tangent(u, rng.standard_normal((6, 3)), np.eye(3))
    assert_allclose(project_to_horizontal(u, xi, np.eye(3)), xi - u @ _skew(u.T @ xi), atol=1e-12)


def test_horizontal_projection_is_metric_orthogonal_to_vertical(rng, spd):
    for _ in range(100):
        u = qf(rng.standard_normal((6, 3)))
        m = spd(3, rng)
        xi = project_to_tangent(u, rng.standard_normal((6, 3)), m)
        xi_h = project_to_horizontal(u, xi, m)
        assert_allclose(project_to_horizontal(u, xi_h, m), xi_h, atol=1e-12)
        assert np.linalg.norm(vertical_part(u, xi_h, m)) <= 1e-10
        for _ in range(10):
            omega = _skew(rng.standard_normal((3, 3)))
            assert abs(np.trace(m @ xi_h.T @ u @ omega)) <= 1e-10


# egrad_to_rgrad


def test_rgrad_of_zero_is_zero(rng):
    point = random_point(6, 4, 2, rng)
    r = egrad_to_rgrad(point, metric_state(point), TangentTriple.zeros(point))
    for block in r:
        assert not np.any(block)


def test_rgrad_identity_mode_is_grassmann_projection(rng):
    point = random_point(6, 4, 2, rng)
    eg = TangentTriple(rng.standard_normal((6, 2)), rng.standard_normal((4, 2)), rng.standard_normal((2, 2)))
    r = egrad_to_rgrad(point, metric_state(point, "identity"), eg)
    u, v = point.u.basis, point.v.basis
    assert_allclose(r.xi_u, eg.xi_u - u @ (u.T @ eg.xi_u), atol=1e-12)
    assert_allclose(r.xi_v, eg.xi_v - v @ (v.T @ eg.xi_v), atol=1e-12)
    assert_allclose(r.xi_s, eg.xi_s)


def test_rgrad_represents_euclidean_gradient(rng):
    for _ in range(20):
        point = random_point(8, 5, 3, rng)
        metric = metric_state(point)
        eg = TangentTriple(rng.standard_normal((8, 3)), rng.standard_normal((5, 3)), rng.standard_normal((3, 3)))
        r = egrad_to_rgrad(point, metric, eg)
        assert tangent_residual(point.u, r.xi_u) <= 1e-10
        for _ in range(5):
            eta = random_horizontal(point, rng)
            expected = eg.euclidean_dot(eta)
            assert_allclose(inner(point, metric, r, eta), expected, rtol=1e-8, atol=1e-12)


def _core_with_condition(rng, r, condition, scale=3.0):
    left = qf(rng.standard_normal((r, r)))
    right = qf(rng.standard_normal((r, r)))
    return scale * left @ np.diag(np.geomspace(1.0, 1.0 / condition, r)) @ right.T


@pytest.mark.parametrize("condition", [50.0, 100.0, 150.0])
def test_rgrad_stays_horizontal_for_ill_conditioned_cores(rng, condition):
    z = rng.standard_normal((8, 5))
    for _ in range(100):
        point = _point_with_core(_core_with_condition(rng, 3, condition), rng, n=8, m=5)
        metric = metric_state(point)
        eg = egrad(point, z)
        r = egrad_to_rgrad(point, metric, eg)
        assert tangent_residual(point.u, r.xi_u) <= 1e-10
        assert tangent_residual(point.v, r.xi_v) <= 1e-10
        assert np.linalg.norm(vertical_part(point.u, r.xi_u, metric.eig_u)) <= 1e-8 * max(1.0, np.linalg.norm(r.xi_u))
        assert np.linalg.norm(vertical_part(point.v, r.xi_v, metric.eig_v)) <= 1e-8 * max(1.0, np.linalg.norm(r.xi_v))
        eta = random_horizontal(point, rng)
        scale = sum(np.linalg.norm(a) * np.linalg.norm(b) for a, b in zip(eg, eta))
        assert abs(inner(point, metric, r, eta) - eg.euclidean_dot(eta)) <= 1e-9 * scale


def test_rgrad_agrees_with_lyapunov_projections(rng):
    for _ in range(20):
        point = random_point(7, 5, 3, rng)
        metric = metric_state(point)
        eg = TangentTriple(rng.standard_normal((7, 3)), rng.standard_normal((5, 3)), rng.standard_normal((3, 3)))
        r = egrad_to_rgrad(point, metric, eg)
        scaled = metric.eig_u.solve_right(eg.xi_u)
        composed = project_to_horizontal(point.u, project_to_tangent(point.u, scaled, metric.eig_u), metric.eig_u)
        assert_allclose(r.xi_u, composed, atol=1e-9 * max(1.0, np.linalg.norm(scaled)))


def test_rgrad_matches_finite_differences_along_retraction(rng):
    z = rng.standard_normal((8, 5))
    h = 1e-6
    for _ in range(20):
        point = random_point(8, 5, 2, rng)
        metric = metric_state(point)
        r = egrad_to_rgrad(point, metric, egrad(point, z))
        for _ in range(5):
            eta = random_horizontal(point, rng)
            fd = (cost(retract(point, eta, h), z) - cost(retract(point, eta, -h), z)) / (2 * h)
            assert_allclose(inner(point, metric, r, eta), fd, rtol=1e-5, atol=1e-8)


# retract / transport


def test_retract_zero_step_returns_point(rng):
    point = random_point(6, 4, 2, rng)
    assert retract(point, random_horizontal(point, rng), 0.0) is point


def test_retract_stays_orthonormal(rng):
    for _ in range(100):
        point = random_point(6, 4, 3, rng)
        moved = retract(point, random_horizontal(point, rng), rng.uniform(-3, 3))
        assert orthonormality_error(moved.u.basis) <= 1e-10
        assert orthonormality_error(moved.v.basis) <= 1e-10


def test_retract_along_negative_gradient_descends(rng):
    z = rng.standard_normal((8, 5))
    point = random_point(8, 5, 2, rng)
    metric = metric_state(point)
    r = egrad_to_rgrad(point, metric, egrad(point, z))
    assert cost(retract(point, -r, 1e-4), z) < cost(point, z)


def test_transport_to_same_point_is_identity(rng):
    point = random_point(7, 4, 2, rng)
    metric = metric_state(point)
    xi = random_horizontal(point, rng)
    moved = transport(point, point, metric, xi)
    for got, want in zip(moved, xi):
        assert_allclose(got, want, atol=1e-12)


def test_transport_lands_in_horizontal_space(rng):
    for _ in range(20):
        a = random_point(7, 4, 2, rng)
        xi = random_horizontal(a, rng)
        b = retract(a, random_horizontal(a, rng), 0.5)
        metric_b = metric_state(b)
        moved = transport(a, b, metric_b, xi)
        assert tangent_residual(b.u, moved.xi_u) <= 1e-10
        assert tangent_residual(b.v, moved.xi_v) <= 1e-10
        assert np.linalg.norm(vertical_part(b.u, moved.xi_u, metric_b.eig_u)) <= 1e-8
        assert np.linalg.norm(vertical_part(b.v, moved.xi_v, metric_b.eig_v)) <= 1e-8

    zero = TangentTriple.zeros(a)
    for block in transport(a, b, metric_b, zero):
        assert_allclose(block, 0.0, atol=1e-15)


# representatives


def test_qf_positive_diagonal_and_breakdown(rng):
    a = rng.standard_normal((6, 3))
    q = qf(a)
    assert np.all(np.diag(q.T @ a) > 0)
    with pytest.raises(RetractionBreakdownError, match="retraction breakdown"):
        qf(np.zeros((4, 2)))


def test_grassmann_point_validates_basis(rng):
    with pytest.raises(DataError):
        GrassmannPoint(rng.standard_normal((5, 2)))
    with pytest.raises(DataError):
        GrassmannPoint(np.eye(3)[:, :0])
    assert GrassmannPoint(np.eye(4)[:, :2]).dims == (4, 2)


def test_product_point_rank_mismatch(rng):
    with pytest.raises(DataError):
        ProductPoint.from_arrays(qf(rng.standard_normal((5, 2))), qf(rng.standard_normal((4, 3))), np.eye(2))


def test_tangent_triple_arithmetic(rng):
    point = random_point(5, 4, 2, rng)
    a = random_horizontal(point, rng)
    b = random_horizontal(point, rng)
    combined = 2.0 * a - b + (-a)
    for got, x, y in zip(combined, a, b):
        assert_allclose(got, x - y, atol=1e-14)
