import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import integrate_polygon, monomial, random_star_polygon, subdivision_integral
from polyvem.exceptions import UnsupportedDegree
from polyvem.poly import (
    MAX_EXACTNESS,
    derivative_matrices,
    edge_quadrature,
    eval_basis,
    exponents,
    gauss_lobatto_01,
    gauss_lobatto_points,
    laplacian_matrix,
    monomial_index,
    nbasis,
    polygon_quadrature,
    split_triangles,
)

HEXAGON = np.array([[np.cos(t), np.sin(t)] for t in np.arange(6) * np.pi / 3])
SQUARE = np.array([[0.0, 0], [1, 0], [1, 1], [0, 1]])


def test_ordering_is_graded_lex_x_first():
    assert exponents(2).tolist() == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
    assert [monomial_index(a, b) for a, b in exponents(3)] == list(range(10))
    assert nbasis(-1) == 0 and nbasis(0) == 1 and nbasis(2) == 6


def test_constant_monomial_is_one(rng):
    pts = rng.uniform(-3, 3, (7, 2))
    assert np.all(eval_basis(pts, np.array([0.3, -0.1]), 0.7, 3)[:, 0] == 1.0)


def test_linear_basis_at_its_centre():
    c = np.array([0.2, 0.9])
    assert eval_basis(c, c, 0.5, 1).tolist() == [1.0, 0.0, 0.0]


def test_quadratic_monomial_example():
    v = eval_basis(np.array([2.0, 0.0]), np.zeros(2), 2.0, 2)
    assert v[monomial_index(2, 0)] == pytest.approx(1.0)


def test_gradients_match_finite_differences(rng):
    c, h = np.array([0.1, 0.4]), 0.8
    p = rng.uniform(-1, 1, 2)
    _, g = eval_basis(p, c, h, 3, grad=True)
    eps = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = eps
        fd = (eval_basis(p + e, c, h, 3) - eval_basis(p - e, c, h, 3)) / (2 * eps)
        np.testing.assert_allclose(g[:, d], fd, atol=1e-8)


def test_derivative_and_laplacian_tables():
    D = derivative_matrices(2)
    # h d/dx of x^2 is 2x
    assert D[0, monomial_index(1, 0), monomial_index(2, 0)] == 2
    L = laplacian_matrix(2)
    assert L[0, monomial_index(2, 0)] == 2 and L[0, monomial_index(0, 2)] == 2 and L[0, monomial_index(1, 1)] == 0


def test_unit_square_xy():
    q = polygon_quadrature(SQUARE, [0.5, 0.5], 2)
    assert abs(q.integrate(lambda p: p[:, 0] * p[:, 1]) - 0.25) < 1e-14


def test_hexagon_weights_sum_to_area():
    q = polygon_quadrature(HEXAGON, [0.0, 0.0], 0)
    assert abs(q.weights.sum() - 1.5 * np.sqrt(3)) < 1e-14


def test_random_pentagon_against_subdivision(rng):
    P = random_star_polygon(rng, 5)
    z0 = P.mean(axis=0)
    q = polygon_quadrature(P, z0, 6)
    for d in range(7):
        for a in range(d + 1):
            b = d - a
            f = lambda x, y, a=a, b=b: x**a * y**b
            ref = subdivision_integral(f, P)
            got = q.integrate(lambda p: f(p[:, 0], p[:, 1]))
            assert abs(got - ref) <= 1e-10 * max(1.0, abs(ref))


@given(st.integers(0, 2**32 - 1), st.integers(0, MAX_EXACTNESS))
def test_polygon_rule_exact_to_its_degree(seed, degree):
    rng = np.random.default_rng(seed)
    P = random_star_polygon(rng, convex=True)
    q = polygon_quadrature(P, P.mean(axis=0), degree)
    for a in range(degree + 1):
        b = degree - a
        ref = integrate_polygon(monomial(a, b), P)
        got = q.integrate(lambda p: p[:, 0] ** a * p[:, 1] ** b)
        assert abs(got - ref) <= 1e-12 * max(1.0, np.abs(P).max() ** degree * abs(q.weights.sum()))


def test_unsupported_degree():
    with pytest.raises(UnsupportedDegree):
        polygon_quadrature(SQUARE, [0.5, 0.5], MAX_EXACTNESS + 1)
    with pytest.raises(UnsupportedDegree):
        edge_quadrature(SQUARE[:2], -1)
    with pytest.raises(UnsupportedDegree):
        gauss_lobatto_01(0)


def test_edge_rule_exactness():
    q = edge_quadrature(np.array([[0.0, 0.0], [3.0, 4.0]]), 7)
    # int_0^1 t^7 * 5 dt along the edge parametrised by t
    t = q.points[:, 0] / 3.0
    assert abs(np.dot(q.weights, t**7) - 5 / 8) < 1e-14


def test_lobatto_nodes():
    e = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert gauss_lobatto_points(e, 1).tolist() == [[0.0, 0.0], [2.0, 0.0]]
    np.testing.assert_allclose(gauss_lobatto_points(e, 2)[1], [1.0, 0.0], atol=1e-15)
    t, _ = gauss_lobatto_01(3)
    np.testing.assert_allclose(2 * t[1:-1] - 1, [-1 / np.sqrt(5), 1 / np.sqrt(5)], atol=1e-14)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_lobatto_weights_exact_to_2k_minus_1(k):
    t, w = gauss_lobatto_01(k)
    for d in range(2 * k):
        assert abs(np.dot(w, t**d) - 1 / (d + 1)) < 1e-14


def test_split_triangles_preserve_area(rng):
    T = rng.uniform(0, 1, (3, 3, 2))
    S = split_triangles(T, 2)
    assert S.shape == (3, 16, 3, 2)

    def area(t):
        e1, e2 = t[..., 1, :] - t[..., 0, :], t[..., 2, :] - t[..., 0, :]
        return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])

    np.testing.assert_allclose(area(S).sum(axis=1), area(T), rtol=1e-13)
    np.testing.assert_allclose(area(S), np.repeat(area(T)[:, None] / 16, 16, axis=1), rtol=1e-12)
