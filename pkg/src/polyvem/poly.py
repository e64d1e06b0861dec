"""Scaled monomials and quadrature on triangles, polygons and edges.

Monomials are ordered graded-lexicographically, ``x`` before ``y`` within a
degree: ``1, x, y, x^2, xy, y^2, ...``.  The ordering is used everywhere a
polynomial is stored as a coefficient vector.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

from .exceptions import UnsupportedDegree

MAX_EXACTNESS = 10


def nbasis(k: int) -> int:
    """Dimension of P_k in two variables; zero for negative k."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@lru_cache(maxsize=None)
def exponents(k: int) -> np.ndarray:
    """Exponent pairs of all monomials of degree <= k, shape (nbasis(k), 2)."""
    out = [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]
    return np.array(out, dtype=int).reshape(-1, 2)


def monomial_index(a: int, b: int) -> int:
    d = a + b
    return nbasis(d - 1) + (d - a)


@dataclass(frozen=True)
class ScaledMonomialBasis:
    """Monomials ((x - center) / scale)^beta for |beta| <= degree."""

    degree: int
    center: tuple[float, float]
    scale: float

    @property
    def size(self) -> int:
        return nbasis(self.degree)

    @property
    def exponents(self) -> np.ndarray:
        return exponents(self.degree)

    def __call__(self, points, grad: bool = False):
        return eval_basis(points, np.asarray(self.center, float), self.scale, self.degree, grad=grad)


def eval_basis(points, center, scale, k: int, grad: bool = False):
    """Evaluate scaled monomials.

    ``points`` has shape (..., 2); ``center`` must broadcast against it and
    ``scale`` against ``points[..., 0]``.  Returns values of shape
    (..., nbasis(k)) and, if ``grad``, gradients of shape (..., nbasis(k), 2).
    """
    points = np.asarray(points, dtype=float)
    scale = np.asarray(scale, dtype=float)
    s = (points - center) / scale[..., None]
    ex = exponents(k)
    top = max(k, 0)
    # powers[..., p, c] = s_c ** p
    powers = np.ones(s.shape[:-1] + (top + 1, 2))
    for p in range(1, top + 1):
        powers[..., p, :] = powers[..., p - 1, :] * s
    vals = powers[..., ex[:, 0], 0] * powers[..., ex[:, 1], 1]
    if not grad:
        return vals
    ax = np.maximum(ex[:, 0] - 1, 0)
    by = np.maximum(ex[:, 1] - 1, 0)
    gx = ex[:, 0] * powers[..., ax, 0] * powers[..., ex[:, 1], 1]
    gy = ex[:, 1] * powers[..., ex[:, 0], 0] * powers[..., by, 1]
    grads = np.stack([gx, gy], axis=-1) / scale[..., None, None]
    return vals, grads


@lru_cache(maxsize=None)
def laplacian_matrix(k: int) -> np.ndarray:
    """Coefficients of h^2 * Laplace(m_alpha) in M_{k-2}: shape (nbasis(k-2), nbasis(k))."""
    out = np.zeros((nbasis(k - 2), nbasis(k)))
    for j, (a, b) in enumerate(exponents(k)):
        if a >= 2:
            out[monomial_index(a - 2, b), j] += a * (a - 1)
        if b >= 2:
            out[monomial_index(a, b - 2), j] += b * (b - 1)
    return out


@lru_cache(maxsize=None)
def derivative_matrices(k: int) -> np.ndarray:
    """h * d/dx and h * d/dy of M_k expressed in M_{k-1}: shape (2, nbasis(k-1), nbasis(k))."""
    out = np.zeros((2, nbasis(k - 1), nbasis(k)))
    for j, (a, b) in enumerate(exponents(k)):
        if a >= 1:
            out[0, monomial_index(a - 1, b), j] = a
        if b >= 1:
            out[1, monomial_index(a, b - 1), j] = b
    return out


# --- quadrature -----------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exactness: int

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.points)))


def _check_degree(degree: int) -> None:
    if degree < 0 or degree > MAX_EXACTNESS:
        raise UnsupportedDegree(f"quadrature exactness {degree} outside [0, {MAX_EXACTNESS}]")


@lru_cache(maxsize=None)
def reference_triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the unit triangle.

    Returns barycentric coordinates (n, 3) and weights (n,) summing to 1, so
    that ``sum(w * g) * area`` integrates ``g`` over any triangle.
    """
    _check_degree(degree)
    n = max(1, (degree + 2) // 2)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1.0)
    ws = wj / 4.0
    xl, wl = legendre.leggauss(n)
    t = 0.5 * (xl + 1.0)
    wt = 0.5 * wl
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    xi = S.ravel()
    eta = (T * (1.0 - S)).ravel()
    bary = np.column_stack([1.0 - xi - eta, xi, eta])
    # reference area 1/2; normalise so weights sum to one
    return bary, 2.0 * W.ravel()


def triangle_quadrature(tri, degree: int) -> QuadratureRule:
    tri = np.asarray(tri, dtype=float)
    bary, w = reference_triangle_rule(degree)
    area = 0.5 * abs(
        (tri[1, 0] - tri[0, 0]) * (tri[2, 1] - tri[0, 1])
        - (tri[2, 0] - tri[0, 0]) * (tri[1, 1] - tri[0, 1])
    )
    return QuadratureRule(bary @ tri, w * area, degree)


def fan_quadrature(triangles: np.ndarray, degree: int):
    """Map the reference rule onto a batch of triangles.

    ``triangles`` has shape (..., 3, 2).  Returns points (..., nq, 2),
    weights (..., nq) and the barycentric coordinates (nq, 3).
    """
    bary, w = reference_triangle_rule(degree)
    tri = np.asarray(triangles, dtype=float)
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    area = 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    pts = np.einsum("qa,...ac->...qc", bary, tri)
    return pts, area[..., None] * w, bary


def split_triangles(triangles: np.ndarray, levels: int) -> np.ndarray:
    """Uniform 4-way refinement repeated ``levels`` times: (..., 3, 2) -> (..., 4**levels, 3, 2)."""
    tri = np.asarray(triangles, dtype=float)[..., None, :, :]
    for _ in range(levels):
        a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
        ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
        kids = [(a, ab, ca), (ab, b, bc), (ca, bc, c), (bc, ca, ab)]
        tri = np.concatenate([np.stack(k, axis=-2) for k in kids], axis=-3)
    return tri


def polygon_quadrature(cell, star_center, exactness: int) -> QuadratureRule:
    """Quadrature on a polygon through the fan (star_center, z_j, z_{j+1})."""
    _check_degree(exactness)
    cell = np.asarray(cell, dtype=float)
    z0 = np.asarray(star_center, dtype=float)
    tris = np.stack([np.broadcast_to(z0, cell.shape), cell, np.roll(cell, -1, axis=0)], axis=1)
    pts, w, _ = fan_quadrature(tris, exactness)
    return QuadratureRule(pts.reshape(-1, 2), w.ravel(), exactness)


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def gauss_lobatto_01(k: int) -> tuple[np.ndarray, np.ndarray]:
    """k+1 Gauss-Lobatto nodes and weights on [0, 1] (exact to degree 2k-1)."""
    if k < 1:
        raise UnsupportedDegree("Gauss-Lobatto rule needs k >= 1")
    Pk = legendre.Legendre.basis(k)
    interior = np.sort(Pk.deriv().roots().real) if k > 1 else np.array([])
    x = np.concatenate([[-1.0], interior, [1.0]])
    w = 2.0 / (k * (k + 1) * Pk(x) ** 2)
    return 0.5 * (x + 1.0), 0.5 * w


def edge_quadrature(edge, exactness: int) -> QuadratureRule:
    _check_degree(exactness)
    a, b = np.asarray(edge, dtype=float)
    t, w = gauss_legendre_01(max(1, (exactness + 2) // 2))
    length = float(np.hypot(*(b - a)))
    return QuadratureRule(a + t[:, None] * (b - a), w * length, exactness)


def gauss_lobatto_points(edge, k: int) -> np.ndarray:
    """The k+1 Gauss-Lobatto points of an edge, endpoints included."""
    a, b = np.asarray(edge, dtype=float)
    t, _ = gauss_lobatto_01(k)
    return a + t[:, None] * (b - a)
