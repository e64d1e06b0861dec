"""Small builders shared by the test modules."""
import numpy as np

from oracles import add, const, monomial, random_star_polygon, scale
from polyvem.mesh import PolygonalMesh
from polyvem.vem_space import VemSpace


def single_cell_space(P, k):
    P = np.asarray(P, dtype=float)
    return VemSpace(PolygonalMesh(P, [list(range(len(P)))]), k)


def random_cell_space(seed, k, convex=False):
    P = random_star_polygon(np.random.default_rng(seed), convex=convex)
    return P, single_cell_space(P, k)


def academic_polys():
    """A, b, gamma of the indefinite test operator as coefficient arrays."""
    xy = monomial(1, 1)
    A = [[add(monomial(0, 2), const(1.0)), scale(xy, -1.0)], [scale(xy, -1.0), add(monomial(2, 0), const(1.0))]]
    b = [monomial(1, 0), monomial(0, 1)]
    gamma = add(monomial(2, 0), monomial(0, 3))
    return A, b, gamma
