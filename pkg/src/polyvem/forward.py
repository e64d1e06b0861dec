"""Forward problems: assembly, right-hand sides, solution and error norms."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coefficients import CoefficientSet
from .companion import CompanionOperator
from .exceptions import IncompatibleQ, NotNested, SingularSystem
from .mesh import PolygonalMesh, PointLocator, barycentric
from .poly import MAX_EXACTNESS, eval_basis, fan_quadrature, nbasis
from .vem_space import VemSpace, batch_general, batch_mass, batch_poisson_stiffness, parallel_map

Q_MODES = ("pik", "j")


def _check_q(q: str) -> str:
    q = q.lower()
    if q in ("pi", "pi_k", "pi1", "pi_1"):
        q = "pik"
    if q not in Q_MODES:
        raise IncompatibleQ(f"unknown Q-mode {q!r}; expected one of {Q_MODES}")
    return q


# --- source functionals ---------------------------------------------------------


@dataclass(frozen=True)
class Density:
    """L2 source density f(x, y), vectorised."""

    f: Callable
    name: str = "density"


@dataclass(frozen=True)
class PointLoad:
    point: tuple
    weight: float = 1.0


@dataclass(frozen=True)
class Combination:
    terms: tuple  # of (weight, functional)


SourceFunctional = Union[Density, PointLoad, Combination]


# --- assembly -------------------------------------------------------------------


def assemble_poisson(space: VemSpace, reduce: bool = True) -> sp.csr_matrix:
    """a_h(v, w) = a_pw(Pi_nabla v, Pi_nabla w) + s_h((1-Pi_nabla)v, (1-Pi_nabla)w)."""
    blocks = parallel_map(lambda b: batch_poisson_stiffness(b) + b.stabilization, space.batches)
    return space.assemble(blocks, reduce)


def assemble_mass(space: VemSpace, reduce: bool = True) -> sp.csr_matrix:
    """Consistency mass (Pi_k v, Pi_k w)."""
    return space.assemble(parallel_map(batch_mass, space.batches), reduce)


def assemble_general(space: VemSpace, coeffs: CoefficientSet, reduce: bool = True) -> sp.csr_matrix:
    """B_h with Pi_{k-1} grad in diffusion and convection; rows are test functions."""

    def block(b):
        diff, conv, react = batch_general(b, coeffs)
        out = diff + b.stabilization
        if conv is not None:
            out = out + conv
        if react is not None:
            out = out + react
        return out

    return space.assemble(parallel_map(block, space.batches), reduce)


def assemble_rhs(
    space: VemSpace,
    f: SourceFunctional,
    q: str = "pik",
    companion: Optional[CompanionOperator] = None,
    reduce: bool = True,
) -> np.ndarray:
    """Load vector f(Q phi_i) over the DOFs."""
    q = _check_q(q)
    out = _rhs_full(space, f, q, companion)
    return out[space.free] if reduce else out


def _rhs_full(space, f, q, companion) -> np.ndarray:
    if isinstance(f, Combination):
        out = np.zeros(space.n_dofs)
        for w, g in f.terms:
            out += w * _rhs_full(space, g, q, companion)
        return out
    if isinstance(f, PointLoad):
        if q == "pik":
            raise IncompatibleQ("a point load needs Q = J")
        op = companion or CompanionOperator(space)
        return f.weight * op.point_vector(f.point)
    if isinstance(f, Density):
        if q == "j":
            op = companion or CompanionOperator(space)
            return op.functional_vector(f.f)
        blocks = []
        for b in space.batches:
            fq = np.broadcast_to(np.asarray(f.f(b.qp[..., 0], b.qp[..., 1]), dtype=float), b.qp.shape[:-1])
            blocks.append(np.einsum("bq,bq,bqd->bd", b.qw, fq, b.pik_q, optimize=True))
        return space.assemble_vector(blocks, reduce=False)
    raise TypeError(f"unsupported source functional {type(f).__name__}")


# --- solution ---------------------------------------------------------------------


class SparseSolver:
    """Sparse LU factorisation with a residual check on every solve."""

    def __init__(self, A: sp.spmatrix, tol: float = 1e-10):
        self.A = sp.csc_matrix(A)
        self.tol = tol
        if self.A.shape[0] == 0:
            self._lu = None
            return
        try:
            self._lu = spla.splu(self.A, permc_spec="COLAMD")
        except RuntimeError as err:
            raise SingularSystem(str(err)) from None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return np.zeros_like(rhs)
        x = self._lu.solve(rhs)
        r = self.A @ x - rhs
        rn = np.linalg.norm(r, axis=0)
        bn = np.linalg.norm(rhs, axis=0)
        bad = rn > self.tol * np.maximum(bn, np.finfo(float).tiny)
        if not np.all(np.isfinite(x)) or np.any(bad & (bn > 0)):
            # one step of iterative refinement before giving up
            x = x - self._lu.solve(r)
            rn = np.linalg.norm(self.A @ x - rhs, axis=0)
            if not np.all(np.isfinite(x)) or np.any((rn > self.tol * bn) & (bn > 0)):
                raise SingularSystem(f"relative residual {np.max(rn / np.maximum(bn, 1e-300)):.3e} exceeds {self.tol}")
        return x


@dataclass(frozen=True)
class DiscreteSolution:
    space: VemSpace
    dofs: np.ndarray
    q: str = "pik"

    @cached_property
    def projection(self) -> np.ndarray:
        """Pi_k u_h coefficients per cell, (n_cells, nbasis(k))."""
        out = np.empty((self.space.mesh.n_cells, nbasis(self.space.k)))
        for b in self.space.batches:
            out[b.cells] = np.einsum("bnd,bd->bn", b.pi_k_star, self.dofs[b.dofs])
        return out

    def evaluate_projection(self, points, cells, grad: bool = False):
        """Pi_k u_h at points (..., 2) lying in the given cells (...)."""
        mesh = self.space.mesh
        coef = self.projection[cells]
        res = eval_basis(points, mesh.centroids[cells], mesh.diameters[cells], self.space.k, grad=grad)
        if not grad:
            return np.einsum("...n,...n->...", res, coef)
        v, g = res
        return np.einsum("...n,...n->...", v, coef), np.einsum("...nc,...n->...c", g, coef)


def solve(matrix: sp.spmatrix, rhs: np.ndarray, space: Optional[VemSpace] = None, q: str = "pik"):
    """Solve the reduced system; returns a DiscreteSolution when ``space`` is given."""
    x = SparseSolver(matrix).solve(rhs)
    if space is None:
        return x
    return DiscreteSolution(space, space.extend(x), _check_q(q))


def solve_forward(
    mesh: PolygonalMesh,
    source: SourceFunctional,
    coeffs: Optional[CoefficientSet] = None,
    k: int = 1,
    q: str = "pik",
) -> DiscreteSolution:
    """Assemble and solve the Poisson (coeffs None) or general problem."""
    space = VemSpace(mesh, k)
    A = assemble_poisson(space) if coeffs is None or coeffs.is_poisson else assemble_general(space, coeffs)
    F = assemble_rhs(space, source, q)
    return solve(A, F, space, q)


# --- error norms ---------------------------------------------------------------------


@dataclass(frozen=True)
class ExactSolution:
    u: Callable
    grad: Callable


def error_degree(k: int) -> int:
    return min(MAX_EXACTNESS, 2 * k + 4)


def _cell_rule(mesh: PolygonalMesh, degree: int):
    """Fan quadrature of every cell: points (T, nq, 2), weights (T, nq), owner cell (T,)."""
    st = mesh.subtriangulation
    pts, w, _ = fan_quadrature(st.triangles, degree)
    return pts, w, st.tri_cell


def _norms_exact(sol: DiscreteSolution, ref: ExactSolution):
    pts, w, cell = _cell_rule(sol.space.mesh, error_degree(sol.space.k))
    cells = np.broadcast_to(cell[:, None], w.shape)
    v, g = sol.evaluate_projection(pts, cells, grad=True)
    u = np.broadcast_to(np.asarray(ref.u(pts[..., 0], pts[..., 1]), float), w.shape)
    gu = np.asarray(ref.grad(pts[..., 0], pts[..., 1]), float)
    e0 = np.sum(w * (u - v) ** 2)
    e1 = np.sum(w * np.sum((gu - g) ** 2, axis=-1))
    n0 = np.sum(w * u**2)
    n1 = np.sum(w * np.sum(gu**2, axis=-1))
    return _ratio(e1, n1), _ratio(e0, n0)


def _ratio(e: float, n: float) -> float:
    return float(np.sqrt(e / n)) if n > 0 else 0.0


@dataclass(frozen=True)
class Overlay:
    """Common refinement of a fine and a coarse mesh by triangles.

    ``points``/``weights`` form a quadrature rule on each piece; ``fine`` and
    ``coarse`` give the owning cell of every piece in each mesh.
    """

    points: np.ndarray
    weights: np.ndarray
    fine: np.ndarray
    coarse: np.ndarray


def nested_owners(fine: PolygonalMesh, coarse: PolygonalMesh, tol: float = 1e-9) -> np.ndarray:
    """Coarse cell containing each fine cell; raises NotNested otherwise."""
    loc = PointLocator(coarse)
    owner, _, _ = loc.locate_many(fine.subtriangulation.z0, strict=False)
    if np.any(owner < 0):
        raise NotNested("fine cell centre outside the coarse mesh")
    cst = coarse.subtriangulation
    # vectorised containment test of every fine vertex in its owner's fan
    nvc = coarse.n_cell_vertices
    fv_cells = np.repeat(np.arange(fine.n_cells), fine.n_cell_vertices)
    fv = fine.vertices[np.concatenate(fine.cells)]
    own = owner[fv_cells]
    ok = np.zeros(len(fv), dtype=bool)
    for n in np.unique(nvc[own]):
        sel = np.flatnonzero(nvc[own] == n)
        tri = cst.triangles[cst.offsets[own[sel]][:, None] + np.arange(n)]
        lam = barycentric(tri, fv[sel][:, None, :])
        ok[sel] = np.any(lam.min(axis=-1) >= -tol, axis=1)
    if not np.all(ok):
        raise NotNested(f"{int((~ok).sum())} fine vertices lie outside their coarse owner cell")
    return owner


def overlay(fine: PolygonalMesh, coarse: PolygonalMesh, degree: int) -> Overlay:
    """Intersect the fan triangles of two meshes covering the same domain."""
    import shapely
    from shapely import STRtree

    ft = fine.subtriangulation
    ct = coarse.subtriangulation
    fpolys = shapely.polygons(ft.triangles)
    cpolys = shapely.polygons(ct.triangles)
    tree = STRtree(cpolys)
    fi, ci = tree.query(fpolys, predicate="intersects")
    pieces = shapely.intersection(fpolys[fi], cpolys[ci])
    area = shapely.area(pieces)
    scale = ft.area[fi]
    keep = area > 1e-12 * scale
    fi, ci, pieces = fi[keep], ci[keep], pieces[keep]
    tris, tf, tc = [], [], []
    for p, a, b in zip(pieces, fi, ci):
        for poly in getattr(p, "geoms", [p]):
            if poly.geom_type != "Polygon" or poly.area <= 0:
                continue
            xy = np.asarray(poly.exterior.coords)[:-1]
            for j in range(1, len(xy) - 1):
                tris.append((xy[0], xy[j], xy[j + 1]))
                tf.append(a)
                tc.append(b)
    tris = np.array(tris)
    pts, w, _ = fan_quadrature(tris, degree)
    w = np.abs(w)
    return Overlay(pts, w, ft.tri_cell[np.array(tf)], ct.tri_cell[np.array(tc)])


def _norms_discrete(sol: DiscreteSolution, ref: DiscreteSolution, allow_overlay: bool):
    fine, coarse = ref.space.mesh, sol.space.mesh
    degree = error_degree(max(sol.space.k, ref.space.k))
    if fine is coarse:
        pts, w, cell = _cell_rule(fine, degree)
        fc = cc = np.broadcast_to(cell[:, None], w.shape)
    else:
        try:
            owner = nested_owners(fine, coarse)
            pts, w, cell = _cell_rule(fine, degree)
            fc = np.broadcast_to(cell[:, None], w.shape)
            cc = np.broadcast_to(owner[cell][:, None], w.shape)
        except NotNested:
            if not allow_overlay:
                raise
            ov = overlay(fine, coarse, degree)
            pts, w = ov.points, ov.weights
            fc = np.broadcast_to(ov.fine[:, None], w.shape)
            cc = np.broadcast_to(ov.coarse[:, None], w.shape)
    vr, gr = ref.evaluate_projection(pts, fc, grad=True)
    vs, gs = sol.evaluate_projection(pts, cc, grad=True)
    e0 = np.sum(w * (vr - vs) ** 2)
    e1 = np.sum(w * np.sum((gr - gs) ** 2, axis=-1))
    n0 = np.sum(w * vr**2)
    n1 = np.sum(w * np.sum(gr**2, axis=-1))
    return _ratio(e1, n1), _ratio(e0, n0)


def error_norms(
    solution: DiscreteSolution,
    reference: Union[ExactSolution, DiscreteSolution],
    allow_overlay: bool = False,
) -> tuple[float, float]:
    """Relative (err_1, err_0) of Pi_k u_h against an exact or finer discrete solution.

    Errors are piecewise over the finer mesh.  Cross-mesh comparison needs
    nested meshes unless ``allow_overlay`` permits intersecting the meshes.
    """
    if isinstance(reference, DiscreteSolution):
        return _norms_discrete(solution, reference, allow_overlay)
    return _norms_exact(solution, reference)


def rates(h, errors) -> list:
    """log(e_i / e_{i+1}) / log(h_i / h_{i+1}); None where undefined."""
    out = []
    for i in range(len(h) - 1):
        e0, e1 = errors[i], errors[i + 1]
        if e0 > 0 and e1 > 0 and h[i] != h[i + 1]:
            out.append(float(np.log(e0 / e1) / np.log(h[i] / h[i + 1])))
        else:
            out.append(None)
    out.append(None)
    return out
