"""Tikhonov-regularised Poisson inverse source problem with p = 1.

With A the a_h stiffness on free DOFs, M the consistency mass and S the
measurement matrix S_ir = h_i(Q phi_r), the forward operator is U = A^-1 M
and the reconstruction solves

    ((SU)^T (SU) + alpha B) f = (SU)^T m,    B = A.

``G = SU`` is formed from N adjoint solves (G^T = M A^-1 S^T) and the
system is solved in push-through form f = B^-1 G^T (alpha I + G B^-1 G^T)^-1 m,
which only factors an N x N matrix.  L = G B^-1 G^T is also the matrix of
B_tau(eta_i, eta_j) used for the choice of alpha.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg as sla

from .companion import CompanionOperator
from .exceptions import BadParams, NotSPD, OutsideDomain, PointOutside
from .forward import (
    Density,
    DiscreteSolution,
    ExactSolution,
    SparseSolver,
    assemble_mass,
    assemble_poisson,
    assemble_rhs,
    error_norms,
)
from .mesh import PointLocator, PolygonalMesh
from .poly import fan_quadrature
from .vem_space import VemSpace

ALPHA_MIN = 1e-12
POWER_TOL = 1e-10


# --- measurement functionals -----------------------------------------------------


@dataclass(frozen=True)
class SubdomainAverage:
    """Mean value over a union of cells.

    The cells are given explicitly or as the axis-aligned ``box``
    (x0, x1, y0, y1); a box must be a union of mesh cells.
    """

    box: Optional[tuple] = None
    cells: Optional[tuple] = None

    def resolve(self, mesh: PolygonalMesh) -> np.ndarray:
        if self.cells is not None:
            cells = np.unique(np.asarray(self.cells, dtype=np.int64))
            if len(cells) == 0 or cells.min() < 0 or cells.max() >= mesh.n_cells:
                raise BadParams("subdomain cell set is empty or out of range")
            return cells
        if self.box is None:
            raise BadParams("subdomain average needs a box or a cell set")
        x0, x1, y0, y1 = self.box
        c = mesh.centroids
        cells = np.flatnonzero((c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1))
        target = (x1 - x0) * (y1 - y0)
        if len(cells) == 0 or abs(mesh.areas[cells].sum() - target) > 1e-10 * max(target, 1.0):
            raise BadParams(f"box {self.box} is not a union of mesh cells")
        inside = mesh.vertices[np.concatenate([mesh.cells[i] for i in cells])]
        tol = 1e-12
        if np.any((inside[:, 0] < x0 - tol) | (inside[:, 0] > x1 + tol) | (inside[:, 1] < y0 - tol) | (inside[:, 1] > y1 + tol)):
            raise BadParams(f"box {self.box} is not a union of mesh cells")
        return cells


@dataclass(frozen=True)
class PointValue:
    point: tuple


Measurement = Union[SubdomainAverage, PointValue]


def _check_measurements(H: Sequence[Measurement]) -> list:
    H = list(H)
    if not H:
        raise BadParams("at least one measurement functional is required")
    return H


def _check_inside(mesh: PolygonalMesh, point) -> None:
    try:
        PointLocator(mesh).locate(point)
    except OutsideDomain as err:
        raise PointOutside(str(err)) from None


def measurement_matrix(space: VemSpace, H: Sequence[Measurement], companion: Optional[CompanionOperator] = None) -> np.ndarray:
    """S_ir = h_i(Q phi_r) over all DOFs; averages use Pi_k moments, points use J."""
    H = _check_measurements(H)
    S = np.zeros((len(H), space.n_dofs))
    for i, h in enumerate(H):
        if isinstance(h, SubdomainAverage):
            cells = h.resolve(space.mesh)
            omega = space.mesh.areas[cells].sum()
            for c in cells:
                b, r = space.locate_cell(int(c))
                np.add.at(S[i], b.dofs[r], b.C[r, 0] / omega)
        elif isinstance(h, PointValue):
            op = companion or CompanionOperator(space)
            try:
                S[i] = op.point_vector(h.point)
            except OutsideDomain as err:
                raise PointOutside(str(err)) from None
        else:
            raise TypeError(f"unsupported measurement {type(h).__name__}")
    return S


def apply_measurements(space: VemSpace, H: Sequence[Measurement], dofs: np.ndarray, companion=None) -> np.ndarray:
    """Vector h_i(Q v_h) for a global DOF vector."""
    return measurement_matrix(space, H, companion) @ np.asarray(dofs, dtype=float)


def exact_measurements(mesh: PolygonalMesh, H: Sequence[Measurement], u: Callable, degree: int = 10) -> np.ndarray:
    """h_i(u) of a smooth function by quadrature (averages) or evaluation (points)."""
    H = _check_measurements(H)
    out = np.empty(len(H))
    st = mesh.subtriangulation
    for i, h in enumerate(H):
        if isinstance(h, SubdomainAverage):
            cells = h.resolve(mesh)
            tri = np.isin(st.tri_cell, cells)
            pts, w, _ = fan_quadrature(st.triangles[tri], degree)
            out[i] = np.sum(w * u(pts[..., 0], pts[..., 1])) / mesh.areas[cells].sum()
        else:
            _check_inside(mesh, h.point)
            out[i] = float(u(np.float64(h.point[0]), np.float64(h.point[1])))
    return out


# --- noise and alpha ------------------------------------------------------------------


def seeded_noise(m: np.ndarray, relative: float, seed: int) -> np.ndarray:
    """Gaussian noise rescaled to ||n|| = relative * ||m||."""
    if relative == 0:
        return np.zeros_like(m)
    rng = np.random.default_rng(seed)
    n = rng.standard_normal(len(m))
    return n * (relative * np.linalg.norm(m) / np.linalg.norm(n))


def power_iteration(L: np.ndarray, tol: float = POWER_TOL, max_iter: int = 10000) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix."""
    L = np.asarray(L, dtype=float)
    if L.shape == (1, 1):
        return float(L[0, 0])
    x = np.ones(L.shape[0]) / np.sqrt(L.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        y = L @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        x = y / ny
        new = float(x @ L @ x)
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return lam


def alpha_objective(alpha, c1: float, c2: float):
    return c1 * np.asarray(alpha) + c2 / np.sqrt(alpha)


def select_alpha(lambda_max: float, f_true_norm: float, noise_norm: float, alpha_min: float = ALPHA_MIN) -> float:
    """Minimiser of alpha ||f_true|| / lambda_max + ||n|| / (2 sqrt(alpha)).

    Zero noise has no positive minimiser; the floor ``alpha_min`` is returned.
    """
    if noise_norm <= 0:
        return alpha_min
    if f_true_norm <= 0 or lambda_max <= 0:
        raise BadParams("alpha selection needs positive ||f_true|| and lambda_max")
    c1 = f_true_norm / lambda_max
    c2 = noise_norm / 2.0
    return float(max((c2 / (2.0 * c1)) ** (2.0 / 3.0), alpha_min))


# --- the discrete inverse system ---------------------------------------------------------


class InverseSystem:
    """Matrices of the discrete inverse problem on one mesh."""

    def __init__(self, space: VemSpace, H: Sequence[Measurement], companion: Optional[CompanionOperator] = None):
        self.space = space
        self.H = _check_measurements(H)
        self.companion = companion or CompanionOperator(space)
        self.A = assemble_poisson(space)
        self.M = assemble_mass(space)
        self.solver = SparseSolver(self.A)
        self.S_full = measurement_matrix(space, self.H, self.companion)
        self.S = self.S_full[:, space.free]

    @property
    def B(self):
        return self.A

    @property
    def n_measurements(self) -> int:
        return len(self.H)

    @cached_property
    def Z(self) -> np.ndarray:
        """Adjoint states A^-1 S^T, (n_free, N)."""
        return self.solver.solve(self.S.T.copy())

    @cached_property
    def G(self) -> np.ndarray:
        """SU = S A^-1 M, (N, n_free)."""
        return np.asarray(self.M.T @ self.Z).T

    @cached_property
    def Y(self) -> np.ndarray:
        """B^-1 G^T, (n_free, N)."""
        return self.solver.solve(self.G.T.copy())

    @cached_property
    def L(self) -> np.ndarray:
        L = self.G @ self.Y
        return 0.5 * (L + L.T)

    @cached_property
    def lambda_max(self) -> float:
        return power_iteration(self.L)

    def forward_operator(self) -> np.ndarray:
        """Dense U = A^-1 M; intended for small meshes and checks."""
        return self.solver.solve(self.M.toarray())

    def reconstruct(self, m: np.ndarray, alpha: float) -> "Reconstruction":
        if not alpha > 0:
            raise BadParams("alpha must be positive")
        m = np.asarray(m, dtype=float)
        cap = self.L + alpha * np.eye(self.n_measurements)
        try:
            fac = sla.cho_factor(cap)
        except np.linalg.LinAlgError:
            raise NotSPD("capacitance matrix alpha I + L is not positive definite") from None
        f = self.Y @ sla.cho_solve(fac, m)
        return self._result(f, m, alpha)

    def reconstruct_dense(self, m: np.ndarray, alpha: float) -> "Reconstruction":
        """Direct Cholesky solve of ((SU)^T SU + alpha B) f = (SU)^T m."""
        m = np.asarray(m, dtype=float)
        K = self.G.T @ self.G + alpha * self.A.toarray()
        try:
            fac = sla.cho_factor(K)
        except np.linalg.LinAlgError:
            raise NotSPD("(SU)^T(SU) + alpha B is not positive definite") from None
        f = sla.cho_solve(fac, self.G.T @ m)
        return self._result(f, m, alpha)

    def _result(self, f: np.ndarray, m: np.ndarray, alpha: float) -> "Reconstruction":
        sol = DiscreteSolution(self.space, self.space.extend(f), "pik")
        return Reconstruction(solution=sol, alpha=float(alpha), residual=float(np.linalg.norm(m - self.G @ f)))

    def forward_measurements(self, f: Callable, q: str = "pik") -> tuple[np.ndarray, DiscreteSolution]:
        """m_h = H_h K_h f for a density f."""
        F = assemble_rhs(self.space, Density(f), q, self.companion)
        u = self.solver.solve(F)
        sol = DiscreteSolution(self.space, self.space.extend(u), q)
        return self.S @ u, sol


@dataclass(frozen=True)
class Reconstruction:
    solution: DiscreteSolution
    alpha: float
    residual: float

    @property
    def dofs(self) -> np.ndarray:
        return self.solution.dofs

    @property
    def projection(self) -> np.ndarray:
        return self.solution.projection

    def b_norm(self, system: InverseSystem) -> float:
        f = self.dofs[system.space.free]
        return float(np.sqrt(f @ (system.A @ f)))


def reconstruct(system: InverseSystem, m: np.ndarray, alpha: float) -> Reconstruction:
    return system.reconstruct(m, alpha)


def build_forward_operator(space: VemSpace) -> np.ndarray:
    """Dense U with columns K_h phi_j on the free DOFs."""
    A = assemble_poisson(space)
    M = assemble_mass(space)
    return SparseSolver(A).solve(M.toarray())


def l2_norm(f: Callable, mesh: PolygonalMesh, degree: int = 10) -> float:
    st = mesh.subtriangulation
    pts, w, _ = fan_quadrature(st.triangles, degree)
    return float(np.sqrt(np.sum(w * f(pts[..., 0], pts[..., 1]) ** 2)))


# --- multi-level study ------------------------------------------------------------------


@dataclass
class InverseLevel:
    h: float
    ndof: int
    err_m: float
    err1_f: float
    err0_f: float
    err1_fh: Optional[float]
    err0_fh: Optional[float]
    probe: Optional[float]
    reconstruction: Reconstruction = field(repr=False)


@dataclass
class InverseStudy:
    alpha: float
    noise: np.ndarray
    m: np.ndarray
    levels: list


def inverse_study(
    meshes: Sequence[PolygonalMesh],
    H: Sequence[Measurement],
    u_true: Callable,
    f_true: ExactSolution,
    noise: float = 0.0,
    seed: int = 0,
    alpha: Union[str, float] = "auto",
    probe: Optional[tuple] = None,
    H_levels: Optional[Sequence[Sequence[Measurement]]] = None,
) -> InverseStudy:
    """Reconstruct on every mesh and tabulate the error measures.

    Noise is drawn once for the measurement vector of the exact solution.
    With ``alpha="auto"`` the parameter is selected on the finest mesh and
    reused on all levels.  err(f_h) is taken against the finest level.
    ``H_levels`` gives the functionals per mesh when they are tied to cell ids.
    """
    meshes = list(meshes)
    H_levels = [list(H)] * len(meshes) if H_levels is None else [list(h) for h in H_levels]
    if len(H_levels) != len(meshes):
        raise BadParams("one measurement set per mesh is required")
    m = exact_measurements(meshes[-1], H_levels[-1], u_true)
    n = seeded_noise(m, noise, seed)
    md = m + n
    systems = [None] * len(meshes)
    systems[-1] = InverseSystem(VemSpace(meshes[-1], 1), H_levels[-1])
    if alpha == "auto":
        a = select_alpha(systems[-1].lambda_max, l2_norm(f_true.u, meshes[-1]), float(np.linalg.norm(n)))
    else:
        a = float(alpha)
        if not a > 0:
            raise BadParams("alpha must be positive")
    recs = []
    for i, mesh in enumerate(meshes):
        sysm = systems[i] or InverseSystem(VemSpace(mesh, 1), H_levels[i])
        recs.append((sysm, sysm.reconstruct(md, a)))
    final = recs[-1][1].solution
    levels = []
    for mesh, (sysm, rec) in zip(meshes, recs):
        mh, _ = sysm.forward_measurements(f_true.u)
        err_m = float(np.linalg.norm(m - mh) / np.linalg.norm(m))
        e1f, e0f = error_norms(rec.solution, f_true)
        if rec.solution is final:
            e1h = e0h = None
        else:
            e1h, e0h = error_norms(rec.solution, final)
        pv = None
        if probe is not None:
            pv = float(sysm.companion.evaluate(rec.dofs, np.asarray(probe, float).reshape(1, 2))[0])
        levels.append(InverseLevel(mesh.h_max, sysm.space.n_free, err_m, e1f, e0f, e1h, e0h, pv, rec))
    return InverseStudy(alpha=a, noise=n, m=m, levels=levels)
