"""Enhanced conforming virtual element space of degree k in {1, 2}.

Local degrees of freedom of a cell with N_P vertices, in this order:

* values at the N_P vertices,
* values at the k-1 interior Gauss-Lobatto points of each edge
  (edge j runs from z_j to z_{j+1}),
* scaled moments (1/|P|) int_P v m_alpha for |alpha| <= k-2.

Cells with the same vertex count are processed together as one batch; all
projector matrices carry a leading batch axis.  Matrices named ``*_star``
map local DOF vectors to scaled-monomial coefficients.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .coefficients import CoefficientSet
from .exceptions import SingularLocalSystem, UnsupportedDegree
from .mesh import PolygonalMesh
from .poly import (
    MAX_EXACTNESS,
    derivative_matrices,
    eval_basis,
    fan_quadrature,
    gauss_lobatto_01,
    laplacian_matrix,
    nbasis,
    split_triangles,
)

SUPPORTED_DEGREES = (1, 2)


def quadrature_degree(k: int) -> int:
    return 2 * k + 2


def n_local_dofs(k: int, n_vertices: int) -> int:
    return k * n_vertices + k * (k - 1) // 2


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("POLYVEM_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn: Callable, items: list) -> list:
    """Map over items with at most POLYVEM_THREADS threads, preserving order."""
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass
class CellBatch:
    """Geometry, quadrature and projectors of all cells with N_P vertices."""

    k: int
    n_vertices: int
    cells: np.ndarray
    dofs: np.ndarray
    X: np.ndarray
    center: np.ndarray
    h: np.ndarray
    area: np.ndarray
    triangles: np.ndarray
    qp: np.ndarray
    qw: np.ndarray
    basis_q: np.ndarray
    D: np.ndarray
    B: np.ndarray
    G: np.ndarray
    H: np.ndarray
    C: np.ndarray
    pi_nabla_star: np.ndarray
    pi_k_star: np.ndarray
    pi_grad_star: np.ndarray

    @property
    def ndof(self) -> int:
        return n_local_dofs(self.k, self.n_vertices)

    @property
    def size(self) -> int:
        return len(self.cells)

    @cached_property
    def pi_nabla(self) -> np.ndarray:
        return self.D @ self.pi_nabla_star

    @cached_property
    def stabilization(self) -> np.ndarray:
        R = np.eye(self.ndof) - self.pi_nabla
        return np.einsum("bki,bkj->bij", R, R)

    @cached_property
    def pik_q(self) -> np.ndarray:
        """Values of Pi_k phi_i at the quadrature points, (B, Q, ndof)."""
        return self.basis_q @ self.pi_k_star

    @cached_property
    def pigrad_q(self) -> np.ndarray:
        """Values of Pi_{k-1} grad phi_i at the quadrature points, (B, Q, 2, ndof)."""
        nbg = nbasis(self.k - 1)
        return np.einsum("bqn,bcnd->bqcd", self.basis_q[..., :nbg], self.pi_grad_star)

    def moment_slice(self) -> slice:
        start = self.k * self.n_vertices
        return slice(start, start + nbasis(self.k - 2))


@dataclass(frozen=True)
class LocalProjectors:
    D: np.ndarray
    pi_nabla_star: np.ndarray
    pi_nabla: np.ndarray
    pi_k_star: np.ndarray
    pi_k: np.ndarray
    pi_grad_star: np.ndarray
    G: np.ndarray
    H: np.ndarray


@dataclass(frozen=True)
class LocalMatrices:
    stiffness: np.ndarray
    stabilization: np.ndarray
    mass: np.ndarray
    diffusion: Optional[np.ndarray] = None
    convection: Optional[np.ndarray] = None
    reaction: Optional[np.ndarray] = None

    @property
    def poisson(self) -> np.ndarray:
        return self.stiffness + self.stabilization

    @property
    def general(self) -> np.ndarray:
        out = self.diffusion + self.stabilization
        if self.convection is not None:
            out = out + self.convection
        if self.reaction is not None:
            out = out + self.reaction
        return out


class VemSpace:
    """Global DOF enumeration and batched local projectors on a mesh."""

    def __init__(self, mesh: PolygonalMesh, k: int = 1):
        if k not in SUPPORTED_DEGREES:
            raise UnsupportedDegree(f"degree k={k} not supported; use one of {SUPPORTED_DEGREES}")
        self.mesh = mesh
        self.k = int(k)
        nv, ne, nc = mesh.n_vertices, mesh.n_edges, mesh.n_cells
        self.n_vertex_dofs = nv
        self.n_edge_dofs = (k - 1) * ne
        self.n_moment_dofs = nbasis(k - 2) * nc
        self.n_dofs = nv + self.n_edge_dofs + self.n_moment_dofs
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[:nv] = mesh.boundary_vertex_flags
        if k > 1:
            mask[nv:nv + self.n_edge_dofs] = np.repeat(mesh.boundary_edges, k - 1)
        mask.setflags(write=False)
        self.boundary_mask = mask
        self.free = np.flatnonzero(~mask)

    # --- DOF maps ---------------------------------------------------------

    def cell_dofs(self, c: int) -> np.ndarray:
        k, mesh = self.k, self.mesh
        cyc = mesh.cells[c]
        parts = [cyc]
        if k > 1:
            edges = mesh.cell_edges[c]
            fwd = cyc < np.roll(cyc, -1)
            inner = np.arange(k - 1)
            for e, f in zip(edges, fwd):
                idx = mesh.n_vertices + e * (k - 1) + (inner if f else inner[::-1])
                parts.append(idx)
        nm = nbasis(k - 2)
        parts.append(mesh.n_vertices + self.n_edge_dofs + c * nm + np.arange(nm))
        return np.concatenate(parts).astype(np.int64)

    @cached_property
    def dof_maps(self) -> tuple:
        return tuple(self.cell_dofs(c) for c in range(self.mesh.n_cells))

    @property
    def n_free(self) -> int:
        return len(self.free)

    # --- batches ----------------------------------------------------------

    @cached_property
    def batches(self) -> list:
        counts = self.mesh.n_cell_vertices
        groups = [np.flatnonzero(counts == n) for n in np.unique(counts)]
        return parallel_map(lambda cells: _build_batch(self, cells), groups)

    @cached_property
    def _cell_slot(self) -> tuple:
        batch_of = np.empty(self.mesh.n_cells, dtype=np.int64)
        row_of = np.empty(self.mesh.n_cells, dtype=np.int64)
        for b, batch in enumerate(self.batches):
            batch_of[batch.cells] = b
            row_of[batch.cells] = np.arange(batch.size)
        return batch_of, row_of

    def locate_cell(self, c: int) -> tuple[CellBatch, int]:
        b, r = self._cell_slot
        return self.batches[b[c]], int(r[c])

    def assemble(self, blocks: list, reduce: bool = True) -> sp.csr_matrix:
        """Sum per-batch local matrices (B, ndof, ndof) into a global CSR matrix."""
        rows, cols, vals = [], [], []
        for batch, block in zip(self.batches, blocks):
            d = batch.dofs
            rows.append(np.broadcast_to(d[:, :, None], block.shape).ravel())
            cols.append(np.broadcast_to(d[:, None, :], block.shape).ravel())
            vals.append(block.ravel())
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_dofs, self.n_dofs),
        ).tocsr()
        A.sum_duplicates()
        if reduce:
            A = A[self.free][:, self.free]
        return A.tocsr()

    def assemble_vector(self, blocks: list, reduce: bool = True) -> np.ndarray:
        out = np.zeros(self.n_dofs)
        for batch, block in zip(self.batches, blocks):
            np.add.at(out, batch.dofs, block)
        return out[self.free] if reduce else out

    def extend(self, u_free: np.ndarray) -> np.ndarray:
        """Global DOF vector from free values (zero Dirichlet data)."""
        u = np.zeros(self.n_dofs)
        u[self.free] = u_free
        return u

    def __repr__(self) -> str:
        return f"VemSpace(k={self.k}, n_dofs={self.n_dofs}, n_free={self.n_free})"


def build_space(mesh: PolygonalMesh, k: int = 1) -> VemSpace:
    return VemSpace(mesh, k)


# --- local construction -----------------------------------------------------


def _boundary_selector(k: int, N: int) -> np.ndarray:
    """One-hot map from (edge j, Lobatto node l) to local DOF index."""
    ndof = n_local_dofs(k, N)
    sel = np.zeros((N, k + 1, ndof))
    for j in range(N):
        sel[j, 0, j] = 1.0
        sel[j, k, (j + 1) % N] = 1.0
        for l in range(1, k):
            sel[j, l, N + j * (k - 1) + (l - 1)] = 1.0
    return sel.reshape(N * (k + 1), ndof)


def _solve_batched(M: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e14:
        raise SingularLocalSystem(f"{what} matrix is singular (condition {cond.max():.3e})")
    return np.linalg.solve(M, rhs)


def _build_batch(space: VemSpace, cells: np.ndarray) -> CellBatch:
    k, mesh = space.k, space.mesh
    st = mesh.subtriangulation
    N = int(mesh.n_cell_vertices[cells[0]])
    ndof = n_local_dofs(k, N)
    nb, nbg, nbm = nbasis(k), nbasis(k - 1), nbasis(k - 2)
    cyc = np.array([mesh.cells[c] for c in cells])
    X = mesh.vertices[cyc]
    xc = mesh.centroids[cells]
    h = mesh.diameters[cells]
    area = mesh.areas[cells]
    tris = st.triangles[st.offsets[cells][:, None] + np.arange(N)]
    Bn = len(cells)

    pts, w, _ = fan_quadrature(tris, quadrature_degree(k))
    qp = pts.reshape(Bn, -1, 2)
    qw = w.reshape(Bn, -1)
    Mq = eval_basis(qp, xc[:, None, :], h[:, None], k)
    H = np.einsum("bq,bqi,bqj->bij", qw, Mq, Mq, optimize=True)

    # DOFs of the monomials
    t, wl = gauss_lobatto_01(k)
    E = np.roll(X, -1, axis=1) - X
    length = np.linalg.norm(E, axis=-1)
    normal = np.stack([E[..., 1], -E[..., 0]], axis=-1) / length[..., None]
    lob = X[:, :, None, :] + t[None, None, :, None] * E[:, :, None, :]
    D = np.empty((Bn, ndof, nb))
    D[:, :N] = eval_basis(X, xc[:, None, :], h[:, None], k)
    if k > 1:
        inner = lob[:, :, 1:-1].reshape(Bn, -1, 2)
        D[:, N:N * k] = eval_basis(inner, xc[:, None, :], h[:, None], k)
    D[:, N * k:] = H[:, :nbm, :] / area[:, None, None]

    sel = _boundary_selector(k, N)
    vals, grads = eval_basis(lob.reshape(Bn, -1, 2), xc[:, None, :], h[:, None], k, grad=True)
    wq = (wl[None, None, :] * length[:, :, None]).reshape(Bn, -1)
    nq = np.repeat(normal, k + 1, axis=1)

    # elliptic projector
    dn = np.einsum("bpnc,bpc->bpn", grads, nq)
    Bm = np.einsum("bp,bpn,pd->bnd", wq, dn, sel, optimize=True)
    if k > 1:
        lap = laplacian_matrix(k)
        Bm[:, :, N * k:] -= (area / h**2)[:, None, None] * lap.T[None]
    Bm[:, 0, :] = 0.0
    if k == 1:
        Bm[:, 0, :N] = 1.0 / N
    else:
        Bm[:, 0, N * k] = 1.0
    G = Bm @ D
    pin_star = _solve_batched(G, Bm, "elliptic projector")

    # L2 projector from the enhancement
    C = H @ pin_star
    if nbm:
        C[:, :nbm, :] = 0.0
        C[:, np.arange(nbm), N * k + np.arange(nbm)] = area[:, None]
    pik_star = _solve_batched(H, C, "mass")

    # L2 projection of the gradient onto (P_{k-1})^2
    rhs = np.einsum("bp,bpn,bpc,pd->bcnd", wq, vals[..., :nbg], nq, sel, optimize=True)
    if nbm:
        dm = derivative_matrices(k - 1)  # (2, nbm, nbg)
        rhs[:, :, :, N * k:] -= (area / h)[:, None, None, None] * np.transpose(dm, (0, 2, 1))[None]
    Hg = H[:, :nbg, :nbg]
    pig_star = np.stack([_solve_batched(Hg, rhs[:, c], "gradient mass") for c in range(2)], axis=1)

    return CellBatch(
        k=k, n_vertices=N, cells=cells,
        dofs=np.array([space.dof_maps[c] for c in cells]),
        X=X, center=xc, h=h, area=area, triangles=tris,
        qp=qp, qw=qw, basis_q=Mq, D=D, B=Bm, G=G, H=H, C=C,
        pi_nabla_star=pin_star, pi_k_star=pik_star, pi_grad_star=pig_star,
    )


def local_projectors(space: VemSpace, cell: int) -> LocalProjectors:
    b, r = space.locate_cell(cell)
    return LocalProjectors(
        D=b.D[r], pi_nabla_star=b.pi_nabla_star[r], pi_nabla=b.pi_nabla[r],
        pi_k_star=b.pi_k_star[r], pi_k=b.D[r] @ b.pi_k_star[r],
        pi_grad_star=b.pi_grad_star[r], G=b.G[r], H=b.H[r],
    )


# --- local matrices ---------------------------------------------------------


def batch_poisson_stiffness(batch: CellBatch) -> np.ndarray:
    """Consistency part of the Laplace form, a(Pi_nabla v, Pi_nabla w)."""
    Gt = batch.G.copy()
    Gt[:, 0, :] = 0.0
    P = batch.pi_nabla_star
    return np.einsum("bni,bnm,bmj->bij", P, Gt, P, optimize=True)


def batch_mass(batch: CellBatch) -> np.ndarray:
    P = batch.pi_k_star
    return np.einsum("bni,bnm,bmj->bij", P, batch.H, P, optimize=True)


def batch_general(batch: CellBatch, coeffs: CoefficientSet) -> tuple:
    """Diffusion, convection and reaction blocks of the general form.

    Entry (i, j) pairs test function i with trial function j.
    """
    qp, w = batch.qp, batch.qw
    PG, PK = batch.pigrad_q, batch.pik_q
    A = coeffs.eval_A(qp)
    diff = np.einsum("bq,bqci,bqcd,bqdj->bij", w, PG, A, PG, optimize=True)
    conv = react = None
    bv = coeffs.eval_b(qp)
    if bv is not None:
        conv = np.einsum("bq,bqj,bqc,bqci->bij", w, PK, bv, PG, optimize=True)
    gv = coeffs.eval_gamma(qp)
    if gv is not None:
        react = np.einsum("bq,bq,bqi,bqj->bij", w, gv, PK, PK, optimize=True)
    return diff, conv, react


def local_matrices(space: VemSpace, cell: int, coefficients: Optional[CoefficientSet] = None) -> LocalMatrices:
    b, r = space.locate_cell(cell)
    one = _slice_batch(b, r)
    diff = conv = react = None
    if coefficients is not None:
        diff, conv, react = batch_general(one, coefficients)
        diff = diff[0]
        conv = None if conv is None else conv[0]
        react = None if react is None else react[0]
    return LocalMatrices(
        stiffness=batch_poisson_stiffness(one)[0],
        stabilization=b.stabilization[r],
        mass=batch_mass(one)[0],
        diffusion=diff, convection=conv, reaction=react,
    )


def _slice_batch(b: CellBatch, r: int) -> CellBatch:
    s = slice(r, r + 1)
    return CellBatch(
        k=b.k, n_vertices=b.n_vertices, cells=b.cells[s], dofs=b.dofs[s], X=b.X[s],
        center=b.center[s], h=b.h[s], area=b.area[s], triangles=b.triangles[s],
        qp=b.qp[s], qw=b.qw[s], basis_q=b.basis_q[s], D=b.D[s], B=b.B[s], G=b.G[s],
        H=b.H[s], C=b.C[s], pi_nabla_star=b.pi_nabla_star[s], pi_k_star=b.pi_k_star[s],
        pi_grad_star=b.pi_grad_star[s],
    )


# --- interpolation and projections of functions -------------------------------


def _eval(f: Callable, pts: np.ndarray) -> np.ndarray:
    return np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:-1])


def interpolate(space: VemSpace, v: Callable) -> np.ndarray:
    """DOF vector of the interpolant: point values plus cell moments."""
    mesh, k = space.mesh, space.k
    out = np.empty(space.n_dofs)
    out[:mesh.n_vertices] = _eval(v, mesh.vertices)
    if k > 1:
        t, _ = gauss_lobatto_01(k)
        a = mesh.vertices[mesh.edges[:, 0]]
        b = mesh.vertices[mesh.edges[:, 1]]
        pts = a[:, None, :] + t[None, 1:-1, None] * (b - a)[:, None, :]
        out[mesh.n_vertices:mesh.n_vertices + space.n_edge_dofs] = _eval(v, pts).ravel()
    nbm = nbasis(k - 2)
    if nbm:
        for batch in space.batches:
            fq = _eval(v, batch.qp)
            mom = np.einsum("bq,bq,bqn->bn", batch.qw, fq, batch.basis_q[..., :nbm], optimize=True) / batch.area[:, None]
            out[batch.dofs[:, batch.moment_slice()]] = mom
    return out


def project_function(batch: CellBatch, f: Callable) -> np.ndarray:
    """Local least-squares Pi_k f coefficients per cell, (B, nbasis(k))."""
    fq = _eval(f, batch.qp)
    rhs = np.einsum("bq,bq,bqn->bn", batch.qw, fq, batch.basis_q, optimize=True)
    return np.linalg.solve(batch.H, rhs[..., None])[..., 0]


def oscillation(f: Callable, space: VemSpace, levels: int = 2) -> float:
    """sqrt(sum_P h_P^2 ||f - Pi_k f||^2_{L2(P)}).

    Pi_k f and the norm use the highest-order rule on fan triangles split
    ``levels`` times, so smooth non-polynomial f is integrated accurately.
    """
    mesh = space.mesh
    st = mesh.subtriangulation
    pts, w, _ = fan_quadrature(split_triangles(st.triangles, levels), MAX_EXACTNESS)
    pts = pts.reshape(len(st.triangles), -1, 2)
    w = w.reshape(len(st.triangles), -1)
    cell = st.tri_cell
    basis = eval_basis(pts, mesh.centroids[cell][:, None, :], mesh.diameters[cell][:, None], space.k)
    fq = _eval(f, pts)
    nb = basis.shape[-1]
    H = np.zeros((mesh.n_cells, nb, nb))
    rhs = np.zeros((mesh.n_cells, nb))
    np.add.at(H, cell, np.einsum("tq,tqi,tqj->tij", w, basis, basis, optimize=True))
    np.add.at(rhs, cell, np.einsum("tq,tq,tqi->ti", w, fq, basis, optimize=True))
    coef = np.linalg.solve(H, rhs[..., None])[..., 0]
    r = fq - np.einsum("tqn,tn->tq", basis, coef[cell])
    err2 = np.bincount(cell, weights=np.einsum("tq,tq->t", w, r * r), minlength=mesh.n_cells)
    return float(np.sqrt(np.sum(mesh.diameters**2 * err2)))
