"""Computable companion operator J: V_h -> H^1_0.

J v = J1 v + b_P v_P on every cell P.  J1 v is the degree-k Lagrange
interpolant on the fan sub-triangulation whose boundary nodes carry the
known boundary values of v and whose interior nodes carry Pi_nabla v.  The
bubble b_P = (20/9) sum_T 27 lambda_1 lambda_2 lambda_3 and the polynomial
v_P of degree k restore the moments of v against P_k.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .exceptions import SingularWeightedMass
from .mesh import PointLocator
from .poly import eval_basis, fan_quadrature, nbasis
from .vem_space import CellBatch, VemSpace, parallel_map

BUBBLE_SCALE = 27.0 * 20.0 / 9.0


def companion_degree(k: int) -> int:
    """Exactness of the sub-triangle rule; covers bubble x P_k x P_k."""
    return 2 * k + 3


def lagrange_basis(bary: np.ndarray, k: int, grad: bool = False):
    """Degree-k Lagrange basis on a triangle in barycentric coordinates.

    k=2 node order: z0, z_j, z_{j+1}, mid(z_j, z_{j+1}), mid(z0, z_{j+1}),
    mid(z0, z_j).  With ``grad`` also returns d psi / d lambda, shape (..., nl, 3).
    """
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    if k == 1:
        vals = np.stack([l0, l1, l2], axis=-1)
        if grad:
            return vals, np.broadcast_to(np.eye(3), bary.shape[:-1] + (3, 3))
        return vals
    vals = np.stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l0 * l2, 4 * l0 * l1],
        axis=-1,
    )
    if not grad:
        return vals
    z = np.zeros_like(l0)
    d = np.stack([
        np.stack([4 * l0 - 1, z, z], -1),
        np.stack([z, 4 * l1 - 1, z], -1),
        np.stack([z, z, 4 * l2 - 1], -1),
        np.stack([z, 4 * l2, 4 * l1], -1),
        np.stack([4 * l2, z, 4 * l0], -1),
        np.stack([4 * l1, 4 * l0, z], -1),
    ], axis=-2)
    return vals, d


def bubble(bary: np.ndarray) -> np.ndarray:
    """Cell bubble b_P restricted to one fan triangle."""
    return BUBBLE_SCALE * bary[..., 0] * bary[..., 1] * bary[..., 2]


def bubble_grad_bary(bary: np.ndarray) -> np.ndarray:
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return BUBBLE_SCALE * np.stack([l1 * l2, l0 * l2, l0 * l1], axis=-1)


def bary_gradients(tris: np.ndarray) -> np.ndarray:
    """Gradients of the barycentric coordinates, (..., 3, 2)."""
    e1 = tris[..., 1, :] - tris[..., 0, :]
    e2 = tris[..., 2, :] - tris[..., 0, :]
    det = e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]
    g1 = np.stack([e2[..., 1], -e2[..., 0]], -1) / det[..., None]
    g2 = np.stack([-e1[..., 1], e1[..., 0]], -1) / det[..., None]
    return np.stack([-g1 - g2, g1, g2], axis=-2)


@dataclass
class CompanionBatch:
    """Companion matrices of one cell batch.

    ``L1[b, j]`` maps local DOFs to the Lagrange nodal values of J1 on fan
    triangle j; ``Vp[b]`` maps local DOFs to the coefficients of v_P.
    """

    batch: CellBatch
    L1: np.ndarray
    Vp: np.ndarray
    W: np.ndarray
    J1_moments: np.ndarray
    tq_points: np.ndarray
    tq_weights: np.ndarray
    tq_bary: np.ndarray

    @cached_property
    def values_q(self) -> np.ndarray:
        """J phi_i at the sub-triangle quadrature points, (B, N, nq, ndof)."""
        k = self.batch.k
        psi = lagrange_basis(self.tq_bary, k)
        m = eval_basis(self.tq_points, self.batch.center[:, None, None, :], self.batch.h[:, None, None], k)
        part1 = np.einsum("qa,btad->btqd", psi, self.L1)
        part2 = bubble(self.tq_bary)[None, None, :, None] * np.einsum("btqn,bnd->btqd", m, self.Vp)
        return part1 + part2

    @cached_property
    def grads_q(self) -> np.ndarray:
        """grad J phi_i at the sub-triangle quadrature points, (B, N, nq, 2, ndof)."""
        b = self.batch
        psi, dpsi = lagrange_basis(self.tq_bary, b.k, grad=True)
        gl = bary_gradients(b.triangles)  # (B, N, 3, 2)
        gpsi = np.einsum("qal,btlc->btqac", dpsi, gl)
        part1 = np.einsum("btqac,btad->btqcd", gpsi, self.L1)
        m, gm = eval_basis(self.tq_points, b.center[:, None, None, :], b.h[:, None, None], b.k, grad=True)
        bq = bubble(self.tq_bary)
        gb = np.einsum("ql,btlc->btqc", bubble_grad_bary(self.tq_bary), gl)
        mv = np.einsum("btqn,bnd->btqd", m, self.Vp)
        gmv = np.einsum("btqnc,bnd->btqcd", gm, self.Vp)
        return part1 + gb[..., None] * mv[:, :, :, None, :] + bq[None, None, :, None, None] * gmv


def _build_companion_batch(batch: CellBatch) -> CompanionBatch:
    k, N = batch.k, batch.n_vertices
    ndof = batch.ndof
    Bn = batch.size
    nb = nbasis(k)
    z0 = batch.triangles[:, 0, 0, :]
    xc, h = batch.center, batch.h

    def pin_at(points):
        m = eval_basis(points, xc[:, None, :] if points.ndim == 3 else xc, h[:, None] if points.ndim == 3 else h, k)
        if points.ndim == 3:
            return np.einsum("bpn,bnd->bpd", m, batch.pi_nabla_star)
        return np.einsum("bn,bnd->bd", m, batch.pi_nabla_star)

    nl = 3 if k == 1 else 6
    L1 = np.zeros((Bn, N, nl, ndof))
    j = np.arange(N)
    L1[:, :, 0, :] = pin_at(z0)[:, None, :]
    L1[:, j, 1, j] = 1.0
    L1[:, j, 2, (j + 1) % N] = 1.0
    if k == 2:
        L1[:, j, 3, N + j] = 1.0
        X = batch.X
        L1[:, :, 4, :] = pin_at(0.5 * (z0[:, None, :] + np.roll(X, -1, axis=1)))
        L1[:, :, 5, :] = pin_at(0.5 * (z0[:, None, :] + X))

    pts, w, bary = fan_quadrature(batch.triangles, companion_degree(k))
    m = eval_basis(pts, xc[:, None, None, :], h[:, None, None], k)
    bq = bubble(bary)
    W = np.einsum("btq,q,btqi,btqj->bij", w, bq, m, m, optimize=True)
    psi = lagrange_basis(bary, k)
    J1m = np.einsum("btq,btqn,qa,btad->bnd", w, m, psi, L1, optimize=True)
    cond = np.linalg.cond(W)
    if not np.all(np.isfinite(cond)) or cond.max() > 1e14:
        raise SingularWeightedMass(f"bubble-weighted mass is singular (condition {cond.max():.3e})")
    Vp = np.linalg.solve(W, batch.C - J1m)
    return CompanionBatch(batch=batch, L1=L1, Vp=Vp, W=W, J1_moments=J1m, tq_points=pts, tq_weights=w, tq_bary=bary)


@dataclass(frozen=True)
class CompanionFunction:
    """J v_h for one global DOF vector, evaluable pointwise."""

    operator: "CompanionOperator"
    dofs: np.ndarray

    def __call__(self, points) -> np.ndarray:
        return self.operator.evaluate(self.dofs, points)

    def gradient(self, points) -> np.ndarray:
        return self.operator.evaluate(self.dofs, points, grad=True)[1]

    def lagrange_coefficients(self, cell: int) -> np.ndarray:
        cb, r = self.operator.locate_cell(cell)
        return cb.L1[r] @ self.dofs[cb.batch.dofs[r]]

    def bubble_coefficients(self, cell: int) -> np.ndarray:
        cb, r = self.operator.locate_cell(cell)
        return cb.Vp[r] @ self.dofs[cb.batch.dofs[r]]


class CompanionOperator:
    """Companion J of a virtual element space, built batch by batch."""

    def __init__(self, space: VemSpace):
        self.space = space

    @cached_property
    def batches(self) -> list:
        return parallel_map(_build_companion_batch, self.space.batches)

    @cached_property
    def locator(self) -> PointLocator:
        return PointLocator(self.space.mesh)

    def locate_cell(self, cell: int) -> tuple[CompanionBatch, int]:
        b, r = self.space._cell_slot
        return self.batches[b[cell]], int(r[cell])

    def __call__(self, dofs: np.ndarray) -> CompanionFunction:
        return CompanionFunction(self, np.asarray(dofs, dtype=float))

    def point_rows(self, points, grad: bool = False):
        """Local rows of J at points.

        Returns (cells, dof_maps, rows) where ``rows[p] @ v[dof_maps[p]]`` is
        J v at point p; with ``grad`` the rows have shape (2, ndof).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cells, tris, bary = self.locator.locate_many(pts)
        st = self.space.mesh.subtriangulation
        local = st.tri_local[tris]
        out_dofs, out_rows = [], []
        k = self.space.k
        for p in range(len(pts)):
            cb, r = self.locate_cell(int(cells[p]))
            b = cb.batch
            lam = bary[p]
            j = int(local[p])
            m = eval_basis(pts[p], b.center[r], b.h[r], k, grad=grad)
            if not grad:
                row = lagrange_basis(lam, k) @ cb.L1[r, j] + bubble(lam) * (m @ cb.Vp[r])
            else:
                mv, gm = m
                _, dpsi = lagrange_basis(lam, k, grad=True)
                gl = bary_gradients(b.triangles[r, j])
                gpsi = dpsi @ gl  # (nl, 2)
                gb = bubble_grad_bary(lam) @ gl
                row = gpsi.T @ cb.L1[r, j] + np.outer(gb, mv @ cb.Vp[r]) + bubble(lam) * (gm.T @ cb.Vp[r])
            out_dofs.append(b.dofs[r])
            out_rows.append(row)
        return cells, out_dofs, out_rows

    def evaluate(self, dofs: np.ndarray, points, grad: bool = False):
        cells, maps, rows = self.point_rows(points)
        vals = np.array([row @ dofs[d] for d, row in zip(maps, rows)])
        if not grad:
            return vals
        _, maps, grows = self.point_rows(points, grad=True)
        return vals, np.array([row @ dofs[d] for d, row in zip(maps, grows)])

    def density_vectors(self, f) -> list:
        """Per-batch local vectors int_P f J phi_i, each (B, ndof)."""
        out = []
        for cb in self.batches:
            p = cb.tq_points
            fq = np.broadcast_to(np.asarray(f(p[..., 0], p[..., 1]), dtype=float), p.shape[:-1])
            out.append(np.einsum("btq,btq,btqd->bd", cb.tq_weights, fq, cb.values_q, optimize=True))
        return out

    def functional_vector(self, f) -> np.ndarray:
        """Global vector of f(J phi_i) over all DOFs for an L2 density f."""
        return self.space.assemble_vector(self.density_vectors(f), reduce=False)

    def point_vector(self, point) -> np.ndarray:
        """Global vector of (J phi_i)(point)."""
        _, maps, rows = self.point_rows(np.asarray(point, dtype=float).reshape(1, 2))
        out = np.zeros(self.space.n_dofs)
        np.add.at(out, maps[0], rows[0])
        return out


def build_companion(space: VemSpace) -> CompanionOperator:
    return CompanionOperator(space)


# --- diagnostics of the companion properties -----------------------------------


def moment_defect(op: CompanionOperator, v: np.ndarray) -> float:
    """max |(v - Jv, m_beta)_P| over cells and |beta| <= k."""
    worst = 0.0
    for cb in op.batches:
        b = cb.batch
        vl = v[b.dofs]
        m = eval_basis(cb.tq_points, b.center[:, None, None, :], b.h[:, None, None], b.k)
        Jq = np.einsum("btqd,bd->btq", cb.values_q, vl)
        jm = np.einsum("btq,btq,btqn->bn", cb.tq_weights, Jq, m, optimize=True)
        vm = np.einsum("bnd,bd->bn", b.C, vl)
        worst = max(worst, float(np.abs(vm - jm).max()))
    return worst


def gradient_defect(op: CompanionOperator, v: np.ndarray) -> float:
    """max |(grad Jv - grad v, q)_P| over q in (P_{k-1})^2, virtual side by parts."""
    worst = 0.0
    for cb in op.batches:
        b = cb.batch
        nbg = nbasis(b.k - 1)
        vl = v[b.dofs]
        m = eval_basis(cb.tq_points, b.center[:, None, None, :], b.h[:, None, None], b.k)[..., :nbg]
        gJ = np.einsum("btqcd,bd->btqc", cb.grads_q, vl)
        lhs = np.einsum("btq,btqc,btqn->bcn", cb.tq_weights, gJ, m, optimize=True)
        Hg = b.H[:, :nbg, :nbg]
        rhs = np.einsum("bnm,bcmd,bd->bcn", Hg, b.pi_grad_star, vl, optimize=True)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return worst


def trace_defect(op: CompanionOperator, v: np.ndarray, samples: int = 5) -> float:
    """max |Jv - v| at points along every cell boundary (v is the edge interpolant)."""
    from .poly import gauss_lobatto_01

    worst = 0.0
    k = op.space.k
    t = np.linspace(0.0, 1.0, samples + 2)[1:-1]
    tl, _ = gauss_lobatto_01(k)
    for cb in op.batches:
        b = cb.batch
        N = b.n_vertices
        vl = v[b.dofs]
        # edge trace of v: degree-k polynomial through the Lobatto node values
        node_vals = np.empty((b.size, N, k + 1))
        node_vals[:, :, 0] = vl[:, :N]
        node_vals[:, :, k] = np.roll(vl[:, :N], -1, axis=1)
        if k > 1:
            node_vals[:, :, 1:k] = vl[:, N:N * k].reshape(b.size, N, k - 1)
        V = np.vander(tl, k + 1)
        coef = np.linalg.solve(V, node_vals[..., None])[..., 0]
        trace = coef @ np.vander(t, k + 1).T
        # J on edge j lies in fan triangle j with lambda0 = 0
        bary = np.stack([np.zeros_like(t), 1.0 - t, t], axis=-1)
        psi = lagrange_basis(bary, k)
        Jv = np.einsum("sa,btad,bd->bts", psi, cb.L1, vl, optimize=True)  # bubble vanishes on the edge
        worst = max(worst, float(np.abs(Jv - trace).max()))
    return worst


def boundedness_ratio(op: CompanionOperator, v: np.ndarray) -> float:
    """|Pi_nabla v - Jv|_{1,pw} / s_h((1-Pi_nabla)v, (1-Pi_nabla)v)^(1/2)."""
    num = 0.0
    den = 0.0
    for cb in op.batches:
        b = cb.batch
        vl = v[b.dofs]
        gJ = np.einsum("btqcd,bd->btqc", cb.grads_q, vl)
        _, gm = eval_basis(cb.tq_points, b.center[:, None, None, :], b.h[:, None, None], b.k, grad=True)
        coef = np.einsum("bnd,bd->bn", b.pi_nabla_star, vl)
        gP = np.einsum("btqnc,bn->btqc", gm, coef)
        num += float(np.einsum("btq,btqc->", cb.tq_weights, (gJ - gP) ** 2))
        den += float(np.einsum("bi,bij,bj->", vl, b.stabilization, vl, optimize=True))
    return float(np.sqrt(num / den)) if den > 0 else 0.0
