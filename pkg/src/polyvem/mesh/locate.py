from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..exceptions import OutsideDomain
from .core import PolygonalMesh, SubTriangulation

LOCATE_TOL = 1e-12


def barycentric(tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``pts`` (..., 2) in ``tris`` (..., 3, 2)."""
    a, b, c = tris[..., 0, :], tris[..., 1, :], tris[..., 2, :]
    v0, v1, v2 = b - a, c - a, pts - a
    det = v0[..., 0] * v1[..., 1] - v0[..., 1] * v1[..., 0]
    l1 = (v2[..., 0] * v1[..., 1] - v2[..., 1] * v1[..., 0]) / det
    l2 = (v0[..., 0] * v2[..., 1] - v0[..., 1] * v2[..., 0]) / det
    return np.stack([1.0 - l1 - l2, l1, l2], axis=-1)


@dataclass(frozen=True)
class Location:
    cell: int
    triangle: int
    bary: np.ndarray


class PointLocator:
    """Locate points in the fan sub-triangles of a mesh.

    Ties on shared edges or vertices go to the lowest cell index, then the
    lowest triangle index.
    """

    def __init__(self, mesh_or_subtri: PolygonalMesh | SubTriangulation, tol: float = LOCATE_TOL):
        st = mesh_or_subtri.subtriangulation if isinstance(mesh_or_subtri, PolygonalMesh) else mesh_or_subtri
        self.subtri = st
        self.tol = tol
        cent = st.triangles.mean(axis=1)
        self._tree = cKDTree(cent)
        self._radius = float(np.linalg.norm(st.triangles - cent[:, None, :], axis=-1).max()) * (1 + 1e-9) + 1e-14

    def locate_many(self, points, strict: bool = True):
        """Return (cells, triangles, bary) arrays; cells = -1 when not found and not strict."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(pts)
        cells = -np.ones(n, dtype=np.int64)
        tris = -np.ones(n, dtype=np.int64)
        bary = np.full((n, 3), np.nan)
        cand = self._tree.query_ball_point(pts, self._radius)
        owner = np.repeat(np.arange(n), [len(c) for c in cand])
        if len(owner):
            t = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
            lam = barycentric(self.subtri.triangles[t], pts[owner])
            ok = lam.min(axis=1) >= -self.tol
            owner, t, lam = owner[ok], t[ok], lam[ok]
            # sort by (point, cell, triangle); first hit per point wins
            key = np.lexsort((t, self.subtri.tri_cell[t], owner))
            owner, t, lam = owner[key], t[key], lam[key]
            first = np.r_[True, owner[1:] != owner[:-1]] if len(owner) else np.zeros(0, bool)
            owner, t, lam = owner[first], t[first], lam[first]
            cells[owner] = self.subtri.tri_cell[t]
            tris[owner] = t
            bary[owner] = lam
        if strict and np.any(cells < 0):
            bad = pts[np.flatnonzero(cells < 0)[0]]
            raise OutsideDomain(f"point {bad.tolist()} is outside the mesh")
        return cells, tris, bary

    def locate(self, point) -> Location:
        cells, tris, bary = self.locate_many(np.asarray(point, dtype=float).reshape(1, 2))
        return Location(int(cells[0]), int(tris[0]), bary[0])


def locate(mesh: PolygonalMesh, point, tol: float = LOCATE_TOL) -> Location:
    """Cell, global fan-triangle index and barycentric coordinates of ``point``."""
    return PointLocator(mesh, tol).locate(point)
