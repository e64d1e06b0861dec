from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from ..exceptions import Degenerate, NonManifoldEdge, NotStarShaped, OpenCell

DEFAULT_MIN_ANGLE = 1.0  # degrees


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum()
    return np.array([((x + xn) * cross).sum(), ((y + yn) * cross).sum()]) / (6.0 * a)


def _batch_area(P: np.ndarray) -> np.ndarray:
    x, y = P[..., 0], P[..., 1]
    return 0.5 * np.sum(x * np.roll(y, -1, axis=-1) - np.roll(x, -1, axis=-1) * y, axis=-1)


def _batch_centroid(P: np.ndarray) -> np.ndarray:
    x, y = P[..., 0], P[..., 1]
    xn, yn = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    cross = x * yn - xn * y
    a = 0.5 * cross.sum(-1)
    return np.stack([((x + xn) * cross).sum(-1), ((y + yn) * cross).sum(-1)], -1) / (6.0 * a[..., None])


def _fan_batch(P: np.ndarray, z0: np.ndarray):
    """Fan triangles (B, N, 3, 2), their signed areas and minimum angles."""
    tris = np.stack([np.broadcast_to(z0[:, None, :], P.shape), P, np.roll(P, -1, axis=1)], axis=2)
    e1 = tris[..., 1, :] - tris[..., 0, :]
    e2 = tris[..., 2, :] - tris[..., 0, :]
    area = 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])
    return tris, area, _triangle_angles(tris).min(axis=-1)


def _triangle_angles(tris: np.ndarray) -> np.ndarray:
    """Interior angles (degrees) of triangles of shape (..., 3, 2)."""
    out = []
    for i in range(3):
        p = tris[..., i, :]
        u = tris[..., (i + 1) % 3, :] - p
        v = tris[..., (i + 2) % 3, :] - p
        cos = np.einsum("...c,...c->...", u, v) / (
            np.linalg.norm(u, axis=-1) * np.linalg.norm(v, axis=-1)
        )
        out.append(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))
    return np.stack(out, axis=-1)


def fan(poly: np.ndarray, z0, min_angle: float = DEFAULT_MIN_ANGLE) -> np.ndarray:
    """Fan triangles (z0, z_j, z_{j+1}) of a polygon, shape (N_P, 3, 2).

    Raises NotStarShaped if a triangle is not positively oriented or has an
    angle below ``min_angle`` degrees.
    """
    poly = np.asarray(poly, dtype=float)
    z0 = np.asarray(z0, dtype=float)
    tris = np.stack([np.broadcast_to(z0, poly.shape), poly, np.roll(poly, -1, axis=0)], axis=1)
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    area = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    scale = np.max(np.ptp(poly, axis=0)) ** 2
    if np.any(area <= 1e-14 * scale):
        raise NotStarShaped(f"fan from {z0.tolist()} has non-positive triangles")
    if _triangle_angles(tris).min() < min_angle:
        raise NotStarShaped(f"fan from {z0.tolist()} violates the {min_angle} degree angle floor")
    return tris


def kernel_center(poly: np.ndarray) -> tuple[np.ndarray, float]:
    """Chebyshev center of the polygon kernel (intersection of edge half-planes).

    Returns the center and the radius of the largest ball inside the kernel;
    the radius is <= 0 when the polygon is not star-shaped.
    """
    poly = np.asarray(poly, dtype=float)
    d = np.roll(poly, -1, axis=0) - poly
    length = np.linalg.norm(d, axis=1)
    # inward normal of a CCW edge is (-dy, dx)
    n = np.column_stack([-d[:, 1], d[:, 0]]) / length[:, None]
    # n.(x - z) >= r  <=>  -n.x + r <= -n.z
    A = np.column_stack([-n, np.ones(len(n))])
    b = -np.einsum("ij,ij->i", n, poly)
    res = linprog(c=[0.0, 0.0, -1.0], A_ub=A, b_ub=b, bounds=[(None, None)] * 3, method="highs")
    if not res.success:
        return polygon_centroid(poly), -np.inf
    return res.x[:2], float(res.x[2])


def star_center(poly: np.ndarray, min_angle: float = DEFAULT_MIN_ANGLE) -> np.ndarray:
    """Centroid if its fan is admissible, otherwise the kernel Chebyshev center."""
    c = polygon_centroid(poly)
    try:
        fan(poly, c, min_angle)
        return c
    except NotStarShaped:
        pass
    k, r = kernel_center(poly)
    if r <= 0:
        raise NotStarShaped("polygon kernel is empty")
    fan(poly, k, min_angle)
    return k


@dataclass(frozen=True)
class SubTriangulation:
    """Fan sub-triangulation of every cell.

    ``triangles[t]`` is (z0, z_j, z_{j+1}) of cell ``tri_cell[t]`` with
    ``j = tri_local[t]``; the triangles of cell c are the contiguous slice
    ``offsets[c]:offsets[c+1]``.
    """

    z0: np.ndarray
    triangles: np.ndarray
    tri_cell: np.ndarray
    tri_local: np.ndarray
    offsets: np.ndarray
    area: np.ndarray
    min_angle: np.ndarray

    @property
    def n_triangles(self) -> int:
        return len(self.tri_cell)


@dataclass(frozen=True)
class MeshQualityReport:
    rho_estimate: np.ndarray
    min_edge_ratio: np.ndarray
    star_shaped_ok: np.ndarray
    n_boundary_edges: int
    n_interior_edges: int

    @property
    def clean(self) -> bool:
        return bool(np.all(self.star_shaped_ok))

    def summary(self) -> dict:
        return {
            "cells": int(len(self.rho_estimate)),
            "rho_min": float(self.rho_estimate.min()),
            "min_edge_ratio": float(self.min_edge_ratio.min()),
            "star_shaped": bool(self.clean),
            "boundary_edges": self.n_boundary_edges,
            "interior_edges": self.n_interior_edges,
        }


class PolygonalMesh:
    """Immutable polygonal mesh with CCW cells given as vertex-index cycles."""

    def __init__(self, vertices, cells, *, min_angle: float = DEFAULT_MIN_ANGLE):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        v.setflags(write=False)
        self.vertices = v
        cs = []
        for c in cells:
            c = np.array(c, dtype=np.int64).ravel()
            if len(c) > 1 and c[0] == c[-1]:
                c = c[:-1]
            c.setflags(write=False)
            cs.append(c)
        self.cells = tuple(cs)
        self.min_angle = float(min_angle)
        for c in self.cells:
            if len(c) < 3 or len(np.unique(c)) != len(c):
                raise OpenCell(f"cell {c.tolist()} is not a closed simple vertex cycle")
            if c.min() < 0 or c.max() >= len(v):
                raise ValueError(f"cell {c.tolist()} references unknown vertices")

    # --- basic geometry ---------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def cell_coords(self, c: int) -> np.ndarray:
        return self.vertices[self.cells[c]]

    @cached_property
    def n_cell_vertices(self) -> np.ndarray:
        return np.array([len(c) for c in self.cells])

    @cached_property
    def groups(self) -> tuple:
        """(N_P, cell ids, vertex coordinates (B, N_P, 2)) per vertex count."""
        counts = self.n_cell_vertices
        out = []
        for n in np.unique(counts):
            ids = np.flatnonzero(counts == n)
            cyc = np.array([self.cells[c] for c in ids])
            out.append((int(n), ids, self.vertices[cyc]))
        return tuple(out)

    def _per_cell(self, fn, shape=()) -> np.ndarray:
        out = np.empty((self.n_cells,) + shape)
        for _, ids, P in self.groups:
            out[ids] = fn(P)
        return out

    @cached_property
    def areas(self) -> np.ndarray:
        return self._per_cell(_batch_area)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self._per_cell(_batch_centroid, (2,))

    @cached_property
    def diameters(self) -> np.ndarray:
        return self._per_cell(lambda P: np.sqrt(((P[:, :, None] - P[:, None]) ** 2).sum(-1).max(axis=(1, 2))))

    @property
    def per_cell_diameter(self) -> np.ndarray:
        return self.diameters

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def domain_area(self) -> float:
        return float(self.areas.sum())

    # --- topology ---------------------------------------------------------

    @cached_property
    def _halfedges(self):
        cell = np.repeat(np.arange(self.n_cells), self.n_cell_vertices)
        local = np.concatenate([np.arange(len(c)) for c in self.cells])
        a = np.concatenate(self.cells)
        b = np.concatenate([np.roll(c, -1) for c in self.cells])
        return cell, local, a, b

    @cached_property
    def _edge_table(self):
        cell, local, a, b = self._halfedges
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        key = lo * self.n_vertices + hi
        uniq, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        edges = np.column_stack([uniq // self.n_vertices, uniq % self.n_vertices])
        return edges, inv, counts

    @property
    def edges(self) -> np.ndarray:
        """Global edges as sorted vertex pairs (n_edges, 2)."""
        return self._edge_table[0]

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_cells(self) -> np.ndarray:
        """Adjacent cells per edge (n_edges, 2); -1 marks a missing neighbour."""
        edges, inv, counts = self._edge_table
        if counts.max(initial=0) > 2:
            bad = edges[np.argmax(counts)]
            raise NonManifoldEdge(f"edge {bad.tolist()} has {counts.max()} adjacent cells")
        cell = self._halfedges[0]
        out = -np.ones((len(edges), 2), dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        slot = np.zeros(len(inv), dtype=int)
        sorted_inv = inv[order]
        first = np.r_[True, sorted_inv[1:] != sorted_inv[:-1]]
        slot[order] = np.where(first, 0, 1)
        out[inv, slot] = cell
        return out

    @cached_property
    def cell_edges(self) -> tuple:
        """Per cell, the global edge id of local edge j = (z_j, z_{j+1})."""
        inv = self._edge_table[1]
        offs = np.r_[0, np.cumsum(self.n_cell_vertices)]
        return tuple(inv[offs[c]:offs[c + 1]] for c in range(self.n_cells))

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self._edge_table[2] == 1

    @cached_property
    def boundary_vertex_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.edges[self.boundary_edges].ravel()] = True
        return flags

    # --- validation & sub-triangulation -----------------------------------

    def validate(self) -> MeshQualityReport:
        return validate(self)

    @cached_property
    def subtriangulation(self) -> SubTriangulation:
        return sub_triangulate(self, self.min_angle)

    def __repr__(self) -> str:
        return f"PolygonalMesh(n_vertices={self.n_vertices}, n_cells={self.n_cells})"

    # --- io ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "vertices": [[float(x), float(y)] for x, y in self.vertices],
            "cells": [[int(i) for i in c] for c in self.cells],
        }

    @classmethod
    def from_dict(cls, data: dict, **kw) -> "PolygonalMesh":
        unknown = set(data) - {"vertices", "cells"}
        if unknown:
            raise ValueError(f"unknown mesh keys: {sorted(unknown)}")
        verts = np.asarray(data["vertices"], dtype=float)
        cells = []
        for c in data["cells"]:
            c = list(c)
            if len(c) >= 3 and signed_area(verts[c]) < 0:
                c = c[::-1]
            cells.append(c)
        return cls(verts, cells, **kw)


def write_json(mesh: PolygonalMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict(), separators=(",", ":")) + "\n")


def read_json(path) -> PolygonalMesh:
    return PolygonalMesh.from_dict(json.loads(Path(path).read_text()))


def _segments_cross(p1, p2, q1, q2) -> np.ndarray:
    """Proper crossing of segment pairs; arrays of shape (..., 2)."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (c[..., 0] - a[..., 0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    return (d1 * d2 < 0) & (d3 * d4 < 0)


def _simple_batch(P: np.ndarray) -> np.ndarray:
    """True for cells whose non-adjacent edges do not cross."""
    n = P.shape[1]
    pairs = [(i, j) for i in range(n) for j in range(i + 2, n) if not (i == 0 and j == n - 1)]
    if not pairs:
        return np.ones(len(P), dtype=bool)
    i, j = np.array(pairs).T
    Q = np.roll(P, -1, axis=1)
    return ~np.any(_segments_cross(P[:, i], Q[:, i], P[:, j], Q[:, j]), axis=1)


def _distance_to_boundary(P: np.ndarray, z: np.ndarray) -> np.ndarray:
    d = np.roll(P, -1, axis=1) - P
    t = np.einsum("bnc,bnc->bn", z[:, None, :] - P, d) / np.einsum("bnc,bnc->bn", d, d)
    closest = P + np.clip(t, 0.0, 1.0)[..., None] * d
    return np.linalg.norm(closest - z[:, None, :], axis=-1).min(axis=1)


def _star_centers(mesh: PolygonalMesh, min_angle: float):
    """Star center per cell and an admissibility flag (fan valid at the floor)."""
    z0 = mesh.centroids.copy()
    ok = np.ones(mesh.n_cells, dtype=bool)
    for _, ids, P in mesh.groups:
        scale = np.max(np.ptp(P, axis=1), axis=-1) ** 2
        _, area, ang = _fan_batch(P, z0[ids])
        bad = np.any(area <= 1e-14 * scale[:, None], axis=1) | (ang.min(axis=1) < min_angle)
        for c in ids[bad]:
            try:
                z0[c] = star_center(mesh.cell_coords(c), min_angle)
            except NotStarShaped:
                ok[c] = False
    return z0, ok


def validate(mesh: PolygonalMesh) -> MeshQualityReport:
    """Check (M1) topology and report (M2) quality estimates.

    Raises NonManifoldEdge, OpenCell or Degenerate on topological defects;
    poor shape quality is only reported.
    """
    for _, ids, P in mesh.groups:
        scale = np.max(np.ptp(P, axis=1), axis=-1) ** 2
        bad = mesh.areas[ids] <= 1e-14 * np.maximum(scale, 1e-300)
        if np.any(bad):
            c = ids[np.argmax(bad)]
            raise Degenerate(f"cell {c} has non-positive area {mesh.areas[c]:.3e}")
        simple = _simple_batch(P)
        if not np.all(simple):
            raise Degenerate(f"cell {ids[np.argmin(simple)]} is self-intersecting")
    ec = mesh.edge_cells
    edges = mesh.edges
    length = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    if np.any(length <= 0):
        raise Degenerate("zero-length edge")
    # interior edges must be traversed once in each direction
    _, _, a, b = mesh._halfedges
    inv = mesh._edge_table[1]
    interior = ec[:, 1] >= 0
    fwd = np.zeros(mesh.n_edges, dtype=int)
    np.add.at(fwd, inv, (a < b).astype(int))
    if np.any(fwd[interior] != 1):
        e = np.flatnonzero(interior & (fwd != 1))[0]
        raise NonManifoldEdge(f"interior edge {edges[e].tolist()} is not shared with opposite orientation")
    bdeg = np.bincount(edges[mesh.boundary_edges].ravel(), minlength=mesh.n_vertices)
    if np.any(bdeg % 2):
        raise OpenCell("domain boundary is not closed")

    z0, ok = _star_centers(mesh, mesh.min_angle)
    rho = np.empty(mesh.n_cells)
    edge_ratio = np.empty(mesh.n_cells)
    for _, ids, P in mesh.groups:
        hP = mesh.diameters[ids]
        rho[ids] = _distance_to_boundary(P, z0[ids]) / hP
        e = np.linalg.norm(np.roll(P, -1, axis=1) - P, axis=-1)
        edge_ratio[ids] = e.min(axis=1) / hP
    return MeshQualityReport(
        rho_estimate=rho,
        min_edge_ratio=edge_ratio,
        star_shaped_ok=ok,
        n_boundary_edges=int(mesh.boundary_edges.sum()),
        n_interior_edges=int((~mesh.boundary_edges).sum()),
    )


def sub_triangulate(mesh: PolygonalMesh, min_angle: float = DEFAULT_MIN_ANGLE) -> SubTriangulation:
    """Fan sub-triangulation of every cell from its star center."""
    z0, ok = _star_centers(mesh, min_angle)
    if not np.all(ok):
        raise NotStarShaped(f"cell {int(np.argmin(ok))}: no admissible star center")
    counts = mesh.n_cell_vertices
    offsets = np.r_[0, np.cumsum(counts)]
    total = int(offsets[-1])
    triangles = np.empty((total, 3, 2))
    area = np.empty(total)
    angle = np.empty(total)
    for n, ids, P in mesh.groups:
        tris, a, ang = _fan_batch(P, z0[ids])
        slots = offsets[ids][:, None] + np.arange(n)
        triangles[slots] = tris
        area[slots] = a
        angle[slots] = ang
    return SubTriangulation(
        z0=z0,
        triangles=triangles,
        tri_cell=np.repeat(np.arange(mesh.n_cells), counts),
        tri_local=np.concatenate([np.arange(n) for n in counts]),
        offsets=offsets,
        area=area,
        min_angle=angle,
    )
