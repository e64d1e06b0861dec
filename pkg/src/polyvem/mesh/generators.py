"""Mesh generators on the unit square and red refinement."""
from __future__ import annotations

import numpy as np
from scipy.spatial import Voronoi

from ..exceptions import BadParams
from .core import PolygonalMesh

EXAMPLE_POINT = (0.431260, 0.438584)

MESH_KINDS = (
    "uniform_square",
    "distorted_square",
    "red_refined_quad",
    "voronoi_lloyd",
    "nonconvex_pattern",
)


def _check_n(n) -> int:
    if isinstance(n, bool) or int(n) != n or int(n) < 1:
        raise BadParams(f"resolution must be a positive integer, got {n!r}")
    return int(n)


def uniform_square(n: int) -> PolygonalMesh:
    n = _check_n(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            cells.append([a, a + 1, a + n + 2, a + n + 1])
    return PolygonalMesh(verts, cells)


def distorted_square(n: int = 5, seed: int = 0, amplitude: float = 0.25, pin=EXAMPLE_POINT) -> PolygonalMesh:
    """Uniform n x n grid with randomly perturbed interior vertices.

    The perturbation is uniform in a box of half-width ``amplitude / n``.
    For n = 5 the grid vertex (2, 2) is moved to ``pin`` so that the point
    load location of the distorted-mesh benchmark is a mesh vertex.
    """
    n = _check_n(n)
    if not 0.0 <= amplitude < 0.5:
        raise BadParams("amplitude must lie in [0, 0.5)")
    base = uniform_square(n)
    v = base.vertices.copy()
    rng = np.random.default_rng(seed)
    interior = ~base.boundary_vertex_flags
    v[interior] += rng.uniform(-amplitude / n, amplitude / n, size=(int(interior.sum()), 2))
    if pin is not None and n == 5:
        v[2 * (n + 1) + 2] = pin
    return PolygonalMesh(v, base.cells)


def red_refine(mesh: PolygonalMesh) -> PolygonalMesh:
    """Join edge midpoints to the cell centroid; each cell becomes N_P quads."""
    nv, ne = mesh.n_vertices, mesh.n_edges
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids, mesh.centroids])
    cells = []
    for c, cyc in enumerate(mesh.cells):
        ce = mesh.cell_edges[c] + nv
        centre = nv + ne + c
        m = len(cyc)
        for j in range(m):
            cells.append([cyc[j], ce[j], centre, ce[j - 1]])
    return PolygonalMesh(verts, cells, min_angle=mesh.min_angle)


def red_refined_quad(n: int = 1, levels: int = 1, base: str = "uniform_square", seed: int = 0) -> PolygonalMesh:
    if int(levels) != levels or levels < 0:
        raise BadParams("levels must be a non-negative integer")
    if base == "uniform_square":
        mesh = uniform_square(n)
    elif base == "distorted_square":
        mesh = distorted_square(n, seed=seed)
    else:
        raise BadParams(f"unknown base mesh {base!r}")
    for _ in range(int(levels)):
        mesh = red_refine(mesh)
    return mesh


def nonconvex_pattern(n: int) -> PolygonalMesh:
    """n x n grid of interlocking chevrons.

    Each grid square becomes the hexagon (0,0), (s,0), (s+d,s/2), (s,s),
    (0,s), (d,s/2) with d = s/4, so its right side bulges into the dent of
    its right neighbour.  The outer columns keep straight sides.
    """
    n = _check_n(n)
    s = 1.0 / n
    d = s / 4.0
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    grid = np.column_stack([X.ravel(), Y.ravel()])
    # kink vertex between columns i-1 and i (i = 1..n-1) in row j
    kinks = [(i * s + d, (j + 0.5) * s) for j in range(n) for i in range(1, n)]
    verts = np.vstack([grid, np.array(kinks).reshape(-1, 2)])

    def g(i, j):
        return j * (n + 1) + i

    def kink(i, j):
        return (n + 1) ** 2 + j * (n - 1) + (i - 1)

    cells = []
    for j in range(n):
        for i in range(n):
            cyc = [g(i, j), g(i + 1, j)]
            if i < n - 1:
                cyc.append(kink(i + 1, j))
            cyc += [g(i + 1, j + 1), g(i, j + 1)]
            if i > 0:
                cyc.append(kink(i, j))
            cells.append(cyc)
    return PolygonalMesh(verts, cells)


# --- Voronoi ----------------------------------------------------------------


def _mirrored_voronoi(points: np.ndarray, margin: float | None = None):
    """Voronoi regions of ``points`` clipped to the unit square by reflection.

    Only generators within ``margin`` of a side are reflected; if the clipped
    regions do not tile the square exactly, all generators are reflected.
    """
    x, y = points[:, 0], points[:, 1]
    sel = [np.ones(len(points), bool)] * 4
    if margin is not None:
        sel = [x < margin, x > 1.0 - margin, y < margin, y > 1.0 - margin]
    mirrored = np.vstack([
        points,
        np.column_stack([-x, y])[sel[0]],
        np.column_stack([2.0 - x, y])[sel[1]],
        np.column_stack([x, -y])[sel[2]],
        np.column_stack([x, 2.0 - y])[sel[3]],
    ])
    vor = Voronoi(mirrored)
    regions = [vor.regions[vor.point_region[i]] for i in range(len(points))]
    if margin is not None:
        bounded = all(len(r) >= 3 and -1 not in r for r in regions)
        if not bounded or abs(_region_areas(vor.vertices, regions).sum() - 1.0) > 1e-9:
            return _mirrored_voronoi(points, None)
    return vor.vertices, regions


def _region_terms(vertices: np.ndarray, regions: list):
    lengths = np.array([len(r) for r in regions])
    idx = np.fromiter((i for r in regions for i in r), dtype=np.int64, count=int(lengths.sum()))
    nxt = np.fromiter((i for r in regions for i in r[1:] + r[:1]), dtype=np.int64, count=int(lengths.sum()))
    owner = np.repeat(np.arange(len(regions)), lengths)
    p, q = vertices[idx], vertices[nxt]
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    return owner, p, q, cross


def _region_areas(vertices: np.ndarray, regions: list) -> np.ndarray:
    owner, _, _, cross = _region_terms(vertices, regions)
    return np.abs(np.bincount(owner, cross, minlength=len(regions)) / 2.0)


def _region_centroids(vertices: np.ndarray, regions: list) -> np.ndarray:
    owner, p, q, cross = _region_terms(vertices, regions)
    area = np.bincount(owner, cross) / 2.0
    cx = np.bincount(owner, (p[:, 0] + q[:, 0]) * cross) / (6.0 * area)
    cy = np.bincount(owner, (p[:, 1] + q[:, 1]) * cross) / (6.0 * area)
    return np.column_stack([cx, cy])


def _snap(v: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    v = v.copy()
    for target in (0.0, 1.0):
        v[np.abs(v - target) < tol] = target
    return v


def _collapse_short_edges(verts: np.ndarray, cells: list, ratio: float) -> tuple[np.ndarray, list]:
    """Merge endpoints of edges shorter than ``ratio`` times the mean cell size."""
    verts = verts.copy()
    cells = [list(c) for c in cells]
    on_bnd = lambda p: (p[0] in (0.0, 1.0)) + (p[1] in (0.0, 1.0))  # noqa: E731
    target = ratio / np.sqrt(len(cells))
    while True:
        best = None
        for c in cells:
            for a, b in zip(c, c[1:] + c[:1]):
                length = np.hypot(*(verts[a] - verts[b]))
                if length < target and (best is None or length < best[0]):
                    best = (length, min(a, b), max(a, b))
        if best is None:
            break
        _, a, b = best
        ba, bb = on_bnd(verts[a]), on_bnd(verts[b])
        if ba and bb and ba == bb and ba == 2:
            break  # two corners; cannot happen on the unit square
        if bb > ba:
            verts[a] = verts[b]
        elif ba == bb:
            verts[a] = 0.5 * (verts[a] + verts[b])
        new = []
        for c in cells:
            c = [a if i == b else i for i in c]
            c = [i for k, i in enumerate(c) if i != c[k - 1]] if len(c) > 1 else c
            new.append(c)
        cells = new
    used = np.unique(np.concatenate([np.array(c) for c in cells]))
    remap = -np.ones(len(verts), dtype=int)
    remap[used] = np.arange(len(used))
    return verts[used], [remap[c].tolist() for c in cells]


def voronoi_lloyd(n: int, seed: int = 0, iterations: int = 100, collapse_ratio: float = 0.05) -> PolygonalMesh:
    """Centroidal Voronoi mesh of the unit square from seeded Lloyd relaxation.

    Generators are mirrored across the four sides so that the clipped
    diagram is exact.  Edges much shorter than the typical cell size are
    collapsed so that the fan sub-triangulation meets the angle floor.
    """
    n = _check_n(n)
    if int(iterations) != iterations or iterations < 0:
        raise BadParams("iterations must be a non-negative integer")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0.0, 1.0, size=(n, 2))
    if n == 1:
        return uniform_square(1)
    margin = min(1.0, 4.0 / np.sqrt(n))
    for _ in range(int(iterations)):
        v, regions = _mirrored_voronoi(pts, margin)
        pts = _region_centroids(v, regions)
    v, regions = _mirrored_voronoi(pts)
    v = _snap(v)
    cells = []
    for r in regions:
        poly = v[r]
        x, y = poly[:, 0], poly[:, 1]
        area = np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y)
        cells.append(list(r) if area > 0 else list(r)[::-1])
    v, cells = _collapse_short_edges(v, cells, collapse_ratio)
    return PolygonalMesh(v, cells)


_GENERATORS = {
    "uniform_square": uniform_square,
    "distorted_square": distorted_square,
    "red_refined_quad": red_refined_quad,
    "voronoi_lloyd": voronoi_lloyd,
    "nonconvex_pattern": nonconvex_pattern,
}


def generate(kind: str, **params) -> PolygonalMesh:
    """Build a mesh of the unit square by name; unknown kinds or params raise BadParams."""
    try:
        fn = _GENERATORS[kind]
    except KeyError:
        raise BadParams(f"unknown mesh kind {kind!r}; expected one of {MESH_KINDS}") from None
    try:
        return fn(**params)
    except TypeError as err:
        raise BadParams(str(err)) from None
