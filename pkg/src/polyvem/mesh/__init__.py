"""Polygonal meshes: topology, admissibility checks, generators and point location."""
from .core import (
    DEFAULT_MIN_ANGLE,
    MeshQualityReport,
    PolygonalMesh,
    SubTriangulation,
    fan,
    kernel_center,
    polygon_centroid,
    read_json,
    signed_area,
    star_center,
    sub_triangulate,
    validate,
    write_json,
)
from .generators import (
    EXAMPLE_POINT,
    MESH_KINDS,
    distorted_square,
    generate,
    nonconvex_pattern,
    red_refine,
    red_refined_quad,
    uniform_square,
    voronoi_lloyd,
)
from .locate import LOCATE_TOL, Location, PointLocator, barycentric, locate

refine = red_refine

__all__ = [
    "DEFAULT_MIN_ANGLE",
    "EXAMPLE_POINT",
    "LOCATE_TOL",
    "MESH_KINDS",
    "Location",
    "MeshQualityReport",
    "PointLocator",
    "PolygonalMesh",
    "SubTriangulation",
    "barycentric",
    "distorted_square",
    "fan",
    "generate",
    "kernel_center",
    "locate",
    "nonconvex_pattern",
    "polygon_centroid",
    "read_json",
    "red_refine",
    "red_refined_quad",
    "refine",
    "signed_area",
    "star_center",
    "sub_triangulate",
    "uniform_square",
    "validate",
    "voronoi_lloyd",
    "write_json",
]
