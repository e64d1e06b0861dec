"""Named problem set-ups for the forward and inverse convergence studies.

Each preset fixes the mesh family, coefficients, source or measurements and
the solver options, so that a study is reproducible from its name alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .coefficients import ACADEMIC, POISSON, CoefficientSet
from .exceptions import BadParams
from .forward import Density, ExactSolution, PointLoad
from .inverse import PointValue, SubdomainAverage
from .mesh import EXAMPLE_POINT, PolygonalMesh, generate, red_refined_quad

PI = np.pi

# Points of the point-measurement example, in the order they are added.
MEASUREMENT_POINTS = (
    (0.5, 0.5),
    (0.75, 0.25),
    (0.25, 0.75),
    (0.25, 0.25),
    (0.75, 0.75),
    (0.125, 0.375),
    (0.375, 0.375),
)

# Value of alpha that reproduces the single-point reconstruction on the
# coarsest 2x2 mesh of the published probe table (see the notes on presets).
POINT_EXAMPLE_ALPHA = 3.86e-6


def sinsin(x, y):
    return np.sin(PI * x) * np.sin(PI * y)


def sinsin_grad(x, y):
    return PI * np.stack(np.broadcast_arrays(np.cos(PI * x) * np.sin(PI * y), np.sin(PI * x) * np.cos(PI * y)), -1)


def poisson_source(x, y):
    """-Laplace of sin(pi x) sin(pi y)."""
    return 2 * PI**2 * sinsin(x, y)


def poisson_source_grad(x, y):
    return 2 * PI**2 * sinsin_grad(x, y)


def academic_source(x, y):
    """-div(A grad u + b u) + gamma u for u = sin(pi x) sin(pi y) and the ACADEMIC coefficients."""
    u = sinsin(x, y)
    uxy = PI**2 * np.cos(PI * x) * np.cos(PI * y)
    return PI**2 * (x**2 + y**2 + 2) * u + 2 * x * y * uxy - 2 * u + (x**2 + y**3) * u


SINSIN = ExactSolution(sinsin, sinsin_grad)
POISSON_F = ExactSolution(poisson_source, poisson_source_grad)
ZERO = ExactSolution(lambda x, y: np.zeros(np.broadcast(x, y).shape), lambda x, y: np.zeros(np.broadcast(x, y).shape + (2,)))

COEFFICIENTS = {"poisson": POISSON, "academic": ACADEMIC}


def coefficient_set(name: str) -> CoefficientSet:
    try:
        return COEFFICIENTS[name]
    except KeyError:
        raise BadParams(f"unknown coefficients {name!r}; expected one of {sorted(COEFFICIENTS)}") from None


def parse_source(spec: str, coeffs: CoefficientSet):
    """Source functional and exact solution (None when unknown) for a source string.

    Accepted: ``sinsin`` (data of u = sin(pi x) sin(pi y)), ``zero`` and
    ``delta(x,y)``.
    """
    s = spec.replace(" ", "").lower()
    if s == "sinsin":
        if coeffs is not ACADEMIC and not coeffs.is_poisson:
            raise BadParams("sinsin data is only tabulated for the poisson and academic coefficients")
        f = academic_source if coeffs is ACADEMIC else poisson_source
        return Density(f, "sinsin"), SINSIN
    if s == "zero":
        return Density(lambda x, y: np.zeros(np.broadcast(x, y).shape), "zero"), ZERO
    if s.startswith("delta(") and s.endswith(")"):
        try:
            x, y = (float(t) for t in s[6:-1].split(","))
        except ValueError:
            raise BadParams(f"cannot parse point load {spec!r}") from None
        return PointLoad((x, y)), None
    raise BadParams(f"unknown source {spec!r}; expected sinsin, zero or delta(x,y)")


def mesh_family(kind: str, levels, seed: int = 0, params: Optional[dict] = None) -> list[PolygonalMesh]:
    """Meshes of one family, one per entry of ``levels``.

    For ``red_refined_quad`` and ``distorted_square`` an entry counts red
    refinements of the base mesh; for the other kinds it is the size
    parameter ``n`` of the generator.
    """
    params = dict(params or {})
    levels = [int(v) for v in levels]
    if not levels:
        raise BadParams("at least one mesh level is required")
    if kind in ("red_refined_quad", "distorted_square"):
        base = "distorted_square" if kind == "distorted_square" else params.pop("base", "uniform_square")
        n = params.pop("n", 5)
        if params:
            raise BadParams(f"unexpected mesh parameters {sorted(params)}")
        return [red_refined_quad(n=n, levels=l, base=base, seed=seed) for l in levels]
    if kind == "voronoi_lloyd":
        params.setdefault("seed", seed)
    return [generate(kind, n=n, **params) for n in levels]


@dataclass(frozen=True)
class ForwardPreset:
    name: str
    mesh_kind: str
    levels: tuple
    coeffs: str
    source: str
    q: str = "pik"
    k: int = 1
    seed: int = 0
    reference: str = "final"


@dataclass(frozen=True)
class InversePreset:
    name: str
    mesh_kind: str
    levels: tuple
    measurements: tuple
    noise: float
    alpha: object
    seed: int = 0
    probe: Optional[tuple] = None
    n_values: Optional[tuple] = None
    mesh_params: dict = field(default_factory=dict)


FORWARD_PRESETS = {
    "academic": ForwardPreset("academic", "nonconvex_pattern", (4, 8, 16, 32, 64), "academic", "sinsin"),
    "voronoi-point-load": ForwardPreset(
        "voronoi-point-load", "voronoi_lloyd", (5, 25, 100, 400, 1600, 6400), "poisson", "delta(0.1,0.1)", q="j", seed=42
    ),
    "distorted-point-load": ForwardPreset(
        "distorted-point-load",
        "distorted_square",
        (0, 1, 2, 3, 4, 5),
        "academic",
        f"delta({EXAMPLE_POINT[0]},{EXAMPLE_POINT[1]})",
        q="j",
    ),
}

INVERSE_PRESETS = {
    "two-pockets": InversePreset(
        "two-pockets",
        "red_refined_quad",
        (0, 1, 2, 3, 4, 5),
        ({"type": "average", "box": [0.2, 0.4, 0.2, 0.4]}, {"type": "average", "box": [0.6, 0.8, 0.6, 0.8]}),
        noise=0.02,
        alpha="auto",
        mesh_params={"n": 5},
    ),
    "centre-square": InversePreset(
        "centre-square",
        "red_refined_quad",
        (0, 1, 2, 3, 4),
        ({"type": "average", "box": [0.25, 0.75, 0.25, 0.75]},),
        noise=0.02,
        alpha="auto",
        mesh_params={"n": 8},
    ),
    "point-values": InversePreset(
        "point-values",
        "uniform_square",
        (2, 4, 8, 16, 32, 64),
        tuple({"type": "point", "xy": list(p)} for p in MEASUREMENT_POINTS),
        noise=0.0,
        alpha=POINT_EXAMPLE_ALPHA,
        probe=(0.5, 0.5),
        n_values=(1, 3, 5, 7),
    ),
}

# Short numeric aliases of the studies.
ALIASES = {
    "5.1.1": "academic",
    "5.1": "voronoi-point-load",
    "5.2": "distorted-point-load",
    "5.4": "two-pockets",
    "5.5": "centre-square",
    "5.6": "point-values",
}


def lookup(name: str):
    name = ALIASES.get(name, name)
    if name in FORWARD_PRESETS:
        return FORWARD_PRESETS[name]
    if name in INVERSE_PRESETS:
        return INVERSE_PRESETS[name]
    raise BadParams(f"unknown preset {name!r}")


def parse_measurements(items) -> list:
    """Measurement functionals from their JSON form.

    ``{"type": "average", "cells": [...]}`` refers to cells of the coarsest
    mesh; ``{"type": "average", "box": [x0, x1, y0, y1]}`` to an aligned box;
    ``{"type": "point", "xy": [x, y]}`` to a point value.
    """
    if not isinstance(items, list) or not items:
        raise BadParams("measurement list must be a non-empty JSON array")
    out = []
    for it in items:
        if not isinstance(it, dict) or "type" not in it:
            raise BadParams(f"malformed measurement {it!r}")
        extra = set(it) - {"type", "cells", "box", "xy"}
        if extra:
            raise BadParams(f"unknown measurement keys {sorted(extra)}")
        t = it["type"]
        if t == "point":
            xy = it.get("xy")
            if not isinstance(xy, (list, tuple)) or len(xy) != 2:
                raise BadParams("point measurement needs xy: [x, y]")
            out.append(PointValue((float(xy[0]), float(xy[1]))))
        elif t == "average":
            if "box" in it:
                box = it["box"]
                if not isinstance(box, (list, tuple)) or len(box) != 4:
                    raise BadParams("average box must be [x0, x1, y0, y1]")
                out.append(SubdomainAverage(box=tuple(float(v) for v in box)))
            elif "cells" in it:
                out.append(SubdomainAverage(cells=tuple(int(c) for c in it["cells"])))
            else:
                raise BadParams("average measurement needs cells or box")
        else:
            raise BadParams(f"unknown measurement type {t!r}")
    return out


def transfer_measurements(H: list, coarse: PolygonalMesh, fine: PolygonalMesh) -> list:
    """Re-express cell-set averages of ``coarse`` on a nested ``fine`` mesh."""
    from .forward import nested_owners

    if not any(isinstance(h, SubdomainAverage) and h.cells is not None for h in H):
        return list(H)
    owner = nested_owners(fine, coarse)
    out = []
    for h in H:
        if isinstance(h, SubdomainAverage) and h.cells is not None:
            out.append(SubdomainAverage(cells=tuple(int(c) for c in np.flatnonzero(np.isin(owner, h.cells)))))
        else:
            out.append(h)
    return out
