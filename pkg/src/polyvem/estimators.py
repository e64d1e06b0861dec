"""Estimator wrappers with the fit / predict / get_params conventions of scikit-learn.

``ForwardSolver`` solves the elliptic problem for a named source or for point
loads given as samples; ``SourceReconstructor`` recovers a Poisson source
from point values of the state.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import presets
from ._validation import check_alpha, check_fitted, check_nonnegative, check_points, check_targets
from .forward import Combination, PointLoad, solve_forward
from .inverse import ALPHA_MIN, InverseSystem, PointValue, select_alpha
from .mesh import PointLocator
from .vem_space import VemSpace


def _mesh(kind: str, size: int, seed: int):
    return presets.mesh_family(kind, [size], seed=seed)[0]


class ForwardSolver(BaseEstimator):
    """Discrete solution u_h of -div(A grad u + b u) + gamma u = f with u = 0 on the boundary.

    ``fit(X, y)`` uses point loads at the rows of ``X`` with weights ``y``
    (unit weights when ``y`` is None); ``fit()`` without samples uses the
    named ``source``.  ``predict`` returns Pi_k u_h at points.
    """

    def __init__(self, mesh_kind="uniform_square", mesh_size=16, seed=0, k=1, coeffs="poisson", source="sinsin", q="pik"):
        self.mesh_kind = mesh_kind
        self.mesh_size = mesh_size
        self.seed = seed
        self.k = k
        self.coeffs = coeffs
        self.source = source
        self.q = q

    def fit(self, X=None, y=None):
        coeffs = presets.coefficient_set(self.coeffs)
        mesh = _mesh(self.mesh_kind, self.mesh_size, self.seed)
        if X is None:
            src, _ = presets.parse_source(self.source, coeffs)
            q = self.q
        else:
            X = check_points(X)
            w = np.ones(len(X)) if y is None else check_targets(y, len(X))
            src = Combination(tuple((float(wi), PointLoad(tuple(p))) for wi, p in zip(w, X)))
            q = "j"
        self.solution_ = solve_forward(mesh, src, coeffs, self.k, q)
        self.mesh_ = mesh
        self.n_dofs_ = self.solution_.space.n_free
        return self

    def predict(self, X):
        check_fitted(self, "solution_")
        X = check_points(X)
        cells, _, _ = PointLocator(self.mesh_).locate_many(X)
        return self.solution_.evaluate_projection(X, cells)


class SourceReconstructor(BaseEstimator):
    """Tikhonov reconstruction of a Poisson source from point values of u.

    ``fit(X, y)`` takes measurement points (n, 2) and the measured values;
    ``predict`` evaluates the conforming companion of f_h.  With
    ``alpha="auto"`` the parameter follows the closed-form rule, which needs
    ``source_norm`` (an estimate of the L2 norm of f) and ``noise_level``
    (relative noise); zero noise gives the floor value.
    """

    def __init__(self, mesh_kind="uniform_square", mesh_size=16, seed=0, alpha="auto", noise_level=0.0, source_norm=1.0):
        self.mesh_kind = mesh_kind
        self.mesh_size = mesh_size
        self.seed = seed
        self.alpha = alpha
        self.noise_level = noise_level
        self.source_norm = source_norm

    def fit(self, X, y):
        X = check_points(X)
        y = check_targets(y, len(X))
        alpha = check_alpha(self.alpha)
        noise = check_nonnegative(self.noise_level, "noise_level")
        mesh = _mesh(self.mesh_kind, self.mesh_size, self.seed)
        system = InverseSystem(VemSpace(mesh, 1), [PointValue(tuple(p)) for p in X])
        if alpha == "auto":
            if noise == 0:
                alpha = ALPHA_MIN
            else:
                norm = check_nonnegative(self.source_norm, "source_norm")
                alpha = select_alpha(system.lambda_max, norm, noise * float(np.linalg.norm(y)))
        self.reconstruction_ = system.reconstruct(y, alpha)
        self.system_ = system
        self.alpha_ = float(alpha)
        self.residual_ = self.reconstruction_.residual
        return self

    def predict(self, X):
        check_fitted(self, "reconstruction_")
        X = check_points(X)
        return self.system_.companion.evaluate(self.reconstruction_.dofs, X)

    def predict_measurements(self, X=None):
        """Model values h_i(K_h f_h) at the fitted points."""
        check_fitted(self, "reconstruction_")
        return self.system_.G @ self.reconstruction_.dofs[self.system_.space.free]
