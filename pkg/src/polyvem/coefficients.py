"""Coefficient fields of the operator -div(A grad u + b u) + gamma u."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoefficientSet:
    """Vectorised callables of (x, y).

    ``A`` returns shape (..., 2, 2), ``b`` shape (..., 2) and ``gamma`` the
    shape of ``x``.  ``None`` stands for the identity (A) or zero (b, gamma).
    """

    A: Optional[Field] = None
    b: Optional[Field] = None
    gamma: Optional[Field] = None
    name: str = "custom"

    @property
    def is_poisson(self) -> bool:
        return self.A is None and self.b is None and self.gamma is None

    def eval_A(self, pts: np.ndarray) -> np.ndarray:
        if self.A is None:
            return np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2))
        return np.asarray(self.A(pts[..., 0], pts[..., 1]), dtype=float)

    def eval_b(self, pts: np.ndarray) -> Optional[np.ndarray]:
        return None if self.b is None else np.asarray(self.b(pts[..., 0], pts[..., 1]), dtype=float)

    def eval_gamma(self, pts: np.ndarray) -> Optional[np.ndarray]:
        if self.gamma is None:
            return None
        return np.broadcast_to(np.asarray(self.gamma(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:-1])


POISSON = CoefficientSet(name="poisson")


def _academic_A(x, y):
    one = np.ones_like(x)
    return np.stack([np.stack([y**2 + one, -x * y], -1), np.stack([-x * y, x**2 + one], -1)], -2)


ACADEMIC = CoefficientSet(
    A=_academic_A,
    b=lambda x, y: np.stack([x, y], -1),
    gamma=lambda x, y: x**2 + y**3,
    name="academic",
)
