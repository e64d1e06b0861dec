import numpy as np
import pytest
from sklearn.base import clone

from polyvem.estimators import ForwardSolver, SourceReconstructor
from polyvem.exceptions import BadParams, OutsideDomain
from polyvem.forward import PointLoad, assemble_poisson, assemble_rhs, solve
from polyvem.mesh import uniform_square
from polyvem.presets import MEASUREMENT_POINTS, sinsin
from polyvem.vem_space import VemSpace


def test_params_roundtrip():
    est = ForwardSolver(mesh_size=8, k=2)
    assert est.get_params()["k"] == 2
    c = clone(est.set_params(coeffs="academic"))
    assert c.get_params()["coeffs"] == "academic" and not hasattr(c, "solution_")


def test_forward_named_source_is_accurate():
    est = ForwardSolver(mesh_size=16).fit()
    X = np.array([[0.5, 0.5], [0.25, 0.3]])
    np.testing.assert_allclose(est.predict(X), sinsin(X[:, 0], X[:, 1]), atol=5e-3)


def test_forward_point_loads_match_library():
    X = np.array([[0.5, 0.5], [0.25, 0.75]])
    y = np.array([1.0, -2.0])
    est = ForwardSolver(mesh_size=8).fit(X, y)
    s = VemSpace(uniform_square(8), 1)
    F = assemble_rhs(s, PointLoad((0.5, 0.5)), "j") - 2 * assemble_rhs(s, PointLoad((0.25, 0.75)), "j")
    ref = solve(assemble_poisson(s), F, s, "j")
    np.testing.assert_allclose(est.solution_.dofs, ref.dofs, atol=1e-14)


def test_reconstructor_fits_noise_free_point_data():
    X = np.array(MEASUREMENT_POINTS)
    y = sinsin(X[:, 0], X[:, 1])
    est = SourceReconstructor(mesh_size=8).fit(X, y)
    assert est.alpha_ == pytest.approx(1e-12)
    assert est.residual_ <= 1e-6 * np.linalg.norm(y)
    assert est.predict_measurements() == pytest.approx(y, abs=1e-6)
    f = est.predict(np.array([[0.5, 0.5]]))
    assert np.isfinite(f).all() and f[0] > 0


def test_reconstructor_auto_alpha_with_noise():
    X = np.array(MEASUREMENT_POINTS)
    y = sinsin(X[:, 0], X[:, 1])
    est = SourceReconstructor(mesh_size=8, noise_level=0.02, source_norm=np.pi**2).fit(X, y)
    assert 1e-12 < est.alpha_ < 1.0


def test_input_validation():
    with pytest.raises(BadParams):
        ForwardSolver().predict([[0.5, 0.5]])
    est = ForwardSolver(mesh_size=4).fit()
    with pytest.raises(BadParams):
        est.predict([[0.5, 0.5, 0.5]])
    with pytest.raises(OutsideDomain):
        est.predict([[1.5, 0.5]])
    with pytest.raises(BadParams):
        SourceReconstructor(alpha="lots").fit([[0.5, 0.5]], [1.0])
    with pytest.raises(BadParams):
        SourceReconstructor(alpha=-1).fit([[0.5, 0.5]], [1.0])
    with pytest.raises(BadParams):
        SourceReconstructor().fit([[0.5, 0.5]], [1.0, 2.0])
    with pytest.raises(BadParams):
        SourceReconstructor(noise_level=-0.1).fit([[0.5, 0.5]], [1.0])
