import numpy as np
import pytest

from meshgp.estimator import MeshGPRegressor
from meshgp.mesh import build_spectrum, icosphere
from meshgp.physics import FHNParams
from oracles import dense_training_sigma


@pytest.fixture(scope="module")
def fitted():
    spectrum = build_spectrum(icosphere(1, radius=1.0))
    rng = np.random.default_rng(99)
    verts = np.sort(rng.choice(spectrum.n_vertices, size=8, replace=False))
    times = np.sort(rng.uniform(0.0, 20.0, size=6))
    y = rng.standard_normal((2, 8, 6)) * 0.5
    est = MeshGPRegressor(spectrum=spectrum, restarts=2, max_iters=25,
                          seed=4, spatial_scale=2.0)
    est.fit((verts, times), y)
    return est, verts, times, y


class TestSklearnSurface:
    def test_get_params_round_trip(self):
        est = MeshGPRegressor(weight=2.0, n_collocation=33, seed=7)
        params = est.get_params()
        clone = MeshGPRegressor().set_params(**params)
        assert clone.get_params() == params

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            MeshGPRegressor().set_params(banana=1)

    def test_set_params_returns_self(self):
        est = MeshGPRegressor()
        assert est.set_params(weight=1.0) is est
        assert est.weight == 1.0

    def test_unfitted_predict_raises(self):
        with pytest.raises(ValueError, match="not fitted"):
            MeshGPRegressor().predict((np.array([0]), np.array([0.0])))

    def test_fit_requires_spectrum(self):
        with pytest.raises(ValueError, match="LaplacianSpectrum"):
            MeshGPRegressor().fit((np.array([0, 1]), np.array([0.0])),
                                  np.zeros((2, 2, 1)))

    def test_input_validation(self, fitted):
        est, verts, times, y = fitted
        with pytest.raises(ValueError, match="pair"):
            est.predict(np.array([0, 1]))
        bad = MeshGPRegressor(spectrum=est.spectrum)
        with pytest.raises(ValueError, match="does not match"):
            bad.fit((verts, times), y[:, :3, :])


class TestFitPredict:
    def test_fit_sets_state(self, fitted):
        est, *_ = fitted
        assert hasattr(est, "theta_")
        assert hasattr(est, "report_")
        assert est.report_.model_kind == "M-GP"

    def test_predict_shapes(self, fitted):
        est, verts, times, _ = fitted
        mean = est.predict((verts[:3], times[:2]))
        assert mean.shape == (2, 3, 2)
        mean2, std = est.predict((verts[:3], times[:2]), return_std=True)
        np.testing.assert_array_equal(mean, mean2)
        assert std.shape == (2, 3, 2)
        assert np.all(std >= 0.0)

    def test_predict_full(self, fitted):
        est, verts, times, _ = fitted
        pred = est.predict_full((verts, times))
        assert pred.mean.values.shape == pred.variance.values.shape

    def test_matches_functional_layer(self, fitted):
        est, verts, times, y = fitted
        from meshgp.gp import posterior_mean
        expected = posterior_mean(est.theta_, est.training_, est.spectrum,
                                  verts, times)
        np.testing.assert_array_equal(est.predict((verts, times)), expected.values)

    def test_loo_score(self, fitted):
        est, *_ = fitted
        assert est.loo_score() == pytest.approx(est.report_.tau2_cv, rel=1e-12)

    def test_physics_estimator_runs(self):
        spectrum = build_spectrum(icosphere(0, radius=1.0))
        rng = np.random.default_rng(1)
        verts = np.arange(6)
        times = np.linspace(0.0, 10.0, 5)
        y = 0.1 * rng.standard_normal((2, 6, 5))
        est = MeshGPRegressor(spectrum=spectrum, fhn=FHNParams(e1=0.1),
                              weight=0.5, n_collocation=15, restarts=1,
                              max_iters=10, seed=0, spatial_scale=2.0)
        est.fit((verts, times), y)
        assert est.report_.model_kind == "P-M-GP"
