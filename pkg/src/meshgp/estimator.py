"""Sklearn-style regressor facade over the functional layers.

MeshGPRegressor(spectrum=..., weight=...).fit(X, y) trains the
hyperparameters; predict(X) returns posterior means (optionally with
standard deviations).  X is a (vertex_ids, times) grid pair and y the
matching (2, N_s, N_t) array, since observations live on a mesh rather
than in a feature matrix.
"""

from __future__ import annotations

import numpy as np

from .gp import (
    Prediction,
    TrainingSet,
    loo_residuals,
    posterior_mean,
    posterior_variance,
)
from .kroncov import FieldTensor
from .mesh import LaplacianSpectrum
from .physics import FHNParams
from .train import TrainConfig, optimize


def _check_grid_input(X):
    if not isinstance(X, (tuple, list)) or len(X) != 2:
        raise ValueError("X must be a (vertex_ids, times) pair")
    vertex_ids = np.asarray(X[0], dtype=np.int64)
    times = np.asarray(X[1], dtype=float)
    if vertex_ids.ndim != 1 or times.ndim != 1:
        raise ValueError("vertex_ids and times must be 1-d arrays")
    return vertex_ids, times


class MeshGPRegressor:
    """Two-task Gaussian process regressor on a mesh spectrum.

    Parameters mirror TrainConfig; ``weight`` > 0 turns on the
    reaction-diffusion residual penalty (which needs ``fhn``).  Fitted
    state lives in trailing-underscore attributes (theta_, report_).
    """

    _PARAM_NAMES = ("spectrum", "fhn", "weight", "n_collocation", "restarts",
                    "max_iters", "tol", "seed", "spatial_scale", "bounds")

    def __init__(self, *, spectrum: LaplacianSpectrum | None = None,
                 fhn: FHNParams | None = None, weight: float = 0.0,
                 n_collocation: int = 200, restarts: int = 3,
                 max_iters: int = 80, tol: float = 1e-6, seed: int = 0,
                 spatial_scale: float = 1.0, bounds: dict | None = None):
        self.spectrum = spectrum
        self.fhn = fhn
        self.weight = weight
        self.n_collocation = n_collocation
        self.restarts = restarts
        self.max_iters = max_iters
        self.tol = tol
        self.seed = seed
        self.spatial_scale = spatial_scale
        self.bounds = bounds

    # -- sklearn plumbing ---------------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "MeshGPRegressor":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(
                    f"unknown parameter {name!r}; valid: {self._PARAM_NAMES}"
                )
            setattr(self, name, value)
        return self

    # -- estimation -----------------------------------------------------------

    def fit(self, X, y, mesh_ref: str = "") -> "MeshGPRegressor":
        """Train on observations y over the (vertex_ids, times) grid X."""
        if self.spectrum is None:
            raise ValueError("a LaplacianSpectrum is required before fitting")
        vertex_ids, times = _check_grid_input(X)
        values = np.asarray(y, dtype=float)
        if values.shape != (2, len(vertex_ids), len(times)):
            raise ValueError(
                f"y shape {values.shape} does not match "
                f"(2, {len(vertex_ids)}, {len(times)})"
            )
        data = TrainingSet(
            mesh_ref=mesh_ref, X_tr=vertex_ids, T_tr=times,
            Y=FieldTensor(values=values, space_ids=vertex_ids, times=times),
        )
        cfg = TrainConfig(
            restarts=self.restarts, max_iters=self.max_iters, tol=self.tol,
            w=self.weight, n_col=self.n_collocation, seed=self.seed,
            spatial_scale=self.spatial_scale, bounds=self.bounds,
        )
        self.report_ = optimize(data, self.spectrum, self.fhn, cfg)
        self.theta_ = self.report_.best_theta
        self.training_ = data
        return self

    def _require_fitted(self):
        if not hasattr(self, "theta_"):
            raise ValueError("this MeshGPRegressor is not fitted yet; call fit first")

    def predict(self, X, return_std: bool = False):
        """Posterior mean (2, n_vertices, n_times) on the query grid."""
        self._require_fitted()
        vertex_ids, times = _check_grid_input(X)
        mean = posterior_mean(self.theta_, self.training_, self.spectrum,
                              vertex_ids, times)
        if not return_std:
            return mean.values
        var = posterior_variance(self.theta_, self.training_, self.spectrum,
                                 vertex_ids, times)
        return mean.values, np.sqrt(var.values)

    def predict_full(self, X) -> Prediction:
        """Mean and variance together as FieldTensors."""
        self._require_fitted()
        vertex_ids, times = _check_grid_input(X)
        mean = posterior_mean(self.theta_, self.training_, self.spectrum,
                              vertex_ids, times)
        var = posterior_variance(self.theta_, self.training_, self.spectrum,
                                 vertex_ids, times)
        return Prediction(mean=mean, variance=var)

    def loo_score(self) -> float:
        """Leave-one-location-out CV error of the fitted model."""
        self._require_fitted()
        _, tau2 = loo_residuals(self.theta_, self.training_, self.spectrum)
        return tau2
