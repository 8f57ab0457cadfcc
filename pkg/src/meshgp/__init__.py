"""Geometry-aware multi-task Gaussian processes with reaction-diffusion physics.

Submodules are imported lazily so the CLI can pin BLAS thread counts
before numpy loads.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    # mesh
    "TriMesh": ".mesh", "LaplacianSpectrum": ".mesh", "MeshError": ".mesh",
    "load_mesh": ".mesh", "cotangent_laplacian": ".mesh",
    "eigen_spectrum": ".mesh", "build_spectrum": ".mesh",
    "icosphere": ".mesh", "tetrahedron": ".mesh", "ellipsoid": ".mesh",
    "geodesic_distances": ".mesh",
    # kernels
    "Hyperparams": ".kernels", "KernelError": ".kernels",
    "spectral_density": ".kernels", "spatial_kernel": ".kernels",
    "temporal_kernel": ".kernels", "temporal_kernel_dt": ".kernels",
    "task_kernel": ".kernels",
    # covariance algebra
    "FieldTensor": ".kroncov", "CovFactorization": ".kroncov",
    "factorize": ".kroncov", "apply_inverse": ".kroncov",
    "quadratic_form": ".kroncov", "log_det": ".kroncov",
    "mode_n_contract": ".kroncov", "IllConditionedError": ".kroncov",
    # model
    "TrainingSet": ".gp", "Prediction": ".gp", "nll": ".gp",
    "posterior_mean": ".gp", "posterior_variance": ".gp",
    "loo_residuals": ".gp",
    # physics
    "FHNParams": ".physics", "CollocationSet": ".physics",
    "fhn_reaction": ".physics", "physics_loss": ".physics",
    "objective": ".physics", "predict_with_derivatives": ".physics",
    # training and estimator
    "TrainConfig": ".train", "TrainReport": ".train", "optimize": ".train",
    "TrainingError": ".train", "MeshGPRegressor": ".estimator",
    # simulation
    "SimConfig": ".sim", "Stimulus": ".sim", "fhn_simulate": ".sim",
    "add_noise": ".sim", "relative_error": ".sim", "relative_errors": ".sim",
    "subsample": ".sim", "protocol_stimuli": ".sim", "SimulationError": ".sim",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        module = importlib.import_module(_EXPORTS[name], __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return __all__
