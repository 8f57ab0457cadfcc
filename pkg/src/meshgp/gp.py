"""The multi-task GP itself: marginal likelihood, posterior mean and
variance at arbitrary mesh vertices and times, and the single-inversion
leave-one-location-out cross-validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kroncov
from .kernels import (
    Hyperparams,
    spatial_kernel,
    spatial_kernel_diag,
    task_kernel,
    temporal_kernel,
)
from .kroncov import CovFactorization, CovarianceError, FieldTensor, factorize
from .mesh import LaplacianSpectrum

LOG_2PI = float(np.log(2.0 * np.pi))


class ModelError(ValueError):
    """Invalid training data or query."""


@dataclass(frozen=True)
class TrainingSet:
    """Observations on a (vertex, time) grid for both tasks."""

    mesh_ref: str
    X_tr: np.ndarray   # (N_s,) unique vertex indices
    T_tr: np.ndarray   # (N_t,) strictly increasing time stamps
    Y: FieldTensor     # (2, N_s, N_t)

    def __post_init__(self):
        x = np.asarray(self.X_tr, dtype=np.int64)
        t = np.asarray(self.T_tr, dtype=float)
        if x.ndim != 1 or len(np.unique(x)) != len(x):
            raise ModelError("X_tr must be a 1-d array of unique vertex indices")
        if t.ndim != 1 or (len(t) > 1 and np.any(np.diff(t) <= 0.0)):
            raise ModelError("T_tr must be strictly increasing")
        if not np.all(np.isfinite(t)):
            raise ModelError("T_tr must be finite")
        if self.Y.values.shape != (2, len(x), len(t)):
            raise ModelError(
                f"Y shape {self.Y.values.shape} does not match "
                f"(2, {len(x)}, {len(t)})"
            )
        object.__setattr__(self, "X_tr", x)
        object.__setattr__(self, "T_tr", t)

    @property
    def n_space(self) -> int:
        return self.X_tr.shape[0]

    @property
    def n_time(self) -> int:
        return self.T_tr.shape[0]


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and per-point marginal variance on a query grid."""

    mean: FieldTensor
    variance: FieldTensor

    def __post_init__(self):
        if self.mean.values.shape != self.variance.values.shape:
            raise ModelError("mean and variance shapes differ")
        if np.any(self.variance.values < 0.0):
            raise ModelError("variance must be nonnegative")


def training_factorization(theta: Hyperparams, data: TrainingSet,
                           spectrum: LaplacianSpectrum) -> CovFactorization:
    """Assemble and factorize the training covariance for the given theta."""
    K_s = spatial_kernel(spectrum, theta.sigma_m, theta.l_s, data.X_tr, data.X_tr)
    K_t = temporal_kernel(data.T_tr[:, None], data.T_tr[None, :],
                          theta.sigma_a, theta.l_t)
    noise = (theta.sigma2_u_eps, theta.sigma2_v_eps)
    return factorize(K_s, K_t, task_kernel(theta), noise)


def nll(theta: Hyperparams, data: TrainingSet, spectrum: LaplacianSpectrum) -> float:
    """Per-observation negative log-likelihood (f1 + f2 + f3) / (2 N_tr)
    with N_tr = 2 N_s N_t."""
    fact = training_factorization(theta, data, spectrum)
    n_tr = 2 * data.n_space * data.n_time
    f1 = kroncov.quadratic_form(fact, data.Y)
    f2 = kroncov.log_det(fact)
    f3 = n_tr * LOG_2PI
    return (f1 + f2 + f3) / (2.0 * n_tr)


def _check_query_grid(data: TrainingSet, spectrum: LaplacianSpectrum,
                      vertices, times):
    vertices = data.X_tr if vertices is None else np.asarray(vertices, dtype=np.int64)
    times = data.T_tr if times is None else np.atleast_1d(np.asarray(times, dtype=float))
    if vertices.size == 0 or times.size == 0:
        raise ModelError("empty query")
    if vertices.min() < 0 or vertices.max() >= spectrum.n_vertices:
        raise ModelError(
            f"query vertex out of range: [{vertices.min()}, {vertices.max()}] "
            f"with {spectrum.n_vertices} mesh vertices"
        )
    if not np.all(np.isfinite(times)):
        raise ModelError("query times must be finite")
    return vertices, times


def posterior_mean(theta: Hyperparams, data: TrainingSet,
                   spectrum: LaplacianSpectrum,
                   vertices=None, times=None) -> FieldTensor:
    """Posterior mean for both tasks on the vertices x times grid.

    Defaults to the training grid.  Computed by the rotated-basis tensor
    contraction: the weighted rotated data is formed once, then folded
    with the cross-kernel factors (K_t* U_t), (K_s* U_s) and K_f per mode.
    """
    vertices, times = _check_query_grid(data, spectrum, vertices, times)
    fact = training_factorization(theta, data, spectrum)
    ytilde = kroncov.weighted_rotated(fact, data.Y)
    # core tensor in (time, space, task) layout
    core = np.stack([ytilde[0].T, ytilde[1].T], axis=2)
    M_s = spatial_kernel(spectrum, theta.sigma_m, theta.l_s, vertices, data.X_tr) @ fact.U_s
    M_t = temporal_kernel(times[:, None], data.T_tr[None, :],
                          theta.sigma_a, theta.l_t) @ fact.U_t
    out = kroncov.mode_n_contract(core, M_t, M_s, task_kernel(theta))
    return FieldTensor(values=np.transpose(out, (2, 1, 0)),
                       space_ids=vertices, times=times)


def posterior_mean_points(theta: Hyperparams, data: TrainingSet,
                          spectrum: LaplacianSpectrum, points) -> np.ndarray:
    """Posterior mean at a list of (task, vertex, time) triples.

    Evaluates the grid of unique vertices and times, then gathers; the
    mean at a triple depends only on its own coordinates.
    """
    tasks, verts, times = _split_points(points, spectrum)
    uverts, vinv = np.unique(verts, return_inverse=True)
    utimes, tinv = np.unique(times, return_inverse=True)
    grid = posterior_mean(theta, data, spectrum, uverts, utimes)
    return grid.values[tasks, vinv, tinv]


def posterior_variance(theta: Hyperparams, data: TrainingSet,
                       spectrum: LaplacianSpectrum,
                       vertices=None, times=None) -> FieldTensor:
    """Marginal posterior variance for both tasks on the query grid.

    Uses the factorized quadratic form per grid point: the cross
    covariance is rank-1 across space and time, so the correction
    reduces to squared rotated cross-kernels against the diagonal
    inverse blocks.  Values are clamped at zero.
    """
    vertices, times = _check_query_grid(data, spectrum, vertices, times)
    fact = training_factorization(theta, data, spectrum)
    K_f = task_kernel(theta)

    C_s = spatial_kernel(spectrum, theta.sigma_m, theta.l_s, vertices, data.X_tr) @ fact.U_s
    C_t = temporal_kernel(times[:, None], data.T_tr[None, :],
                          theta.sigma_a, theta.l_t) @ fact.U_t
    CS2, CT2 = C_s * C_s, C_t * C_t
    quad_uu = CS2 @ fact.lam_tilde_11 @ CT2.T
    quad_uv = CS2 @ fact.lam_tilde_12 @ CT2.T
    quad_vv = CS2 @ fact.lam_tilde_22 @ CT2.T

    prior = spatial_kernel_diag(spectrum, theta.sigma_m, theta.l_s, vertices) * theta.sigma_a
    values = np.empty((2, len(vertices), len(times)))
    for f in range(2):
        correction = (K_f[f, 0] ** 2 * quad_uu
                      + 2.0 * K_f[f, 0] * K_f[f, 1] * quad_uv
                      + K_f[f, 1] ** 2 * quad_vv)
        values[f] = K_f[f, f] * prior[:, None] - correction
    return FieldTensor(values=np.maximum(values, 0.0),
                       space_ids=vertices, times=times)


def posterior_variance_points(theta: Hyperparams, data: TrainingSet,
                              spectrum: LaplacianSpectrum, points) -> np.ndarray:
    """Marginal variance at (task, vertex, time) triples, one factorized
    inverse application per query point."""
    tasks, verts, times = _split_points(points, spectrum)
    fact = training_factorization(theta, data, spectrum)
    K_f = task_kernel(theta)
    k_s = spatial_kernel(spectrum, theta.sigma_m, theta.l_s, verts, data.X_tr)
    k_t = temporal_kernel(times[:, None], data.T_tr[None, :], theta.sigma_a, theta.l_t)
    prior_s = spatial_kernel_diag(spectrum, theta.sigma_m, theta.l_s, verts)

    out = np.empty(len(tasks))
    for i, (f, ks_row, kt_row) in enumerate(zip(tasks, k_s, k_t)):
        cross = K_f[f][:, None, None] * np.multiply.outer(ks_row, kt_row)[None]
        z = kroncov.apply_inverse(fact, cross)
        out[i] = K_f[f, f] * prior_s[i] * theta.sigma_a - float(np.sum(cross * z))
    return np.maximum(out, 0.0)


def _split_points(points, spectrum: LaplacianSpectrum):
    points = list(points)
    if not points:
        raise ModelError("empty query")
    tasks = np.array([p[0] for p in points], dtype=np.int64)
    verts = np.array([p[1] for p in points], dtype=np.int64)
    times = np.array([p[2] for p in points], dtype=float)
    if tasks.min() < 0 or tasks.max() > 1:
        raise ModelError("task index must be 0 (u) or 1 (v)")
    if verts.min() < 0 or verts.max() >= spectrum.n_vertices:
        raise ModelError(
            f"query vertex out of range: [{verts.min()}, {verts.max()}] "
            f"with {spectrum.n_vertices} mesh vertices"
        )
    if not np.all(np.isfinite(times)):
        raise ModelError("query times must be finite")
    return tasks, verts, times


def loo_residuals(theta: Hyperparams, data: TrainingSet,
                  spectrum: LaplacianSpectrum):
    """Leave-one-location-out residuals from a single factorization.

    For each training location i, the residual block over both tasks and
    all times equals B_i^{-1} z_i, where z = Sigma_tr^{-1} y and B_i is
    the (2 N_t x 2 N_t) diagonal block of Sigma_tr^{-1} at location i.
    Returns the residual FieldTensor and tau2_cv, the mean of the
    squared residuals.
    """
    if data.n_space < 2:
        raise ModelError("leave-one-location-out needs at least 2 training locations")
    fact = training_factorization(theta, data, spectrum)
    z = kroncov.apply_inverse(fact, data.Y)

    # Diagonal (location i) block of Sigma^{-1}: for task pair (p, q) it is
    # U_t diag(w_pq[i]) U_t^T with w_pq[i, n] = sum_m U_s[i, m]^2 lt_pq[m, n].
    Us2 = fact.U_s * fact.U_s
    w11 = Us2 @ fact.lam_tilde_11
    w12 = Us2 @ fact.lam_tilde_12
    w22 = Us2 @ fact.lam_tilde_22

    n_t = data.n_time
    U_t = fact.U_t
    residuals = np.empty_like(data.Y.values)
    block = np.empty((2 * n_t, 2 * n_t))
    for i in range(data.n_space):
        block[:n_t, :n_t] = (U_t * w11[i]) @ U_t.T
        block[:n_t, n_t:] = (U_t * w12[i]) @ U_t.T
        block[n_t:, :n_t] = block[:n_t, n_t:].T
        block[n_t:, n_t:] = (U_t * w22[i]) @ U_t.T
        rhs = np.concatenate([z.values[0, i], z.values[1, i]])
        try:
            r = np.linalg.solve(block, rhs)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(
                f"singular per-location block at training location {i}"
            ) from exc
        residuals[0, i] = r[:n_t]
        residuals[1, i] = r[n_t:]

    tau2 = float(np.mean(residuals * residuals))
    ft = FieldTensor(values=residuals, tasks=data.Y.tasks,
                     space_ids=data.X_tr, times=data.T_tr)
    return ft, tau2
