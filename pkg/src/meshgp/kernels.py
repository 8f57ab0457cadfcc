"""The three constituent kernels: spectral Matern spatial, Matern-3/2 temporal
(with its analytic time derivative), and the free-form two-task kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import LaplacianSpectrum


class KernelError(ValueError):
    """Invalid kernel inputs or hyperparameters."""


@dataclass(frozen=True)
class Hyperparams:
    """The 9 trainable model parameters.

    sigma_m, l_s scale the spatial kernel; sigma_a, l_t the temporal one;
    beta11/beta21/beta22 are the lower-triangular task-kernel factor
    entries; the two sigma2_*_eps are per-task noise variances.
    """

    sigma_m: float
    l_s: float
    sigma_a: float
    l_t: float
    beta11: float
    beta21: float
    beta22: float
    sigma2_u_eps: float
    sigma2_v_eps: float

    def __post_init__(self):
        for name in ("sigma_m", "l_s", "sigma_a", "l_t", "beta11", "beta22"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise KernelError(f"{name} must be positive and finite, got {value}")
        for name in ("beta21", "sigma2_u_eps", "sigma2_v_eps"):
            if not np.isfinite(getattr(self, name)):
                raise KernelError(f"{name} must be finite")
        if self.sigma2_u_eps < 0.0 or self.sigma2_v_eps < 0.0:
            raise KernelError("noise variances must be >= 0")

    def to_dict(self) -> dict:
        return {
            "sigma_m": self.sigma_m, "l_s": self.l_s,
            "sigma_a": self.sigma_a, "l_t": self.l_t,
            "beta11": self.beta11, "beta21": self.beta21, "beta22": self.beta22,
            "sigma2_u_eps": self.sigma2_u_eps, "sigma2_v_eps": self.sigma2_v_eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**{k: float(d[k]) for k in (
            "sigma_m", "l_s", "sigma_a", "l_t",
            "beta11", "beta21", "beta22", "sigma2_u_eps", "sigma2_v_eps")})


# Gamma(5/2) / Gamma(3/2) = 3/2, baked in so no special functions are needed.
_GAMMA_RATIO = 1.5
_NU = 1.5
_D = 2


def spectral_density(lam, l_s: float, nu: float = 1.5, d: int = 2):
    """Matern spectral density evaluated at Laplacian eigenvalue(s) ``lam``.

    S(sqrt(lam)) = 2^d pi^(d/2) Gamma(nu+d/2) (2 nu)^nu / (Gamma(nu) l_s^(2 nu))
                   * (2 nu / l_s^2 + 4 pi^2 lam)^-(nu + d/2)

    Only the surface case nu=3/2, d=2 is supported; the Gamma ratio is a
    baked-in constant.  At lam=0 the value is 2*pi*l_s^2.
    """
    if nu != _NU or d != _D:
        raise KernelError(f"only nu=3/2, d=2 supported, got nu={nu}, d={d}")
    if not (np.isfinite(l_s) and l_s > 0.0):
        raise KernelError(f"l_s must be positive and finite, got {l_s}")
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)) or np.any(lam < 0.0):
        raise KernelError("eigenvalues must be finite and >= 0")
    two_nu = 2.0 * _NU
    prefactor = (2.0 ** _D) * math.pi * _GAMMA_RATIO * two_nu ** _NU / l_s ** (2.0 * _NU)
    out = prefactor * (two_nu / l_s ** 2 + 4.0 * math.pi ** 2 * lam) ** (-(_NU + _D / 2.0))
    return out if out.ndim else float(out)


def _mode_weights(spectrum: LaplacianSpectrum, sigma_m: float, l_s: float) -> np.ndarray:
    if not (np.isfinite(sigma_m) and sigma_m > 0.0):
        raise KernelError(f"sigma_m must be positive and finite, got {sigma_m}")
    return sigma_m * spectral_density(spectrum.eigenvalues, l_s)


def _check_vertex_ids(spectrum: LaplacianSpectrum, ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise KernelError("vertex index list must be one-dimensional")
    if ids.size and (ids.min() < 0 or ids.max() >= spectrum.n_vertices):
        raise KernelError(
            f"vertex index out of range: [{ids.min()}, {ids.max()}] "
            f"with {spectrum.n_vertices} vertices"
        )
    return ids


def spatial_kernel(spectrum: LaplacianSpectrum, sigma_m: float, l_s: float,
                   rows, cols) -> np.ndarray:
    """Spectral spatial kernel K[a, b] = sum_j sigma_m S(sqrt(lam_j))
    phi_j(x_a) phi_j(x_b) over the truncated modes."""
    rows = _check_vertex_ids(spectrum, rows)
    cols = _check_vertex_ids(spectrum, cols)
    w = _mode_weights(spectrum, sigma_m, l_s)
    phi = spectrum.eigenvectors
    return (phi[rows] * w) @ phi[cols].T


def spatial_kernel_diag(spectrum: LaplacianSpectrum, sigma_m: float, l_s: float,
                        ids) -> np.ndarray:
    """Diagonal K(x, x) of the spatial kernel at the given vertices."""
    ids = _check_vertex_ids(spectrum, ids)
    w = _mode_weights(spectrum, sigma_m, l_s)
    phi = spectrum.eigenvectors[ids]
    return (phi * phi) @ w


def spatial_kernel_laplacian(spectrum: LaplacianSpectrum, sigma_m: float, l_s: float,
                             rows, cols) -> np.ndarray:
    """Surface Laplacian of the spatial kernel in its row argument.

    The Laplace-Beltrami operator acts as -lam_j on mode phi_j, so the
    result is -sum_j lam_j sigma_m S(sqrt(lam_j)) phi_j(x_a) phi_j(x_b).
    """
    rows = _check_vertex_ids(spectrum, rows)
    cols = _check_vertex_ids(spectrum, cols)
    w = -spectrum.eigenvalues * _mode_weights(spectrum, sigma_m, l_s)
    phi = spectrum.eigenvectors
    return (phi[rows] * w) @ phi[cols].T


def temporal_kernel(t, t_prime, sigma_a: float, l_t: float):
    """Matern-3/2 temporal kernel; broadcasts over array inputs."""
    if not (np.isfinite(sigma_a) and sigma_a > 0.0):
        raise KernelError(f"sigma_a must be positive and finite, got {sigma_a}")
    if not (np.isfinite(l_t) and l_t > 0.0):
        raise KernelError(f"l_t must be positive and finite, got {l_t}")
    t = np.asarray(t, dtype=float)
    t_prime = np.asarray(t_prime, dtype=float)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(t_prime))):
        raise KernelError("time stamps must be finite")
    r = math.sqrt(3.0) * np.abs(t - t_prime) / l_t
    out = sigma_a * (1.0 + r) * np.exp(-r)
    return out if out.ndim else float(out)


def temporal_kernel_dt(t_i, t_j, sigma_a: float, l_t: float):
    """d/dt_i of the Matern-3/2 temporal kernel.

    Equals -sigma_a a^2 m exp(-a m) sign(t_i - t_j) with m = |t_i - t_j|
    and a = sqrt(3)/l_t; the derivative is 0 at zero lag (sign(0) = 0).
    """
    if not (np.isfinite(sigma_a) and sigma_a > 0.0):
        raise KernelError(f"sigma_a must be positive and finite, got {sigma_a}")
    if not (np.isfinite(l_t) and l_t > 0.0):
        raise KernelError(f"l_t must be positive and finite, got {l_t}")
    t_i = np.asarray(t_i, dtype=float)
    t_j = np.asarray(t_j, dtype=float)
    a = math.sqrt(3.0) / l_t
    m = np.abs(t_i - t_j)
    out = -sigma_a * a * a * m * np.exp(-a * m) * np.sign(t_i - t_j)
    return out if out.ndim else float(out)


def task_kernel(params: Hyperparams) -> np.ndarray:
    """Free-form two-task kernel L L^T from the lower-triangular factor
    [[beta11, 0], [beta21, beta22]]; symmetric positive definite."""
    b11, b21, b22 = params.beta11, params.beta21, params.beta22
    return np.array([
        [b11 * b11, b11 * b21],
        [b11 * b21, b21 * b21 + b22 * b22],
    ])
