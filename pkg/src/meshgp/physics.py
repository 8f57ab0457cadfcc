"""FitzHugh-Nagumo residuals of the GP predictive mean at collocation
points, the physics loss, and the combined training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kroncov
from .gp import TrainingSet, training_factorization
from .kernels import (
    Hyperparams,
    spatial_kernel,
    spatial_kernel_laplacian,
    task_kernel,
    temporal_kernel,
    temporal_kernel_dt,
)
from .mesh import LaplacianSpectrum


class PhysicsError(ValueError):
    """Invalid physics parameters or collocation points."""


@dataclass(frozen=True)
class FHNParams:
    """FitzHugh-Nagumo reaction constants and diffusion coefficients.

    Defaults are the reference parameter set (C1=0.26, C2=0.1, alpha=0.13,
    b=0.013, d=1.0, e1=10, e2=0).  ``coupling_sign`` selects the sign of
    the C2*u*v coupling term in the activation kinetics; -1 is the
    standard form.
    """

    C1: float = 0.26
    C2: float = 0.1
    alpha: float = 0.13
    b: float = 0.013
    d: float = 1.0
    e1: float = 10.0
    e2: float = 0.0
    coupling_sign: float = -1.0

    def __post_init__(self):
        for name in ("C1", "C2", "alpha", "b", "d", "e1", "e2"):
            if not np.isfinite(getattr(self, name)):
                raise PhysicsError(f"{name} must be finite")
        if self.e1 < 0.0 or self.e2 < 0.0:
            raise PhysicsError("diffusion coefficients must be >= 0")
        if self.coupling_sign not in (-1.0, 1.0):
            raise PhysicsError("coupling_sign must be -1 or +1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("C1", "C2", "alpha", "b", "d", "e1", "e2", "coupling_sign")}

    @classmethod
    def from_dict(cls, d: dict) -> "FHNParams":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class CollocationSet:
    """Space-time points where the PDE residual of the GP mean is penalized."""

    vertex_ids: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.vertex_ids, dtype=np.int64)
        times = np.asarray(self.times, dtype=float)
        if ids.ndim != 1 or times.shape != ids.shape:
            raise PhysicsError("vertex_ids and times must be 1-d arrays of equal length")
        if ids.size < 1:
            raise PhysicsError("collocation set must contain at least one point")
        if ids.min() < 0:
            raise PhysicsError("collocation vertex index must be >= 0")
        if not np.all(np.isfinite(times)):
            raise PhysicsError("collocation times must be finite")
        object.__setattr__(self, "vertex_ids", ids)
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return self.vertex_ids.shape[0]

    @classmethod
    def sample(cls, n: int, n_vertices: int, t_min: float, t_max: float,
               seed: int) -> "CollocationSet":
        """Uniform seeded draw over mesh vertices x the training time range."""
        if n < 1:
            raise PhysicsError("collocation count must be >= 1")
        rng = np.random.default_rng(seed)
        return cls(vertex_ids=rng.integers(0, n_vertices, size=n),
                   times=rng.uniform(t_min, t_max, size=n))


def fhn_reaction(u, v, p: FHNParams):
    """Reaction kinetics (g1, g2) of the two-variable FHN model."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    g1 = p.C1 * u * (u - p.alpha) * (1.0 - u) + p.coupling_sign * p.C2 * u * v
    g2 = p.b * (u - p.d * v)
    if g1.ndim == 0:
        return float(g1), float(g2)
    return g1, g2


@dataclass(frozen=True)
class MeanFields:
    """GP mean and its derivatives evaluated at collocation points."""

    u: np.ndarray
    v: np.ndarray
    du_dt: np.ndarray
    dv_dt: np.ndarray
    lap_u: np.ndarray
    lap_v: np.ndarray


def predict_with_derivatives(theta: Hyperparams, data: TrainingSet,
                             spectrum: LaplacianSpectrum,
                             colloc: CollocationSet) -> MeanFields:
    """Posterior mean, its time derivative and its surface Laplacian.

    The rotated weighted data is computed once; the three quantities only
    differ in which cross-kernel factor enters the contraction (the
    temporal kernel, its analytic derivative, or the Laplacian-weighted
    spatial kernel).
    """
    if colloc.vertex_ids.max() >= spectrum.n_vertices:
        raise PhysicsError(
            f"collocation vertex out of range: {colloc.vertex_ids.max()} "
            f"with {spectrum.n_vertices} mesh vertices"
        )
    fact = training_factorization(theta, data, spectrum)
    ytilde = kroncov.weighted_rotated(fact, data.Y)
    K_f = task_kernel(theta)

    uverts, vinv = np.unique(colloc.vertex_ids, return_inverse=True)
    utimes, tinv = np.unique(colloc.times, return_inverse=True)

    A_s = (spatial_kernel(spectrum, theta.sigma_m, theta.l_s, uverts, data.X_tr)
           @ fact.U_s)[vinv]
    A_s_lap = (spatial_kernel_laplacian(spectrum, theta.sigma_m, theta.l_s,
                                        uverts, data.X_tr) @ fact.U_s)[vinv]
    A_t = (temporal_kernel(utimes[:, None], data.T_tr[None, :],
                           theta.sigma_a, theta.l_t) @ fact.U_t)[tinv]
    A_t_dt = (temporal_kernel_dt(utimes[:, None], data.T_tr[None, :],
                                 theta.sigma_a, theta.l_t) @ fact.U_t)[tinv]

    def contract(space_rows, time_rows):
        per_task = [np.einsum("is,st,it->i", space_rows, ytilde[p], time_rows,
                              optimize=True) for p in (0, 1)]
        return (K_f[0, 0] * per_task[0] + K_f[0, 1] * per_task[1],
                K_f[1, 0] * per_task[0] + K_f[1, 1] * per_task[1])

    u, v = contract(A_s, A_t)
    du, dv = contract(A_s, A_t_dt)
    lap_u, lap_v = contract(A_s_lap, A_t)
    return MeanFields(u=u, v=v, du_dt=du, dv_dt=dv, lap_u=lap_u, lap_v=lap_v)


def pde_residuals(fields: MeanFields, p: FHNParams):
    """PDE residuals of both channels at the evaluated points."""
    g1, g2 = fhn_reaction(fields.u, fields.v, p)
    gamma_u = fields.du_dt - p.e1 * fields.lap_u - g1
    gamma_v = fields.dv_dt - p.e2 * fields.lap_v - g2
    return gamma_u, gamma_v


def physics_loss(theta: Hyperparams, data: TrainingSet,
                 spectrum: LaplacianSpectrum, colloc: CollocationSet,
                 p: FHNParams) -> float:
    """Mean squared PDE residual of the GP mean over the collocation set."""
    fields = predict_with_derivatives(theta, data, spectrum, colloc)
    gamma_u, gamma_v = pde_residuals(fields, p)
    return float(np.mean(gamma_u * gamma_u + gamma_v * gamma_v))


def objective_parts(theta: Hyperparams, data: TrainingSet,
                    spectrum: LaplacianSpectrum, colloc: CollocationSet | None,
                    p: FHNParams | None, w: float):
    """(total, data term, physics term) of the regularized objective.

    w = 0 skips the physics evaluation entirely and reduces to the plain
    likelihood fit.
    """
    from .gp import nll

    if w < 0.0 or not np.isfinite(w):
        raise PhysicsError(f"physics weight must be >= 0, got {w}")
    ld = nll(theta, data, spectrum)
    if w == 0.0:
        return ld, ld, 0.0
    if colloc is None or p is None:
        raise PhysicsError("collocation set and FHN parameters required when w > 0")
    lphy = physics_loss(theta, data, spectrum, colloc, p)
    return ld + w * lphy, ld, lphy


def objective(theta: Hyperparams, data: TrainingSet,
              spectrum: LaplacianSpectrum, colloc: CollocationSet | None,
              p: FHNParams | None, w: float) -> float:
    """The physics-regularized training objective L_d + w * L_phy."""
    return objective_parts(theta, data, spectrum, colloc, p, w)[0]
