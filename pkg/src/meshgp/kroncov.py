"""Kronecker-factorized covariance algebra for the two-task training
covariance K_f (x) K_s (x) K_t + D (x) I (x) I.

The full (2 N_s N_t)^2 matrix is never materialized.  Spatial and temporal
kernel blocks are eigendecomposed once; everything downstream reduces to
elementwise work on three diagonal blocks (the 2x2 block inverse in the
rotated basis) plus small matrix products against U_s and U_t.

Internal layout: per-task vectors are stored as (N_s, N_t) arrays, space
index slowest / time fastest, matching the vec ordering of the Kronecker
product where the time factor sits rightmost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CovarianceError(ValueError):
    """Dimension mismatch or invalid covariance inputs."""


class IllConditionedError(CovarianceError):
    """The assembled covariance is numerically singular."""


# Kernel-block eigenvalues below this fraction of the largest are clamped
# up to the floor before the diagonal blocks are formed.
EIG_FLOOR = 1e-12


@dataclass(frozen=True)
class FieldTensor:
    """A (task, space, time) array of field values with its index sets."""

    values: np.ndarray          # (n_tasks, n_space, n_time)
    tasks: tuple = ("u", "v")
    space_ids: np.ndarray | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 3:
            raise CovarianceError(f"values must be 3-d (task, space, time), got {vals.shape}")
        if len(self.tasks) != vals.shape[0]:
            raise CovarianceError("task labels must match the first axis")
        if not np.all(np.isfinite(vals)):
            raise CovarianceError("field values must be finite")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.space_ids is not None:
            ids = np.asarray(self.space_ids, dtype=np.int64)
            if ids.shape != (vals.shape[1],):
                raise CovarianceError("space_ids must match the space axis")
            object.__setattr__(self, "space_ids", ids)
        if self.times is not None:
            times = np.asarray(self.times, dtype=float)
            if times.shape != (vals.shape[2],):
                raise CovarianceError("times must match the time axis")
            object.__setattr__(self, "times", times)

    @property
    def n_space(self) -> int:
        return self.values.shape[1]

    @property
    def n_time(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class CovFactorization:
    """Eigenfactors of the kernel blocks plus the diagonal 2x2 block
    inverse of the rotated training covariance."""

    U_s: np.ndarray        # (N_s, N_s) orthogonal
    lam_s: np.ndarray      # (N_s,) clamped eigenvalues
    U_t: np.ndarray        # (N_t, N_t)
    lam_t: np.ndarray      # (N_t,)
    task: np.ndarray       # (2, 2) task kernel
    noise: np.ndarray      # (2,) per-task noise variances
    lam11: np.ndarray      # (N_s, N_t) diagonal blocks of Lambda
    lam12: np.ndarray
    lam22: np.ndarray
    lam_tilde_11: np.ndarray  # (N_s, N_t) blocks of Lambda^{-1}
    lam_tilde_12: np.ndarray
    lam_tilde_22: np.ndarray
    schur_diag: np.ndarray    # (N_s, N_t) Schur complement diagonal

    @property
    def n_space(self) -> int:
        return self.U_s.shape[0]

    @property
    def n_time(self) -> int:
        return self.U_t.shape[0]


def _clamped_eigh(K: np.ndarray, label: str):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise CovarianceError(f"{label} kernel must be square, got {K.shape}")
    if not np.all(np.isfinite(K)):
        raise CovarianceError(f"{label} kernel has non-finite entries")
    if np.abs(K - K.T).max() > 1e-8 * max(np.abs(K).max(), 1.0):
        raise CovarianceError(f"{label} kernel is not symmetric")
    try:
        lam, U = np.linalg.eigh(K)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedError(f"eigendecomposition of {label} kernel failed: {exc}") from exc
    floor = EIG_FLOOR * max(float(lam.max()), 0.0)
    return U, np.maximum(lam, floor)


def factorize(K_s_train: np.ndarray, K_t_train: np.ndarray,
              task: np.ndarray, noise) -> CovFactorization:
    """Factorize the training covariance.

    ``task`` is the 2x2 task kernel, ``noise`` the (sigma2_u, sigma2_v)
    pair.  Kernel blocks are symmetric-eigendecomposed (for PSD kernels
    this coincides with their SVD and keeps signs deterministic).
    """
    task = np.asarray(task, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if task.shape != (2, 2) or abs(task[0, 1] - task[1, 0]) > 1e-12 * max(np.abs(task).max(), 1.0):
        raise CovarianceError(f"task kernel must be symmetric 2x2, got {task}")
    if noise.shape != (2,) or np.any(noise < 0.0) or not np.all(np.isfinite(noise)):
        raise CovarianceError(f"noise must be a pair of nonnegative variances, got {noise}")

    U_s, lam_s = _clamped_eigh(K_s_train, "spatial")
    U_t, lam_t = _clamped_eigh(K_t_train, "temporal")

    core = np.outer(lam_s, lam_t)                      # (N_s, N_t)
    lam11 = task[0, 0] * core + noise[0]
    lam12 = task[0, 1] * core
    lam22 = task[1, 1] * core + noise[1]

    if np.any(lam11 <= 0.0):
        raise IllConditionedError(
            "Lambda_11 has non-positive entries (zero noise with a singular "
            "kernel block); covariance is ill-conditioned"
        )
    schur = lam22 - lam12 * lam12 / lam11
    if np.any(schur <= 0.0):
        raise IllConditionedError(
            "Schur complement has non-positive entries; covariance is ill-conditioned"
        )

    lt22 = 1.0 / schur
    lt12 = -lam12 / (lam11 * schur)
    lt11 = 1.0 / lam11 + (lam12 * lam12) / (lam11 * lam11 * schur)
    return CovFactorization(
        U_s=U_s, lam_s=lam_s, U_t=U_t, lam_t=lam_t,
        task=task, noise=noise,
        lam11=lam11, lam12=lam12, lam22=lam22,
        lam_tilde_11=lt11, lam_tilde_12=lt12, lam_tilde_22=lt22,
        schur_diag=schur,
    )


def _block_values(fact: CovFactorization, y) -> np.ndarray:
    values = y.values if isinstance(y, FieldTensor) else np.asarray(y, dtype=float)
    if values.shape != (2, fact.n_space, fact.n_time):
        raise CovarianceError(
            f"field shape {values.shape} does not match factorization "
            f"(2, {fact.n_space}, {fact.n_time})"
        )
    return values


def rotate(fact: CovFactorization, y) -> np.ndarray:
    """Apply (U_s (x) U_t)^T per task block: v_p = U_s^T Y_p U_t."""
    values = _block_values(fact, y)
    return np.stack([fact.U_s.T @ values[0] @ fact.U_t,
                     fact.U_s.T @ values[1] @ fact.U_t])


def weighted_rotated(fact: CovFactorization, y) -> np.ndarray:
    """The rotated-basis image Lambda^{-1} (U^T y): the ytilde of the
    posterior contraction, per task as (N_s, N_t)."""
    v = rotate(fact, y)
    return np.stack([
        fact.lam_tilde_11 * v[0] + fact.lam_tilde_12 * v[1],
        fact.lam_tilde_12 * v[0] + fact.lam_tilde_22 * v[1],
    ])


def apply_inverse(fact: CovFactorization, y):
    """Sigma_tr^{-1} y without forming any Kronecker product.

    Accepts a FieldTensor or a raw (2, N_s, N_t) array and returns the
    same kind.
    """
    yt = weighted_rotated(fact, y)
    out = np.stack([fact.U_s @ yt[0] @ fact.U_t.T,
                    fact.U_s @ yt[1] @ fact.U_t.T])
    if isinstance(y, FieldTensor):
        return FieldTensor(values=out, tasks=y.tasks, space_ids=y.space_ids, times=y.times)
    return out


def quadratic_form(fact: CovFactorization, y) -> float:
    """y^T Sigma_tr^{-1} y (the data-fit term of the log-likelihood)."""
    v = rotate(fact, y)
    return float(np.sum(fact.lam_tilde_11 * v[0] * v[0])
                 + 2.0 * np.sum(fact.lam_tilde_12 * v[0] * v[1])
                 + np.sum(fact.lam_tilde_22 * v[1] * v[1]))


def log_det(fact: CovFactorization) -> float:
    """log |Sigma_tr| = sum log Lambda_11 + sum log Schur diagonal."""
    if np.any(fact.lam11 <= 0.0) or np.any(fact.schur_diag <= 0.0):
        raise IllConditionedError("non-positive diagonal entry in log-determinant")
    return float(np.log(fact.lam11).sum() + np.log(fact.schur_diag).sum())


def mode_n_contract(core: np.ndarray, M_t: np.ndarray, M_s: np.ndarray,
                    M_f: np.ndarray) -> np.ndarray:
    """Sequential mode-1/2/3 products of a (time, space, task) core tensor.

    Equivalent to reshaping (M_f (x) M_s (x) M_t) vec(core); the three
    factor matrices act on the time, space and task modes respectively.
    """
    core = np.asarray(core, dtype=float)
    M_t, M_s, M_f = (np.asarray(M, dtype=float) for M in (M_t, M_s, M_f))
    if core.ndim != 3:
        raise CovarianceError(f"core must be a 3-way tensor, got shape {core.shape}")
    for mode, M in enumerate((M_t, M_s, M_f)):
        if M.ndim != 2 or M.shape[1] != core.shape[mode]:
            raise CovarianceError(
                f"mode-{mode + 1} factor shape {M.shape} does not match "
                f"core shape {core.shape}"
            )
    return np.einsum("ijk,ai,bj,ck->abc", core, M_t, M_s, M_f, optimize=True)
