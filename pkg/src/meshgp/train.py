"""Hyperparameter optimization under the physics-regularized objective.

Multi-start L-BFGS-B over the 9 parameters, positives optimized in log
space, with central finite-difference gradients.  The returned model is
the restart with the smallest leave-one-location-out cross-validation
error, not the smallest objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .gp import TrainingSet, loo_residuals
from .kernels import Hyperparams
from .kroncov import CovarianceError
from .mesh import LaplacianSpectrum
from .physics import CollocationSet, FHNParams, objective_parts


class TrainingError(RuntimeError):
    """All restarts failed, or the objective broke during optimization."""

    def __init__(self, message, traces=None):
        super().__init__(message)
        self.traces = traces or []


PARAM_ORDER = ("sigma_m", "l_s", "sigma_a", "l_t",
               "beta11", "beta21", "beta22", "sigma2_u_eps", "sigma2_v_eps")
# every parameter except beta21 is positive and optimized as its log
_LINEAR_PARAMS = ("beta21",)

# objective value substituted when the covariance goes ill-conditioned at
# a probe point; finite so finite differences stay defined
_PENALTY = 1e12


def pack_theta(theta: Hyperparams) -> np.ndarray:
    """Hyperparams -> optimizer coordinates (log space for positives)."""
    out = np.empty(len(PARAM_ORDER))
    for i, name in enumerate(PARAM_ORDER):
        value = getattr(theta, name)
        out[i] = value if name in _LINEAR_PARAMS else math.log(value)
    return out


def unpack_theta(x) -> Hyperparams:
    """Optimizer coordinates -> Hyperparams."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(PARAM_ORDER),):
        raise TrainingError(f"parameter vector must have shape (9,), got {x.shape}")
    kwargs = {}
    for i, name in enumerate(PARAM_ORDER):
        kwargs[name] = float(x[i]) if name in _LINEAR_PARAMS else float(math.exp(x[i]))
    return Hyperparams(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of the multi-start optimizer.

    ``spatial_scale`` should be the mesh diameter; it anchors the
    length-scale initialization range.  ``bounds`` overrides the default
    box constraints (a dict of name -> (lo, hi) pairs in parameter
    units, not log units).
    """

    restarts: int = 3
    max_iters: int = 80
    tol: float = 1e-6
    tol_window: int = 5
    fd_step: float = 1e-5
    w: float = 0.0
    n_col: int = 200
    seed: int = 0
    spatial_scale: float = 1.0
    init_theta: Hyperparams | None = None
    bounds: dict | None = None

    def __post_init__(self):
        if self.restarts < 1:
            raise TrainingError("restarts must be >= 1")
        if self.tol <= 0.0 or self.fd_step <= 0.0:
            raise TrainingError("tolerances must be positive")
        if self.max_iters < 1:
            raise TrainingError("max_iters must be >= 1")
        if self.w < 0.0:
            raise TrainingError("physics weight must be >= 0")
        if self.spatial_scale <= 0.0:
            raise TrainingError("spatial_scale must be positive")

    def to_dict(self) -> dict:
        return {
            "restarts": self.restarts, "max_iters": self.max_iters,
            "tol": self.tol, "tol_window": self.tol_window,
            "fd_step": self.fd_step, "w": self.w, "n_col": self.n_col,
            "seed": self.seed, "spatial_scale": self.spatial_scale,
            "init_theta": None if self.init_theta is None else self.init_theta.to_dict(),
            "bounds": self.bounds,
        }


def _default_bounds(cfg: TrainConfig) -> dict:
    s = cfg.spatial_scale
    return {
        "sigma_m": (1e-3, 1e3),
        "l_s": (1e-3 * s, 1e2 * s),
        "sigma_a": (1e-3, 1e3),
        "l_t": (0.05, 1e4),
        "beta11": (1e-2, 1e2),
        "beta21": (-10.0, 10.0),
        "beta22": (1e-2, 1e2),
        "sigma2_u_eps": (1e-8, 10.0),
        "sigma2_v_eps": (1e-8, 10.0),
    }


def _packed_bounds(cfg: TrainConfig):
    table = dict(_default_bounds(cfg))
    if cfg.bounds:
        unknown = set(cfg.bounds) - set(PARAM_ORDER)
        if unknown:
            raise TrainingError(f"unknown bound names: {sorted(unknown)}")
        table.update(cfg.bounds)
    packed = []
    for name in PARAM_ORDER:
        lo, hi = table[name]
        if name in _LINEAR_PARAMS:
            packed.append((float(lo), float(hi)))
        else:
            if lo <= 0.0:
                raise TrainingError(f"bound for {name} must be positive")
            packed.append((math.log(lo), math.log(hi)))
    return packed


def _init_ranges(cfg: TrainConfig) -> dict:
    s = cfg.spatial_scale
    return {
        "sigma_m": (0.1, 10.0),
        "l_s": (0.1 * s, 2.0 * s),
        "sigma_a": (0.1, 10.0),
        "l_t": (5.0, 100.0),
        "beta11": (0.3, 3.0),
        "beta21": (-1.0, 1.0),
        "beta22": (0.3, 3.0),
        "sigma2_u_eps": (1e-4, 1e-1),
        "sigma2_v_eps": (1e-4, 1e-1),
    }


def _draw_init(cfg: TrainConfig, restart: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(cfg.seed, 1701, restart)))
    ranges = _init_ranges(cfg)
    lo_hi = _packed_bounds(cfg)
    x = np.empty(len(PARAM_ORDER))
    for i, name in enumerate(PARAM_ORDER):
        lo, hi = ranges[name]
        if name in _LINEAR_PARAMS:
            x[i] = rng.uniform(lo, hi)
        else:
            x[i] = rng.uniform(math.log(lo), math.log(hi))
        x[i] = min(max(x[i], lo_hi[i][0]), lo_hi[i][1])
    return x


def finite_diff_gradient(f, theta: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences of a scalar objective per coordinate."""
    if h <= 0.0:
        raise TrainingError("finite-difference step must be positive")
    x = np.asarray(theta, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise TrainingError(
                f"non-finite objective while probing coordinate {i} "
                f"({PARAM_ORDER[i] if i < len(PARAM_ORDER) else i})"
            )
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class RestartTrace:
    index: int
    theta: Hyperparams
    objective: float
    data_term: float
    physics_term: float
    tau2_cv: float
    converged: bool
    n_iterations: int
    message: str
    trace_objective: tuple = field(default_factory=tuple)
    trace_data: tuple = field(default_factory=tuple)
    trace_physics: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "theta": self.theta.to_dict(),
            "objective": self.objective,
            "data_term": self.data_term,
            "physics_term": self.physics_term,
            "tau2_cv": self.tau2_cv,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "message": self.message,
            "trace_objective": list(self.trace_objective),
            "trace_data": list(self.trace_data),
            "trace_physics": list(self.trace_physics),
        }


@dataclass(frozen=True)
class TrainReport:
    best_theta: Hyperparams
    best_index: int
    model_kind: str           # "M-GP" when w == 0 else "P-M-GP"
    w: float
    n_col: int
    tau2_cv: float
    restarts: tuple
    wall_time_s: float

    def to_dict(self) -> dict:
        return {
            "best_theta": self.best_theta.to_dict(),
            "best_index": self.best_index,
            "model_kind": self.model_kind,
            "w": self.w,
            "n_col": self.n_col,
            "tau2_cv": self.tau2_cv,
            "restarts": [r.to_dict() for r in self.restarts],
            "wall_time_s": self.wall_time_s,
        }


def optimize(data: TrainingSet, spectrum: LaplacianSpectrum,
             fhn: FHNParams | None, cfg: TrainConfig) -> TrainReport:
    """Minimize the (physics-regularized) objective from multiple seeded
    starting points; pick the restart with the smallest tau2_cv.

    Fully deterministic given cfg.seed and a fixed BLAS thread count.
    """
    if data.n_space < 2:
        raise TrainingError("training needs at least 2 spatial locations for CV selection")
    if cfg.w > 0.0 and fhn is None:
        raise TrainingError("FHN parameters are required when the physics weight is > 0")

    colloc = None
    if cfg.w > 0.0:
        colloc = CollocationSet.sample(cfg.n_col, spectrum.n_vertices,
                                       float(data.T_tr.min()), float(data.T_tr.max()),
                                       seed=cfg.seed)

    bounds = _packed_bounds(cfg)
    t_start = time.perf_counter()
    traces = []

    for r in range(cfg.restarts):
        if r == 0 and cfg.init_theta is not None:
            x0 = pack_theta(cfg.init_theta)
            x0 = np.array([min(max(v, lo), hi) for v, (lo, hi) in zip(x0, bounds)])
        else:
            x0 = _draw_init(cfg, r)

        memo: dict = {}

        def parts(x):
            key = x.tobytes()
            if key not in memo:
                try:
                    theta = unpack_theta(x)
                    memo[key] = objective_parts(theta, data, spectrum, colloc, fhn, cfg.w)
                except (CovarianceError, np.linalg.LinAlgError):
                    memo[key] = (_PENALTY, _PENALTY, _PENALTY)
            return memo[key]

        def fun(x):
            return parts(np.asarray(x, dtype=float))[0]

        trace_obj = [parts(x0)[0]]
        trace_ld = [parts(x0)[1]]
        trace_lphy = [parts(x0)[2]]

        def callback(xk):
            total, ld, lphy = parts(np.asarray(xk, dtype=float))
            trace_obj.append(total)
            trace_ld.append(ld)
            trace_lphy.append(lphy)
            window = cfg.tol_window
            if len(trace_obj) > window:
                old, new = trace_obj[-1 - window], trace_obj[-1]
                if abs(old - new) < cfg.tol * max(1.0, abs(new)):
                    raise StopIteration

        try:
            res = minimize(
                fun, x0, jac=lambda x: finite_diff_gradient(fun, x, cfg.fd_step),
                method="L-BFGS-B", bounds=bounds, callback=callback,
                options={"maxiter": cfg.max_iters, "ftol": 1e-14, "gtol": 1e-10},
            )
            theta_r = unpack_theta(res.x)
            total, ld, lphy = parts(np.asarray(res.x, dtype=float))
            if not np.isfinite(total) or total >= _PENALTY:
                raise TrainingError("objective non-finite at the optimum")
            _, tau2 = loo_residuals(theta_r, data, spectrum)
            traces.append(RestartTrace(
                index=r, theta=theta_r, objective=float(total),
                data_term=float(ld), physics_term=float(lphy),
                tau2_cv=float(tau2),
                converged=bool(res.status in (0, 99)),
                n_iterations=int(res.nit), message=str(res.message),
                trace_objective=tuple(trace_obj), trace_data=tuple(trace_ld),
                trace_physics=tuple(trace_lphy),
            ))
        except (TrainingError, CovarianceError, np.linalg.LinAlgError) as exc:
            traces.append(RestartTrace(
                index=r, theta=unpack_theta(np.clip(x0, [b[0] for b in bounds],
                                                    [b[1] for b in bounds])),
                objective=float("inf"), data_term=float("inf"),
                physics_term=float("inf"), tau2_cv=float("inf"),
                converged=False, n_iterations=0, message=f"failed: {exc}",
                trace_objective=tuple(trace_obj), trace_data=tuple(trace_ld),
                trace_physics=tuple(trace_lphy),
            ))

    usable = [t for t in traces if np.isfinite(t.tau2_cv)]
    if not usable:
        raise TrainingError("all restarts failed or diverged", traces=traces)
    best = min(usable, key=lambda t: t.tau2_cv)

    return TrainReport(
        best_theta=best.theta,
        best_index=best.index,
        model_kind="M-GP" if cfg.w == 0.0 else "P-M-GP",
        w=cfg.w,
        n_col=cfg.n_col if cfg.w > 0.0 else 0,
        tau2_cv=best.tau2_cv,
        restarts=tuple(traces),
        wall_time_s=time.perf_counter() - t_start,
    )
