"""Ground-truth FitzHugh-Nagumo electrodynamics on a mesh.

Semi-implicit (IMEX) stepping: diffusion through the lumped-mass
cotangent operator is treated implicitly with one sparse factorization
per channel, reactions and stimulus currents explicitly.  Includes the
measurement-noise model, training-set subsampling, and the relative
error metrics used to score predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .gp import TrainingSet
from .kroncov import FieldTensor
from .mesh import TriMesh, cotangent_laplacian, geodesic_distances
from .physics import FHNParams, fhn_reaction


class SimulationError(RuntimeError):
    """Numerical failure or invalid simulation configuration."""


@dataclass(frozen=True)
class Stimulus:
    """An additive current source on a set of vertices.

    Active on [onset, onset + duration) and, when ``period`` is set, on
    every periodic repeat of that window.
    """

    vertices: tuple
    amplitude: float = 1.0
    onset: float = 0.0
    duration: float = 5.0
    period: float | None = 400.0

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(int(v) for v in self.vertices))
        if not self.vertices:
            raise SimulationError("stimulus needs at least one vertex")
        if self.duration <= 0.0 or self.amplitude == 0.0:
            raise SimulationError("stimulus needs positive duration and nonzero amplitude")
        if self.period is not None and self.period <= 0.0:
            raise SimulationError("stimulus period must be positive")

    def active(self, t: float) -> bool:
        if t < self.onset:
            return False
        phase = t - self.onset
        if self.period is not None:
            phase = phase % self.period
        return phase < self.duration

    def to_dict(self) -> dict:
        return {"vertices": list(self.vertices), "amplitude": self.amplitude,
                "onset": self.onset, "duration": self.duration, "period": self.period}

    @classmethod
    def from_dict(cls, d: dict) -> "Stimulus":
        return cls(vertices=tuple(d["vertices"]), amplitude=float(d["amplitude"]),
                   onset=float(d["onset"]), duration=float(d["duration"]),
                   period=None if d.get("period") is None else float(d["period"]))


@dataclass(frozen=True)
class SimConfig:
    fhn: FHNParams
    dt: float
    n_steps: int
    stimuli: tuple
    record_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0.0:
            raise SimulationError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise SimulationError("n_steps must be >= 1")
        if self.record_stride < 1:
            raise SimulationError("record_stride must be >= 1")
        object.__setattr__(self, "stimuli", tuple(self.stimuli))


def fhn_simulate(mesh: TriMesh, cfg: SimConfig, operator=None) -> FieldTensor:
    """Integrate the FHN reaction-diffusion system from the rest state.

    ``operator`` may carry a precomputed (stiffness, mass) pair.  States
    are recorded every ``record_stride`` steps starting at step
    record_stride (time stamps k * stride * dt); the all-zero initial
    state is not recorded.
    """
    W, mass = cotangent_laplacian(mesh) if operator is None else operator
    n = mesh.n_vertices
    for stim in cfg.stimuli:
        if max(stim.vertices) >= n or min(stim.vertices) < 0:
            raise SimulationError(f"stimulus vertex out of range: {stim.vertices}")

    p = cfg.fhn
    M = sparse.diags(mass)
    solve_u = solve_v = None
    if p.e1 > 0.0:
        solve_u = splu((M + cfg.dt * p.e1 * (-W)).tocsc()).solve
    if p.e2 > 0.0:
        solve_v = splu((M + cfg.dt * p.e2 * (-W)).tocsc()).solve

    u = np.zeros(n)
    v = np.zeros(n)
    n_rec = cfg.n_steps // cfg.record_stride
    values = np.empty((2, n, n_rec))
    times = np.empty(n_rec)
    rec = 0

    for step in range(cfg.n_steps):
        t = step * cfg.dt
        g1, g2 = fhn_reaction(u, v, p)
        for stim in cfg.stimuli:
            if stim.active(t):
                g1[list(stim.vertices)] += stim.amplitude

        du = cfg.dt * g1
        if np.abs(du).max() > 1.0:
            raise SimulationError(
                f"explicit reaction step exceeded |du| = 1 at step {step}; "
                f"reduce dt (currently {cfg.dt})"
            )
        u_star = u + du
        v_star = v + cfg.dt * g2
        u = solve_u(mass * u_star) if solve_u is not None else u_star
        v = solve_v(mass * v_star) if solve_v is not None else v_star

        if max(np.abs(u).max(), np.abs(v).max()) > 10.0:
            raise SimulationError(f"instability detected at step {step}: field magnitude > 10")

        if (step + 1) % cfg.record_stride == 0:
            values[0, :, rec] = u
            values[1, :, rec] = v
            times[rec] = (step + 1) * cfg.dt
            rec += 1

    return FieldTensor(values=values[:, :, :rec], space_ids=np.arange(n),
                       times=times[:rec])


def add_noise(q: FieldTensor, sigma_xi: float, seed: int) -> FieldTensor:
    """Additive iid Gaussian measurement noise, y = q + sigma_xi * z."""
    if sigma_xi < 0.0 or not np.isfinite(sigma_xi):
        raise SimulationError(f"noise level must be >= 0, got {sigma_xi}")
    if sigma_xi == 0.0:
        return replace(q, values=q.values.copy())
    rng = np.random.default_rng(seed)
    noisy = q.values + sigma_xi * rng.standard_normal(q.values.shape)
    return replace(q, values=noisy)


@dataclass(frozen=True)
class RelativeErrors:
    re_u: float
    re_v: float
    re_total: float

    def to_dict(self) -> dict:
        return {"re_u": self.re_u, "re_v": self.re_v, "re_total": self.re_total}


def relative_error(q_hat, q) -> float:
    """Frobenius relative error of a prediction against its reference."""
    q_hat = np.asarray(q_hat, dtype=float)
    q = np.asarray(q, dtype=float)
    if q_hat.shape != q.shape:
        raise SimulationError(f"shape mismatch: {q_hat.shape} vs {q.shape}")
    ref = float(np.linalg.norm(q.ravel()))
    if ref == 0.0:
        raise SimulationError("reference field has zero norm")
    return float(np.linalg.norm((q_hat - q).ravel()) / ref)


def relative_errors(q_hat, q) -> RelativeErrors:
    """Per-task relative errors and their average RE_total."""
    values_hat = q_hat.values if isinstance(q_hat, FieldTensor) else np.asarray(q_hat)
    values = q.values if isinstance(q, FieldTensor) else np.asarray(q)
    if values_hat.shape != values.shape or values.shape[0] != 2:
        raise SimulationError(
            f"expected matching (2, ...) fields, got {values_hat.shape} vs {values.shape}"
        )
    re_u = relative_error(values_hat[0], values[0])
    re_v = relative_error(values_hat[1], values[1])
    return RelativeErrors(re_u=re_u, re_v=re_v, re_total=0.5 * (re_u + re_v))


def subsample(data: FieldTensor, vertex_picks, time_stride: int, seed: int,
              mesh_ref: str = "") -> TrainingSet:
    """Seeded uniform vertex subsampling plus strided time subsampling.

    ``vertex_picks`` is either a count (sampled without replacement) or
    an explicit index list.
    """
    n = data.n_space
    if isinstance(vertex_picks, (int, np.integer)):
        if vertex_picks > n:
            raise SimulationError(f"cannot pick {vertex_picks} of {n} vertices")
        rng = np.random.default_rng(seed)
        picks = np.sort(rng.choice(n, size=int(vertex_picks), replace=False))
    else:
        picks = np.asarray(vertex_picks, dtype=np.int64)
        if picks.size == 0 or picks.max() >= n or picks.min() < 0:
            raise SimulationError("explicit vertex picks out of range")
        picks = np.sort(picks)
    if time_stride < 1:
        raise SimulationError("time stride must be >= 1")

    space_ids = (data.space_ids if data.space_ids is not None
                 else np.arange(n))[picks]
    times = (data.times if data.times is not None
             else np.arange(data.n_time, dtype=float))[::time_stride]
    values = data.values[:, picks, :][:, :, ::time_stride]
    return TrainingSet(
        mesh_ref=mesh_ref, X_tr=space_ids, T_tr=times,
        Y=FieldTensor(values=values, tasks=data.tasks,
                      space_ids=space_ids, times=times),
    )


def apex_vertex(mesh: TriMesh) -> int:
    """Vertex with extremal coordinate along the longest principal axis."""
    centered = mesh.vertices - mesh.vertices.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    axis = vecs[:, -1]
    return int(np.argmax(centered @ axis))


def stimulus_patch(mesh: TriMesh, center: int, radius_edges: float = 4.0) -> tuple:
    """Vertices within ``radius_edges`` mean edge lengths of ``center``."""
    radius = radius_edges * float(mesh.edge_lengths().mean())
    dist = geodesic_distances(mesh, center)
    return tuple(int(i) for i in np.flatnonzero(dist <= radius))


def protocol_stimuli(mesh: TriMesh, protocol: str, *, amplitude: float = 1.0,
                     duration: float = 5.0, period: float = 400.0,
                     second_onset: float = 180.0,
                     patch_radius_edges: float = 4.0) -> tuple:
    """Stimulus layout for the two data-generation protocols.

    Protocol I paces a patch at the mesh apex; Protocol II adds a second
    source at the geodesically farthest vertex with a delayed onset to
    break the regular wave into disorganized activity.
    """
    apex = apex_vertex(mesh)
    first = Stimulus(vertices=stimulus_patch(mesh, apex, patch_radius_edges),
                     amplitude=amplitude, onset=0.0, duration=duration,
                     period=period)
    if protocol.upper() == "I":
        return (first,)
    if protocol.upper() == "II":
        far = int(np.argmax(geodesic_distances(mesh, apex)))
        second = Stimulus(vertices=stimulus_patch(mesh, far, patch_radius_edges),
                          amplitude=amplitude, onset=second_onset,
                          duration=duration, period=period)
        return (first, second)
    raise SimulationError(f"unknown protocol {protocol!r} (expected 'I' or 'II')")
