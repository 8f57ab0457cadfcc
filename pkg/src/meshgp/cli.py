"""Command-line orchestration: simulate, subsample, train, predict,
evaluate, loo.  Every run materializes its full configuration (defaults
included) into an append-only manifest so experiments can be reproduced
from the manifest alone.

Exit codes: 0 ok, 2 config error, 3 simulation failure, 4 training
failure, 5 evaluation failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import yaml

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_TRAINING = 4
EXIT_EVALUATION = 5


class ConfigError(Exception):
    """Missing or malformed configuration."""


class EvaluationError(Exception):
    """Prediction/truth mismatch during evaluation."""


def _load_config(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file does not exist: {p}")
    try:
        cfg = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: top level must be a mapping")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if sec is None:
        raise ConfigError(f"missing config section {name!r}")
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return dict(sec)


def _require(section: dict, key: str, context: str):
    if key not in section or section[key] is None:
        raise ConfigError(f"missing required field {context}.{key}")
    return section[key]


def _resolve_mesh(mesh_cfg: dict):
    """Build or load the mesh; returns (mesh, materialized mesh config)."""
    from .mesh import MeshError, ellipsoid, icosphere, load_mesh, tetrahedron

    if "path" in mesh_cfg and mesh_cfg["path"] is not None:
        try:
            mesh = load_mesh(mesh_cfg["path"])
        except MeshError as exc:
            raise ConfigError(str(exc)) from exc
        return mesh, {"path": str(mesh_cfg["path"])}

    builtin = mesh_cfg.get("builtin")
    if builtin is None:
        raise ConfigError("missing required field mesh.path (or mesh.builtin)")
    if builtin == "icosphere":
        out = {"builtin": "icosphere",
               "subdivisions": int(mesh_cfg.get("subdivisions", 3)),
               "radius": float(mesh_cfg.get("radius", 1.0))}
        return icosphere(out["subdivisions"], out["radius"]), out
    if builtin == "ellipsoid":
        out = {"builtin": "ellipsoid",
               "subdivisions": int(mesh_cfg.get("subdivisions", 3)),
               "radii": [float(r) for r in mesh_cfg.get("radii", (1.0, 1.0, 1.0))]}
        return ellipsoid(out["radii"], out["subdivisions"]), out
    if builtin == "tetrahedron":
        out = {"builtin": "tetrahedron", "scale": float(mesh_cfg.get("scale", 1.0))}
        return tetrahedron(out["scale"]), out
    raise ConfigError(f"unknown mesh.builtin {builtin!r}")


def _resolve_spectrum(cfg: dict, mesh):
    from .mesh import build_spectrum

    spec_cfg = cfg.get("spectrum") or {}
    k = spec_cfg.get("k")
    spectrum = build_spectrum(mesh, None if k is None else int(k))
    return spectrum, {"k": spectrum.n_modes}


def _write_manifest(out_dir: Path, manifest: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifests.jsonl"
    with open(path, "a") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, default=str) + "\n")
    return path


def _manifest(command: str, config: dict, outputs: dict, metrics: dict,
              wall_time: float, seeds: dict) -> dict:
    from .storage import config_hash

    return {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seeds": seeds,
        "outputs": outputs,
        "metrics": metrics,
        "wall_time_s": wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }


def _fhn_from(section: dict):
    from .physics import FHNParams, PhysicsError

    base = FHNParams().to_dict()
    overrides = section.get("fhn") or {}
    unknown = set(overrides) - set(base)
    if unknown:
        raise ConfigError(f"unknown fhn fields: {sorted(unknown)}")
    base.update({k: float(v) for k, v in overrides.items()})
    try:
        return FHNParams.from_dict(base), base
    except PhysicsError as exc:
        raise ConfigError(f"invalid fhn parameters: {exc}") from exc


def cmd_simulate(cfg: dict, out_dir: Path, seed_override) -> dict:
    from .sim import SimConfig, Stimulus, fhn_simulate, protocol_stimuli
    from .storage import config_hash, mesh_digest, save_field

    t0 = time.perf_counter()
    mesh, mesh_used = _resolve_mesh(_section(cfg, "mesh"))
    sec = _section(cfg, "simulate")
    fhn, fhn_used = _fhn_from(sec)
    seed = int(seed_override if seed_override is not None else sec.get("seed", 0))

    used = {
        "protocol": str(sec.get("protocol", "I")),
        "dt": float(_require(sec, "dt", "simulate")),
        "n_steps": int(_require(sec, "n_steps", "simulate")),
        "record_stride": int(sec.get("record_stride", 1)),
        "amplitude": float(sec.get("amplitude", 1.0)),
        "duration": float(sec.get("duration", 5.0)),
        "period": float(sec.get("period", 400.0)),
        "second_onset": float(sec.get("second_onset", 180.0)),
        "patch_radius_edges": float(sec.get("patch_radius_edges", 4.0)),
        "fhn": fhn_used,
        "seed": seed,
        "out": str(sec.get("out", "field.bin")),
    }
    if "stimuli" in sec and sec["stimuli"]:
        stimuli = tuple(Stimulus.from_dict(s) for s in sec["stimuli"])
        used["stimuli"] = [s.to_dict() for s in stimuli]
    else:
        stimuli = protocol_stimuli(
            mesh, used["protocol"], amplitude=used["amplitude"],
            duration=used["duration"], period=used["period"],
            second_onset=used["second_onset"],
            patch_radius_edges=used["patch_radius_edges"])
        used["stimuli"] = [s.to_dict() for s in stimuli]

    sim_cfg = SimConfig(fhn=fhn, dt=used["dt"], n_steps=used["n_steps"],
                        stimuli=stimuli, record_stride=used["record_stride"],
                        seed=seed)
    field = fhn_simulate(mesh, sim_cfg)

    config_used = {"mesh": mesh_used, "simulate": used}
    out_path = out_dir / used["out"]
    out_dir.mkdir(parents=True, exist_ok=True)
    save_field(out_path, field, seed=seed, config_digest=config_hash(config_used),
               kind="simulation", mesh_ref=mesh_digest(mesh))

    manifest = _manifest(
        "simulate", config_used,
        outputs={"field": str(out_path)},
        metrics={"n_recorded": int(field.values.shape[2]),
                 "dims": list(field.values.shape)},
        wall_time=time.perf_counter() - t0,
        seeds={"simulate": seed},
    )
    manifest["mesh_digest"] = mesh_digest(mesh)
    _write_manifest(out_dir, manifest)
    return manifest


def cmd_subsample(cfg: dict, out_dir: Path, seed_override) -> dict:
    from .sim import add_noise, subsample
    from .storage import config_hash, load_field, save_training_set

    t0 = time.perf_counter()
    sec = _section(cfg, "subsample")
    field_path = _require(sec, "field", "subsample")
    field, header = load_field(field_path)

    noise_sec = cfg.get("noise") or {}
    sigma_xi = float(noise_sec.get("sigma_xi", 0.0))
    noise_seed = int(noise_sec.get("seed", 0))

    seed = int(seed_override if seed_override is not None else sec.get("seed", 0))
    used = {
        "field": str(field_path),
        "n_vertices": sec.get("n_vertices"),
        "vertex_ids": sec.get("vertex_ids"),
        "time_stride": int(sec.get("time_stride", 1)),
        "seed": seed,
        "out": str(sec.get("out", "training.bin")),
    }
    if used["vertex_ids"] is None and used["n_vertices"] is None:
        raise ConfigError("missing required field subsample.n_vertices (or vertex_ids)")

    noisy = add_noise(field, sigma_xi, noise_seed)
    picks = used["vertex_ids"] if used["vertex_ids"] is not None else int(used["n_vertices"])
    training = subsample(noisy, picks, used["time_stride"], seed,
                         mesh_ref=header.get("mesh_ref", ""))

    config_used = {"subsample": used,
                   "noise": {"sigma_xi": sigma_xi, "seed": noise_seed}}
    out_path = out_dir / used["out"]
    out_dir.mkdir(parents=True, exist_ok=True)
    save_training_set(out_path, training, seed=seed,
                      config_digest=config_hash(config_used))

    manifest = _manifest(
        "subsample", config_used,
        outputs={"training": str(out_path)},
        metrics={"n_space": training.n_space, "n_time": training.n_time},
        wall_time=time.perf_counter() - t0,
        seeds={"subsample": seed, "noise": noise_seed},
    )
    _write_manifest(out_dir, manifest)
    return manifest


def _train_config_from(sec: dict, seed: int, spatial_scale: float, w: float):
    from .train import TrainConfig

    return TrainConfig(
        restarts=int(sec.get("restarts", 3)),
        max_iters=int(sec.get("max_iters", 80)),
        tol=float(sec.get("tol", 1e-6)),
        fd_step=float(sec.get("fd_step", 1e-5)),
        w=float(w),
        n_col=int(sec.get("n_col", 200)),
        seed=seed,
        spatial_scale=spatial_scale,
    )


def cmd_train(cfg: dict, out_dir: Path, seed_override) -> dict:
    from .storage import config_hash, load_training_set, mesh_digest, save_model
    from .train import optimize

    t0 = time.perf_counter()
    mesh, mesh_used = _resolve_mesh(_section(cfg, "mesh"))
    spectrum, spec_used = _resolve_spectrum(cfg, mesh)
    sec = _section(cfg, "train")
    fhn, fhn_used = _fhn_from(sec)
    data = load_training_set(_require(sec, "training", "train"))
    seed = int(seed_override if seed_override is not None else sec.get("seed", 0))

    w_raw = sec.get("w", 0.0)
    sweep = [float(w) for w in w_raw] if isinstance(w_raw, (list, tuple)) else [float(w_raw)]
    spatial_scale = mesh.diameter()

    reports = []
    for w in sweep:
        tc = _train_config_from(sec, seed, spatial_scale, w)
        reports.append(optimize(data, spectrum, fhn if w > 0 else fhn, tc))
    best = min(reports, key=lambda r: r.tau2_cv)

    used = {
        "training": str(sec.get("training")),
        "w": sweep if len(sweep) > 1 else sweep[0],
        "n_col": int(sec.get("n_col", 200)),
        "restarts": int(sec.get("restarts", 3)),
        "max_iters": int(sec.get("max_iters", 80)),
        "tol": float(sec.get("tol", 1e-6)),
        "fd_step": float(sec.get("fd_step", 1e-5)),
        "seed": seed,
        "fhn": fhn_used,
        "model_out": str(sec.get("model_out", "model.json")),
        "report_out": str(sec.get("report_out", "report.json")),
        "spatial_scale": spatial_scale,
    }
    config_used = {"mesh": mesh_used, "spectrum": spec_used, "train": used}

    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / used["model_out"]
    report_path = out_dir / used["report_out"]
    spectrum_ref = {"mesh_digest": mesh_digest(mesh), "k": spectrum.n_modes,
                    "mesh": mesh_used}
    save_model(model_path, best.best_theta, spectrum_ref=spectrum_ref)
    report_doc = {"selected": best.to_dict(),
                  "sweep": [{"w": r.w, "tau2_cv": r.tau2_cv,
                             "model_kind": r.model_kind} for r in reports]}
    report_path.write_text(json.dumps(report_doc, indent=2, sort_keys=True) + "\n")

    manifest = _manifest(
        "train", config_used,
        outputs={"model": str(model_path), "report": str(report_path)},
        metrics={"model_kind": best.model_kind, "w": best.w,
                 "n_col": best.n_col, "tau2_cv": best.tau2_cv,
                 "objective": min(t.objective for t in best.restarts
                                  if t.objective == t.objective)},
        wall_time=time.perf_counter() - t0,
        seeds={"train": seed},
    )
    manifest["mesh_digest"] = spectrum_ref["mesh_digest"]
    _write_manifest(out_dir, manifest)
    return manifest


def _query_grid(sec: dict, data, mesh):
    import numpy as np

    vertices = sec.get("vertices", "all")
    if isinstance(vertices, str):
        if vertices != "all":
            raise ConfigError(f"predict.vertices must be 'all' or a list, got {vertices!r}")
        vertices = np.arange(mesh.n_vertices)
    else:
        vertices = np.asarray([int(v) for v in vertices], dtype=np.int64)
    times = sec.get("times", "training")
    if isinstance(times, str):
        if times != "training":
            raise ConfigError(f"predict.times must be 'training' or a list, got {times!r}")
        times = data.T_tr
    else:
        times = np.asarray([float(t) for t in times])
    return vertices, times


def cmd_predict(cfg: dict, out_dir: Path, seed_override) -> dict:
    from .gp import posterior_mean
    from .storage import (config_hash, field_to_csv, load_model,
                          load_training_set, mesh_digest, save_field)

    t0 = time.perf_counter()
    mesh, mesh_used = _resolve_mesh(_section(cfg, "mesh"))
    spectrum, spec_used = _resolve_spectrum(cfg, mesh)
    sec = _section(cfg, "predict")
    theta, model_doc = load_model(_require(sec, "model", "predict"))
    data = load_training_set(_require(sec, "training", "predict"))

    digest = mesh_digest(mesh)
    ref = model_doc["spectrum_ref"]
    if ref.get("mesh_digest") not in (None, digest):
        raise ConfigError(
            "model was trained on a different mesh "
            f"(model {ref.get('mesh_digest')[:12]}..., config {digest[:12]}...)"
        )

    vertices, times = _query_grid(sec, data, mesh)
    mean = posterior_mean(theta, data, spectrum, vertices, times)

    used = {
        "model": str(sec.get("model")), "training": str(sec.get("training")),
        "vertices": sec.get("vertices", "all"),
        "times": sec.get("times", "training"),
        "out": str(sec.get("out", "prediction.bin")),
        "csv_out": sec.get("csv_out"),
    }
    config_used = {"mesh": mesh_used, "spectrum": spec_used, "predict": used}

    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / used["out"]
    save_field(out_path, mean, config_digest=config_hash(config_used),
               kind="prediction", mesh_ref=digest)
    outputs = {"prediction": str(out_path)}
    if used["csv_out"]:
        csv_path = out_dir / used["csv_out"]
        field_to_csv(csv_path, mean)
        outputs["csv"] = str(csv_path)

    manifest = _manifest(
        "predict", config_used, outputs=outputs,
        metrics={"dims": list(mean.values.shape)},
        wall_time=time.perf_counter() - t0, seeds={},
    )
    manifest["mesh_digest"] = digest
    _write_manifest(out_dir, manifest)
    return manifest


def cmd_evaluate(cfg: dict, out_dir: Path, seed_override) -> dict:
    import numpy as np

    from .sim import SimulationError, relative_errors
    from .storage import StorageError, load_field

    t0 = time.perf_counter()
    sec = _section(cfg, "evaluate")
    pairs = sec.get("pairs")
    if not pairs:
        if "prediction" in sec and "truth" in sec:
            pairs = [{"prediction": sec["prediction"], "truth": sec["truth"]}]
        else:
            raise ConfigError("missing required field evaluate.pairs")

    per_run = []
    try:
        for pair in pairs:
            pred, _ = load_field(_require(pair, "prediction", "evaluate.pairs"))
            truth_field, truth_header = load_field(_require(pair, "truth", "evaluate.pairs"))
            truth_values = truth_field.values
            if pred.values.shape != truth_values.shape:
                # tolerate a truth field covering more vertices/times than the
                # prediction if index sets allow exact alignment
                truth_values = _align_truth(pred, truth_field)
            res = relative_errors(pred.values, truth_values)
            per_run.append(res.to_dict())
    except (StorageError, SimulationError) as exc:
        raise EvaluationError(str(exc)) from exc

    metrics = {"runs": per_run}
    for key in ("re_u", "re_v", "re_total"):
        values = np.array([r[key] for r in per_run])
        metrics[key] = {
            "mean": float(values.mean()),
            "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
            "n": int(len(values)),
        }

    used = {"pairs": [{"prediction": str(p["prediction"]), "truth": str(p["truth"])}
                      for p in pairs],
            "out": str(sec.get("out", "metrics.json"))}
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / used["out"]
    out_path.write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")

    manifest = _manifest(
        "evaluate", {"evaluate": used}, outputs={"metrics": str(out_path)},
        metrics={k: metrics[k] for k in ("re_u", "re_v", "re_total")},
        wall_time=time.perf_counter() - t0, seeds={},
    )
    _write_manifest(out_dir, manifest)
    return manifest


def _align_truth(pred, truth):
    """Extract the prediction's (space, time) subgrid from a larger truth field."""
    import numpy as np

    if pred.space_ids is None or truth.space_ids is None \
            or pred.times is None or truth.times is None:
        raise EvaluationError(
            f"dimension mismatch: prediction {pred.values.shape} vs truth "
            f"{truth.values.shape} and no index sets to align on"
        )
    space_pos = {int(v): i for i, v in enumerate(truth.space_ids)}
    try:
        rows = np.array([space_pos[int(v)] for v in pred.space_ids])
    except KeyError as exc:
        raise EvaluationError(f"prediction vertex {exc} not present in truth") from exc
    time_pos = {}
    for j, t in enumerate(truth.times):
        time_pos[round(float(t), 9)] = j
    try:
        cols = np.array([time_pos[round(float(t), 9)] for t in pred.times])
    except KeyError as exc:
        raise EvaluationError(f"prediction time {exc} not present in truth") from exc
    return truth.values[:, rows, :][:, :, cols]


def cmd_loo(cfg: dict, out_dir: Path, seed_override) -> dict:
    from .gp import loo_residuals
    from .storage import load_model, load_training_set

    t0 = time.perf_counter()
    mesh, mesh_used = _resolve_mesh(_section(cfg, "mesh"))
    spectrum, spec_used = _resolve_spectrum(cfg, mesh)
    sec = _section(cfg, "loo")
    theta, _ = load_model(_require(sec, "model", "loo"))
    data = load_training_set(_require(sec, "training", "loo"))

    _, tau2 = loo_residuals(theta, data, spectrum)
    used = {"model": str(sec.get("model")), "training": str(sec.get("training")),
            "out": str(sec.get("out", "loo.json"))}
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / used["out"]
    out_path.write_text(json.dumps({"tau2_cv": tau2}, indent=2) + "\n")

    manifest = _manifest(
        "loo", {"mesh": mesh_used, "spectrum": spec_used, "loo": used},
        outputs={"loo": str(out_path)}, metrics={"tau2_cv": tau2},
        wall_time=time.perf_counter() - t0, seeds={},
    )
    _write_manifest(out_dir, manifest)
    return manifest


_COMMANDS = {
    "simulate": cmd_simulate,
    "subsample": cmd_subsample,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "loo": cmd_loo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshgp",
        description="Mesh-based multi-task GP experiments: simulate ground "
                    "truth, train, predict, and score.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS/OpenMP thread count (set before numpy loads)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        cfg = _load_config(args.config)
        manifest = _COMMANDS[args.command](cfg, Path(args.out), args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVALUATION
    except Exception as exc:
        from .mesh import MeshError
        from .sim import SimulationError
        from .storage import StorageError
        from .train import TrainingError

        if isinstance(exc, SimulationError):
            print(f"simulation error: {exc}", file=sys.stderr)
            return EXIT_SIMULATION
        if isinstance(exc, TrainingError):
            print(f"training error: {exc}", file=sys.stderr)
            return EXIT_TRAINING
        if isinstance(exc, (MeshError, StorageError)):
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise

    print(json.dumps({"command": manifest["command"],
                      "metrics": manifest["metrics"],
                      "outputs": manifest["outputs"]}, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
