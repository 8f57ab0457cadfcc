"""On-disk formats: the binary field container (one JSON header line plus
little-endian float64 payload), training-set and model files, CSV export,
and the digests recorded in experiment manifests."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .gp import TrainingSet
from .kernels import Hyperparams
from .kroncov import FieldTensor
from .mesh import TriMesh


class StorageError(ValueError):
    """Malformed container or model file."""


_MAGIC = "meshgp-field-v1"


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding of a config mapping."""
    encoded = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(encoded.encode()).hexdigest()


def mesh_digest(mesh: TriMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.faces).tobytes())
    return h.hexdigest()


def save_field(path, field: FieldTensor, *, seed=None, config_digest=None,
               kind: str = "field", mesh_ref: str = "", extra: dict | None = None):
    """Write a FieldTensor as header line + raw float64 payload."""
    header = {
        "format": _MAGIC,
        "kind": kind,
        "dims": list(field.values.shape),
        "tasks": list(field.tasks),
        "n_vertices": int(field.values.shape[1]),
        "space_ids": None if field.space_ids is None else field.space_ids.tolist(),
        "times": None if field.times is None else field.times.tolist(),
        "seed": seed,
        "config_hash": config_digest,
        "mesh_ref": mesh_ref,
    }
    if extra:
        header.update(extra)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode())
        fh.write(b"\n")
        fh.write(field.values.astype("<f8").tobytes())


def load_field(path):
    """Read a field container; returns (FieldTensor, header dict)."""
    p = Path(path)
    if not p.exists():
        raise StorageError(f"field file does not exist: {p}")
    with open(p, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise StorageError(f"{p}: malformed header line: {exc}") from exc
    for key in ("format", "dims", "tasks"):
        if key not in header:
            raise StorageError(f"{p}: header missing field {key!r}")
    if header["format"] != _MAGIC:
        raise StorageError(f"{p}: header field 'format' is {header['format']!r}")
    dims = header["dims"]
    if (not isinstance(dims, list) or len(dims) != 3
            or any(not isinstance(d, int) or d < 1 for d in dims)):
        raise StorageError(f"{p}: header field 'dims' is invalid: {dims}")
    expected = 8 * int(np.prod(dims))
    if len(payload) != expected:
        raise StorageError(
            f"{p}: payload length {len(payload)} does not match header field "
            f"'dims' ({expected} bytes expected)"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    space_ids = header.get("space_ids")
    times = header.get("times")
    field = FieldTensor(
        values=values, tasks=tuple(header["tasks"]),
        space_ids=None if space_ids is None else np.asarray(space_ids, dtype=np.int64),
        times=None if times is None else np.asarray(times, dtype=float),
    )
    return field, header


def field_to_csv(path, field: FieldTensor):
    """Long-format CSV: task, vertex, time, value."""
    space = (field.space_ids if field.space_ids is not None
             else np.arange(field.values.shape[1]))
    times = (field.times if field.times is not None
             else np.arange(field.values.shape[2], dtype=float))
    with open(path, "w") as fh:
        fh.write("task,vertex,time,value\n")
        for f, label in enumerate(field.tasks):
            for i, vid in enumerate(space):
                for j, t in enumerate(times):
                    fh.write(f"{label},{int(vid)},{float(t)!r},"
                             f"{float(field.values[f, i, j])!r}\n")


def save_training_set(path, data: TrainingSet, *, seed=None, config_digest=None):
    save_field(path, data.Y, seed=seed, config_digest=config_digest,
               kind="training", mesh_ref=data.mesh_ref)


def load_training_set(path) -> TrainingSet:
    field, header = load_field(path)
    if header.get("kind") != "training":
        raise StorageError(f"{path}: header field 'kind' is not 'training'")
    if field.space_ids is None or field.times is None:
        raise StorageError(f"{path}: training container needs space_ids and times")
    return TrainingSet(mesh_ref=header.get("mesh_ref", ""),
                       X_tr=field.space_ids, T_tr=field.times, Y=field)


def save_model(path, theta: Hyperparams, *, spectrum_ref: dict,
               report: dict | None = None):
    """Model file: the 9 parameters plus the spectrum it was trained against."""
    doc = {"format": "meshgp-model-v1", "theta": theta.to_dict(),
           "spectrum_ref": spectrum_ref}
    if report is not None:
        doc["report"] = report
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path):
    p = Path(path)
    if not p.exists():
        raise StorageError(f"model file does not exist: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise StorageError(f"{p}: not valid JSON: {exc}") from exc
    if doc.get("format") != "meshgp-model-v1":
        raise StorageError(f"{p}: header field 'format' is {doc.get('format')!r}")
    for key in ("theta", "spectrum_ref"):
        if key not in doc:
            raise StorageError(f"{p}: model file missing field {key!r}")
    try:
        theta = Hyperparams.from_dict(doc["theta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise StorageError(f"{p}: bad theta block: {exc}") from exc
    return theta, doc
