import json

import numpy as np
import pytest

from meshgp.gp import TrainingSet
from meshgp.kernels import Hyperparams
from meshgp.kroncov import FieldTensor
from meshgp.mesh import icosphere, tetrahedron
from meshgp.storage import (
    StorageError,
    config_hash,
    field_to_csv,
    load_field,
    load_model,
    load_training_set,
    mesh_digest,
    save_field,
    save_model,
    save_training_set,
)

THETA = Hyperparams(sigma_m=1.0, l_s=2.0, sigma_a=0.5, l_t=10.0,
                    beta11=1.0, beta21=-0.3, beta22=0.9,
                    sigma2_u_eps=0.01, sigma2_v_eps=0.02)


class TestFieldContainer:
    def test_round_trip(self, tmp_path, rng):
        field = FieldTensor(values=rng.standard_normal((2, 5, 7)),
                            space_ids=np.arange(5), times=np.linspace(0, 6, 7))
        path = tmp_path / "field.bin"
        save_field(path, field, seed=3, config_digest="abc", kind="simulation")
        loaded, header = load_field(path)
        np.testing.assert_array_equal(loaded.values, field.values)
        np.testing.assert_array_equal(loaded.space_ids, field.space_ids)
        np.testing.assert_array_equal(loaded.times, field.times)
        assert header["seed"] == 3
        assert header["config_hash"] == "abc"
        assert header["n_vertices"] == 5

    def test_header_is_json_line(self, tmp_path, rng):
        field = FieldTensor(values=rng.standard_normal((2, 2, 2)))
        path = tmp_path / "f.bin"
        save_field(path, field)
        first_line = open(path, "rb").readline()
        header = json.loads(first_line)
        assert header["dims"] == [2, 2, 2]

    def test_payload_is_little_endian_f64(self, tmp_path):
        values = np.arange(8.0).reshape(2, 2, 2)
        path = tmp_path / "f.bin"
        save_field(path, FieldTensor(values=values))
        raw = open(path, "rb").read()
        payload = raw.split(b"\n", 1)[1]
        np.testing.assert_array_equal(
            np.frombuffer(payload, "<f8"), values.ravel())

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError, match="does not exist"):
            load_field(tmp_path / "nope.bin")

    def test_malformed_header_names_field(self, tmp_path, rng):
        field = FieldTensor(values=rng.standard_normal((2, 2, 2)))
        path = tmp_path / "f.bin"
        save_field(path, field)
        raw = open(path, "rb").read()
        header_line, payload = raw.split(b"\n", 1)
        header = json.loads(header_line)
        del header["dims"]
        with open(path, "wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n" + payload)
        with pytest.raises(StorageError, match="'dims'"):
            load_field(path)

    def test_truncated_payload(self, tmp_path, rng):
        field = FieldTensor(values=rng.standard_normal((2, 3, 3)))
        path = tmp_path / "f.bin"
        save_field(path, field)
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw[:-8])
        with pytest.raises(StorageError, match="payload length"):
            load_field(path)

    def test_csv_export(self, tmp_path):
        field = FieldTensor(values=np.arange(8.0).reshape(2, 2, 2),
                            space_ids=np.array([4, 9]), times=np.array([0.5, 1.5]))
        path = tmp_path / "f.csv"
        field_to_csv(path, field)
        lines = path.read_text().splitlines()
        assert lines[0] == "task,vertex,time,value"
        assert lines[1] == "u,4,0.5,0.0"
        assert len(lines) == 1 + 8


class TestTrainingSetContainer:
    def test_round_trip(self, tmp_path, rng):
        X = np.array([1, 4, 7])
        T = np.array([0.0, 2.0, 4.0, 8.0])
        data = TrainingSet(mesh_ref="digest123", X_tr=X, T_tr=T,
                           Y=FieldTensor(values=rng.standard_normal((2, 3, 4)),
                                         space_ids=X, times=T))
        path = tmp_path / "train.bin"
        save_training_set(path, data, seed=1)
        loaded = load_training_set(path)
        assert loaded.mesh_ref == "digest123"
        np.testing.assert_array_equal(loaded.X_tr, X)
        np.testing.assert_array_equal(loaded.Y.values, data.Y.values)

    def test_wrong_kind_rejected(self, tmp_path, rng):
        field = FieldTensor(values=rng.standard_normal((2, 2, 2)),
                            space_ids=np.arange(2), times=np.arange(2.0))
        path = tmp_path / "f.bin"
        save_field(path, field, kind="simulation")
        with pytest.raises(StorageError, match="kind"):
            load_training_set(path)


class TestModelFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "model.json"
        save_model(path, THETA, spectrum_ref={"mesh_digest": "d", "k": 30})
        theta, doc = load_model(path)
        assert theta == THETA
        assert doc["spectrum_ref"]["k"] == 30

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"format": "meshgp-model-v1", "theta": THETA.to_dict()}))
        with pytest.raises(StorageError, match="spectrum_ref"):
            load_model(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{broken")
        with pytest.raises(StorageError, match="not valid JSON"):
            load_model(path)


class TestDigests:
    def test_config_hash_stable_under_key_order(self):
        assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_mesh_digest_sensitivity(self):
        a = mesh_digest(tetrahedron())
        b = mesh_digest(tetrahedron(scale=2.0))
        c = mesh_digest(icosphere(0))
        assert len({a, b, c}) == 3
        assert a == mesh_digest(tetrahedron())
