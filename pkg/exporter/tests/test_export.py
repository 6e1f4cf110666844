"""Export behavior: lowering, sampling, manifest schema, determinism."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from convdump.export import ExportError, export_layer, export_model, im2col, lower_filter, validate_manifest
from convdump.model import LayerDef, ToyModel, load_model, make_toy


def toy(tmp_path, seed=0):
    make_toy(tmp_path / "model", seed=seed)
    return load_model(tmp_path / "model")


def test_1x1_conv_lowering_is_plain_reshape(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.normal(size=(5, 4, 1, 1))
    lowered = lower_filter(w)
    np.testing.assert_array_equal(lowered, w.reshape(5, 4))


def test_exported_pairs_satisfy_gemm_consistency(tmp_path):
    model = toy(tmp_path, seed=1)
    manifest = export_model(model, tmp_path / "out", num_samples=32, seed=1)
    worst = 0.0
    for entry in manifest["layers"]:
        w = np.load(tmp_path / "out" / entry["weights"])
        for xf, yf in zip(entry["samples_x"], entry["samples_y"]):
            x = np.load(tmp_path / "out" / xf)
            y = np.load(tmp_path / "out" / yf)
            z = w @ x
            got = np.maximum(z, 0.0) if entry["activation"] == "relu" else z
            worst = max(worst, np.abs(got - y).max() / max(np.abs(y).max(), 1e-30))
    assert worst <= 1e-10


def test_sample_counts_and_shapes(tmp_path):
    model = toy(tmp_path, seed=2)
    manifest = export_model(model, tmp_path / "out", num_samples=48, seed=2)
    validate_manifest(tmp_path / "out")
    conv1 = manifest["layers"][0]
    assert len(conv1["samples_x"]) == 4  # one pair per image
    x = np.load(tmp_path / "out" / conv1["samples_x"][0])
    assert x.shape == (3 * 3 * 3, 12)  # k^2 c rows, num_samples/images columns
    fc = manifest["layers"][2]
    assert len(fc["samples_x"]) == 1
    xf = np.load(tmp_path / "out" / fc["samples_x"][0])
    assert xf.shape[1] == 4  # one column per image


def test_num_samples_zero_weights_only(tmp_path):
    model = toy(tmp_path, seed=3)
    manifest = export_model(model, tmp_path / "out", num_samples=0, seed=3)
    assert all(not e["samples_x"] for e in manifest["layers"])
    assert manifest["meta"]["sample_free_layers"] == ["conv1", "conv2", "fc1"]
    assert (tmp_path / "out" / "conv1_w.npy").exists()


def test_export_deterministic(tmp_path):
    model = toy(tmp_path, seed=4)
    export_model(model, tmp_path / "a", num_samples=24, seed=9)
    export_model(model, tmp_path / "b", num_samples=24, seed=9)

    def digest(root):
        h = hashlib.sha256()
        for p in sorted(Path(root).rglob("*")):
            if p.is_file():
                h.update(p.name.encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_unsupported_layer_type(tmp_path):
    model = toy(tmp_path, seed=5)
    model.layers[0] = LayerDef("conv1", "pool", model.layers[0].weights)
    with pytest.raises(ExportError):
        export_layer(model, "conv1", 8, tmp_path / "out", np.random.default_rng(0))


def test_im2col_matches_loop_convolution():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(4, 2, 3, 3))
    x = rng.normal(size=(2, 7, 6))
    from convdump.model import conv2d_loop

    direct = conv2d_loop(w, x, stride=2, padding=1)
    via = lower_filter(w) @ im2col(x, kernel=3, stride=2, padding=1)
    assert np.abs(via - direct.reshape(4, -1)).max() <= 1e-12


def test_manifest_matches_consumer_schema(tmp_path):
    model = toy(tmp_path, seed=7)
    export_model(model, tmp_path / "out", num_samples=16, seed=7)
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(manifest) == {"seed", "meta", "layers"}
    for entry in manifest["layers"]:
        assert set(entry) <= {
            "name", "weights", "samples_x", "samples_y", "activation",
            "geometry", "skip", "hyperparams",
        }


def test_validate_manifest_catches_shape_lies(tmp_path):
    model = toy(tmp_path, seed=8)
    export_model(model, tmp_path / "out", num_samples=16, seed=8)
    manifest_path = tmp_path / "out" / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    bad = doc["layers"][0]["samples_x"][0]
    np.save(tmp_path / "out" / bad, np.zeros((2, 2)))
    with pytest.raises(ExportError):
        validate_manifest(tmp_path / "out")
