"""End-to-end: exporter output driven through the pipeline CLI.

Skipped when the exporter package is not installed; the primary suite is
self-sufficient without it.
"""

import json
import subprocess
import sys

import pytest

from slrl.cli import main
from slrl.store import deserialize

pytest.importorskip("convdump", reason="secondary exporter package not installed")


def _convdump(*args):
    subprocess.run(
        [sys.executable, "-m", "convdump", *args],
        capture_output=True, text=True, check=True,
    )


def test_pipeline_consumes_exporter_manifest(tmp_path):
    model_dir = tmp_path / "model"
    export_dir = tmp_path / "export"
    _convdump("make-toy", "--out", str(model_dir), "--seed", "3")
    _convdump(
        "export", "--model", str(model_dir), "--out", str(export_dir),
        "--num-samples", "32", "--seed", "3",
    )
    manifest_path = export_dir / "manifest.json"
    doc = json.loads(manifest_path.read_text())
    # the exporter leaves hyperparameters to the consumer
    doc["defaults"] = {
        "t": 1.0,
        "tol": 1e-3,
        "max_iter": 80,
        "sv_tol": 1e-3,
        "sgd": {"epochs": 8, "seed": 0},
    }
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True))

    out = tmp_path / "run"
    code = main(
        ["pipeline", "--config", str(manifest_path), "--out", str(out), "--no-figures"]
    )
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert [row["name"] for row in summary["layers"]] == ["conv1", "conv2", "fc1"]
    for row in summary["layers"]:
        assert row["error_ratio"] < 1.0  # reconstruction beats predicting zero
    layer = deserialize(out / "conv1.slrl")
    assert layer.original_shape == (6, 27)
