"""CLI verbs end to end, with the documented exit codes."""

import json

import numpy as np
import pytest

from slrl.arrayio import write_array_file
from slrl.cli import main
from slrl.store import deserialize
from slrl.tensor import relu

from _synth import write_stack_config


@pytest.fixture
def layer_files(tmp_path):
    rng = np.random.default_rng(0)
    w = rng.normal(size=(8, 12))
    xs, ys = [], []
    for i in range(4):
        x = 0.3 * rng.normal(size=(12, 10))
        write_array_file(tmp_path / f"x{i}.npy", x)
        write_array_file(tmp_path / f"y{i}.npy", relu(w @ x))
        xs.append(str(tmp_path / f"x{i}.npy"))
        ys.append(str(tmp_path / f"y{i}.npy"))
    write_array_file(tmp_path / "w.npy", w)
    return tmp_path, str(tmp_path / "w.npy"), xs, ys


def test_decompose_writes_artifacts(layer_files, capsys):
    tmp_path, w, xs, ys = layer_files
    out = tmp_path / "out"
    code = main(
        ["decompose", "--weights", w, "--samples-x", *xs, "--samples-y", *ys,
         "--name", "conv1", "--out", str(out), "--lambda1", "0.3",
         "--lambda2", "0.75", "--t", "1.0", "--max-iter", "60"]
    )
    assert code == 0
    assert (out / "conv1.slrl").exists()
    assert (out / "conv1_history.csv").exists()
    assert (out / "conv1_convergence.png").exists()
    assert "cr_total" in capsys.readouterr().out


def test_decompose_sparse_only_mode(layer_files):
    tmp_path, w, xs, ys = layer_files
    out = tmp_path / "so"
    code = main(
        ["decompose", "--weights", w, "--samples-x", *xs, "--samples-y", *ys,
         "--out", str(out), "--mode", "sparse-only", "--t", "1.0",
         "--max-iter", "40", "--no-figures"]
    )
    assert code == 0
    layer = deserialize(out / "layer.slrl")
    assert layer.lowrank is None and layer.dense_b is None


def test_pipeline_and_inspect_and_csr(tmp_path, capsys):
    config_path, *_ = write_stack_config(
        tmp_path / "in", seed=2, dims=(20, 14), lambda_first=0.3
    )
    out = tmp_path / "run"
    code = main(["pipeline", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    assert (out / "summary.json").exists()
    assert (out / "summary.csv").exists()
    assert (out / "layer0_convergence.png").exists()
    assert (out / "compression_rates.png").exists()
    capsys.readouterr()

    code = main(["inspect", "--layer", str(out / "layer0.slrl"), "--json"])
    assert code == 0
    info = json.loads(capsys.readouterr().out)
    assert info["shape"] == [14, 20]

    code = main(["export-csr", "--layer", str(out / "layer0.slrl"),
                 "--out", str(tmp_path / "csr")])
    assert code == 0
    for suffix in ("indptr", "indices", "data"):
        assert (tmp_path / f"csr_{suffix}.npy").exists()


def test_bench_verb(layer_files, capsys):
    tmp_path, w, xs, ys = layer_files
    out = tmp_path / "out"
    main(["decompose", "--weights", w, "--samples-x", *xs, "--samples-y", *ys,
          "--name", "conv1", "--out", str(out), "--t", "1.0",
          "--max-iter", "40", "--no-figures"])
    capsys.readouterr()
    code = main(["bench", "--layer", str(out / "conv1.slrl"), "--weights", w,
                 "--input", xs[0], "--reps", "5", "--out", str(out)])
    assert code == 0
    line = capsys.readouterr().out.strip()
    payload = json.loads(line)
    assert payload["speedup"] > 0
    assert (out / "bench.jsonl").exists()
    assert (out / "speedup.png").exists()


def test_compare_nl_verb(layer_files):
    tmp_path, w, xs, ys = layer_files
    out = tmp_path / "cmp"
    code = main(
        ["compare-nl", "--weights", w, "--samples-x", *xs,
         "--lambda1-grid", "0.3,0.6", "--t", "1.0", "--max-iter", "40",
         "--out", str(out)]
    )
    assert code == 0
    header = (out / "compare_nl.csv").read_text().splitlines()[0]
    assert header.startswith("lambda1,lambda2,activation")
    assert (out / "compare_nl.png").exists()


def test_exit_code_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"layers": [{"name": "x", "weights": "w.npy"}], "oops": 1}))
    assert main(["pipeline", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_exit_code_io_error(tmp_path):
    missing = tmp_path / "missing.json"
    assert main(["pipeline", "--config", str(missing), "--out", str(tmp_path / "o")]) == 4
    assert main(["inspect", "--layer", str(tmp_path / "no.slrl")]) == 4


def test_exit_code_numerical_failure(tmp_path):
    config_path, *_ = write_stack_config(
        tmp_path / "in", seed=3, dims=(20, 14), lambda_first=0.3
    )
    doc = json.loads(config_path.read_text())
    doc["defaults"]["sgd"] = {"learning_rate": 100.0, "epochs": 20, "seed": 0}
    config_path.write_text(json.dumps(doc))
    code = main(["pipeline", "--config", str(config_path), "--out", str(tmp_path / "o")])
    assert code == 3


def test_exit_code_malformed_npy(tmp_path):
    w = tmp_path / "w.npy"
    w.write_bytes(b"this is not an npy file")
    code = main(["decompose", "--weights", str(w), "--out", str(tmp_path / "o")])
    assert code == 4


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["no-such-verb"])
    assert info.value.code == 2


def test_blowup_state_dump(tmp_path):
    from slrl.cli import dump_blowup_state
    from slrl.errors import BlowupError

    exc = BlowupError("boom", iteration=12, state={"a": np.ones((2, 2))})
    path = dump_blowup_state(exc, tmp_path)
    assert path.name == "blowup_iter12.npz"
    dumped = np.load(path)
    np.testing.assert_array_equal(dumped["a"], np.ones((2, 2)))
