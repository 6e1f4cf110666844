"""Multi-layer driver: config parsing, per-layer jobs, reconstruction strategies.

A pipeline config is a JSON document; unknown keys anywhere are an error.

    {
      "seed": 0,
      "out_dir": "runs/demo",            # optional, CLI --out overrides
      "meta": { ... },                   # free-form provenance block
      "defaults": { hyperparameter defaults, see HP_KEYS / PACK_KEYS / SGD_KEYS },
      "layers": [
        {
          "name": "conv1",
          "weights": "w.npy",
          "samples_x": ["x0.npy", ...],
          "samples_y": ["y0.npy", ...],
          "activation": "relu",          # or "identity"
          "skip": false,                 # pass layer through untouched (CR 100%)
          "geometry": { ... },           # informational
          "hyperparams": { overrides }
        }, ...
      ]
    }

Layer order must be network order.  The symmetric strategy decomposes
each layer against its recorded inputs; the asymmetric strategy feeds
layer k the inputs obtained by pushing the raw samples through the
already-compressed layers 1..k-1 (inherently sequential), while targets
stay the clean recorded responses, so earlier approximation error is
compensated rather than compounded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .admm import HyperParams, LayerProblem, decompose, reconstruction_error
from .arrayio import read_array_file
from .bench import forward_compressed
from .errors import ConfigError
from .sgd import SgdConfig
from .store import CompressedLayer, build_layer, compression_rate, passthrough_layer, serialize
from .tensor import apply_activation, relu

TOP_KEYS = {"seed", "out_dir", "meta", "defaults", "layers"}
LAYER_KEYS = {
    "name",
    "weights",
    "samples_x",
    "samples_y",
    "activation",
    "skip",
    "geometry",
    "hyperparams",
}
HP_KEYS = {"lambda1", "lambda2", "t", "tau", "alpha", "tol", "max_iter", "mode", "sgd"}
PACK_KEYS = {"zero_tol", "sv_tol"}
SGD_KEYS = {"learning_rate", "momentum", "epochs", "batch_size", "seed"}

STRATEGIES = ("symmetric", "asymmetric")


def version_string() -> str:
    return f"slrl-{__version__}"


def _reject_unknown(mapping: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


@dataclass
class LayerConfig:
    name: str
    weights: Path
    samples_x: list
    samples_y: list
    activation: str = "relu"
    skip: bool = False
    geometry: dict | None = None
    hp: HyperParams | None = None  # resolved against defaults
    zero_tol: float = 0.0
    sv_tol: float = 1e-5  # termination noise sits below this at tol ~ 1e-4


@dataclass
class PipelineConfig:
    seed: int
    layers: list
    out_dir: Path | None = None
    meta: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)  # resolved echo for provenance


def _parse_sgd(block: dict, where: str, fallback: SgdConfig) -> SgdConfig:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(block, SGD_KEYS, where)
    merged = {
        "learning_rate": block.get("learning_rate", fallback.learning_rate),
        "momentum": block.get("momentum", fallback.momentum),
        "epochs": block.get("epochs", fallback.epochs),
        "batch_size": block.get("batch_size", fallback.batch_size),
        "seed": block.get("seed", fallback.seed),
    }
    return SgdConfig(**merged)


def _parse_hp(block: dict, where: str, fallback: HyperParams, pack: dict) -> HyperParams:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    _reject_unknown(block, HP_KEYS | PACK_KEYS, where)
    for key in PACK_KEYS:
        if key in block:
            pack[key] = float(block[key])
    sgd = fallback.sgd
    if "sgd" in block:
        sgd = _parse_sgd(block["sgd"], f"{where}.sgd", sgd)
    mode = block.get("mode", fallback.mode)
    if isinstance(mode, str):
        mode = mode.replace("-", "_")
    return HyperParams(
        lambda1=float(block.get("lambda1", fallback.lambda1)),
        lambda2=float(block.get("lambda2", fallback.lambda2)),
        t=float(block.get("t", fallback.t)),
        tau=float(block.get("tau", fallback.tau)),
        alpha=float(block.get("alpha", fallback.alpha)),
        tol=float(block.get("tol", fallback.tol)),
        max_iter=int(block.get("max_iter", fallback.max_iter)),
        sgd=sgd,
        mode=mode,
    )


_BASE_HP = None


def _base_hp() -> HyperParams:
    global _BASE_HP
    if _BASE_HP is None:
        _BASE_HP = HyperParams(lambda1=0.1, lambda2=0.275)
    return _BASE_HP


def parse_config(doc: dict, base_dir: Path) -> PipelineConfig:
    """Validate and resolve a config document; paths resolve against base_dir."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(doc, TOP_KEYS, "config")
    if "layers" not in doc or not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ConfigError("config must list at least one layer")
    seed = int(doc.get("seed", 0))
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise ConfigError("meta must be an object")

    pack_defaults = {"zero_tol": 0.0, "sv_tol": 1e-5}
    defaults = _parse_hp(doc.get("defaults", {}), "defaults", _base_hp(), pack_defaults)

    layers = []
    for i, entry in enumerate(doc["layers"]):
        where = f"layers[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where} must be an object")
        _reject_unknown(entry, LAYER_KEYS, where)
        for required in ("name", "weights"):
            if required not in entry:
                raise ConfigError(f"{where} is missing {required!r}")
        sx = entry.get("samples_x", [])
        sy = entry.get("samples_y", [])
        if len(sx) != len(sy):
            raise ConfigError(
                f"{where}: samples_x has {len(sx)} entries, samples_y has {len(sy)}"
            )
        activation = entry.get("activation", "relu")
        pack = dict(pack_defaults)
        hp = defaults
        if "hyperparams" in entry:
            hp = _parse_hp(entry["hyperparams"], f"{where}.hyperparams", defaults, pack)
        layers.append(
            LayerConfig(
                name=str(entry["name"]),
                weights=base_dir / entry["weights"],
                samples_x=[base_dir / p for p in sx],
                samples_y=[base_dir / p for p in sy],
                activation=activation,
                skip=bool(entry.get("skip", False)),
                geometry=entry.get("geometry"),
                hp=hp,
                zero_tol=pack["zero_tol"],
                sv_tol=pack["sv_tol"],
            )
        )
    out_dir = doc.get("out_dir")
    return PipelineConfig(
        seed=seed,
        layers=layers,
        out_dir=base_dir / out_dir if out_dir else None,
        meta=meta,
        raw=doc,
    )


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc, path.parent)


def load_layer_problem(layer: LayerConfig, samples_x=None) -> LayerProblem:
    """Read one layer's arrays; ``samples_x`` overrides the recorded inputs."""
    w = read_array_file(layer.weights)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    xs = samples_x
    if xs is None:
        xs = [read_array_file(p) for p in layer.samples_x]
    ys = [read_array_file(p) for p in layer.samples_y]
    return LayerProblem(w=w, samples=list(zip(xs, ys)), activation=layer.activation)


def _layer_seed(pipeline_seed: int, index: int) -> int:
    return pipeline_seed * 100003 + index


def process_layer(
    layer: LayerConfig,
    problem: LayerProblem,
    *,
    seed: int,
    strategy: str,
):
    """Decompose and package one layer; returns (artifact, summary row, state)."""
    hp = layer.hp if layer.hp is not None else _base_hp()
    if layer.skip:
        packaged = passthrough_layer(
            layer.name,
            problem.w,
            metadata={"strategy": strategy, "seed": seed, "version": version_string()},
        )
        rates = compression_rate(packaged)
        row = {
            "name": layer.name,
            "skipped": True,
            "mode": hp.mode,
            "iterations": 0,
            "converged": True,
            "rel_residual": 0.0,
            "error": 0.0,
            "error_ratio": 0.0,
            **{k: float(rates[k]) for k in ("cr_a", "cr_b", "cr_total")},
        }
        return packaged, row, None

    hp = replace(hp, sgd=replace(hp.sgd, seed=_layer_seed(seed, hp.sgd.seed)))
    a, b, state = decompose(problem, hp)
    last = state.history[-1]
    err = reconstruction_error(problem, a, b)
    energy = problem.signal_energy()
    packaged = build_layer(
        layer.name,
        a,
        b if hp.mode != "sparse_only" else None,
        zero_tol=layer.zero_tol,
        sv_tol=layer.sv_tol,
        metadata={
            "strategy": strategy,
            "seed": seed,
            "version": version_string(),
            "hyperparams": {
                "lambda1": hp.lambda1,
                "lambda2": hp.lambda2,
                "t": hp.t,
                "tau": hp.tau,
                "alpha": hp.alpha,
                "tol": hp.tol,
                "max_iter": hp.max_iter,
                "mode": hp.mode,
            },
            "residual": last["rel_residual"],
            "iterations": state.iteration,
            "converged": state.converged,
        },
    )
    rates = compression_rate(packaged)
    row = {
        "name": layer.name,
        "skipped": False,
        "mode": hp.mode,
        "iterations": state.iteration,
        "converged": state.converged,
        "rel_residual": float(last["rel_residual"]),
        "error": float(err),
        "error_ratio": float(err / energy) if energy > 0 else 0.0,
        **{k: float(rates[k]) for k in ("cr_a", "cr_b", "cr_total")},
    }
    return packaged, row, state


def _write_history_csv(path, history) -> None:
    columns = [
        "iteration",
        "objective",
        "data_term",
        "l21_term",
        "nuclear_term",
        "primal_residual",
        "rel_residual",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for rec in history:
            fh.write(",".join(repr(rec[c]) for c in columns) + "\n")


def write_csv(path, columns, rows) -> None:
    """Deterministic delimited writer (repr floats, no quoting needed)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(row[c]) for c in columns) + "\n")


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _validate_chain(layers, problems) -> None:
    for prev, cur in zip(problems, problems[1:]):
        if cur.w.shape[1] != prev.w.shape[0]:
            raise ConfigError(
                "asymmetric propagation needs chained shapes: layer with "
                f"{cur.w.shape} cannot consume outputs of {prev.w.shape}"
            )


def run_pipeline(
    config: PipelineConfig,
    out_dir,
    strategy: str = "symmetric",
    keep_going: bool = False,
    figures: bool = True,
) -> dict:
    """Decompose every configured layer and write all artifacts.

    Returns the summary dict (also written to ``summary.json``).  With
    ``strategy="asymmetric"`` layer inputs are propagated through the
    layers already compressed, which forces sequential processing.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    problems = [load_layer_problem(layer) for layer in config.layers]
    if strategy == "asymmetric":
        _validate_chain(config.layers, problems)

    rows = []
    artifacts = []
    errors = []
    propagated = None  # list of X_i for the next layer (asymmetric)
    for idx, (layer, problem) in enumerate(zip(config.layers, problems)):
        if strategy == "asymmetric" and idx > 0:
            problem = LayerProblem(
                w=problem.w,
                samples=list(zip(propagated, [y for _, y in problem.samples])),
                activation=problem.activation,
            )
        try:
            packaged, row, state = process_layer(
                layer, problem, seed=config.seed + idx, strategy=strategy
            )
        except Exception as exc:
            if not keep_going:
                raise
            errors.append({"layer": layer.name, "error": f"{type(exc).__name__}: {exc}"})
            propagated = [x for x, _ in problem.samples]  # pass inputs through
            continue
        serialize(packaged, out / f"{layer.name}.slrl")
        if state is not None:
            _write_history_csv(out / f"{layer.name}_history.csv", state.history)
            if figures:
                from .plots import convergence_figure

                convergence_figure(
                    state.history, out / f"{layer.name}_convergence.png", layer.name
                )
        rows.append(row)
        artifacts.append(packaged)
        if strategy == "asymmetric":
            propagated = [
                forward_compressed(packaged, x, layer.activation)
                for x, _ in problem.samples
            ]

    total_original = sum(int(np.prod(a.original_shape)) for a in artifacts)
    total_kept = sum(
        a.param_counts["sparse"] + a.param_counts["lowrank"] for a in artifacts
    )
    cr_total = 100.0 * total_kept / total_original if total_original else 0.0
    summary = {
        "version": version_string(),
        "strategy": strategy,
        "seed": config.seed,
        "config": config.raw,
        "layers": rows,
        "errors": errors,
        "cr_total": float(cr_total),
        "reduction": float(100.0 / cr_total) if cr_total > 0 else None,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    verify_summary(out)
    if rows:
        write_csv(
            out / "summary.csv",
            [
                "name",
                "skipped",
                "mode",
                "iterations",
                "converged",
                "rel_residual",
                "error",
                "error_ratio",
                "cr_a",
                "cr_b",
                "cr_total",
            ],
            rows,
        )
        if figures:
            from .plots import cr_figure

            cr_figure(rows, out / "compression_rates.png")
    return summary


def verify_summary(out_dir) -> dict:
    """Cross-check summary CR numbers against the per-layer containers.

    Re-derives every layer's compression rates from its ``.slrl`` file and
    compares them to the written summary; raises ConfigError on drift.
    Returns the verified summary.
    """
    from .store import compression_rate, deserialize

    out = Path(out_dir)
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    total_original = 0
    total_kept = 0
    for row in summary["layers"]:
        layer = deserialize(out / f"{row['name']}.slrl")
        rates = compression_rate(layer)
        for key in ("cr_a", "cr_b", "cr_total"):
            if abs(rates[key] - row[key]) > 1e-9:
                raise ConfigError(
                    f"{row['name']}: summary {key}={row[key]} but artifact "
                    f"re-derives {rates[key]}"
                )
        counts = layer.param_counts
        total_original += counts["original"]
        total_kept += counts["sparse"] + counts["lowrank"]
    cr_total = 100.0 * total_kept / total_original if total_original else 0.0
    if abs(cr_total - summary["cr_total"]) > 1e-9:
        raise ConfigError(
            f"summary cr_total={summary['cr_total']} but artifacts re-derive {cr_total}"
        )
    return summary


def run_symmetric(config: PipelineConfig, out_dir, **kwargs) -> dict:
    return run_pipeline(config, out_dir, strategy="symmetric", **kwargs)


def run_asymmetric(config: PipelineConfig, out_dir, **kwargs) -> dict:
    return run_pipeline(config, out_dir, strategy="asymmetric", **kwargs)


def split_holdout(n_samples: int, fraction: float, seed: int):
    """Seeded 80/20-style split by sample index; holdout may come back empty."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_samples)
    n_hold = int(np.floor(n_samples * fraction))
    return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])


def compare_nonlinear_linear(
    problem: LayerProblem,
    hp_grid,
    *,
    holdout_fraction: float = 0.2,
    seed: int = 0,
    zero_tol: float = 0.0,
    sv_tol: float = 1e-5,
) -> list:
    """Solve each grid point twice (post-ReLU objective vs linear objective).

    Both variants rebuild their fitting targets from the problem's weight
    matrix: relu(W X) for the nonlinear objective, W X for the linear
    one.  Both are then scored by post-ReLU reconstruction error on the
    held-out samples.  Returns one row dict per (hp, activation) pair; an
    empty holdout falls back to the training samples and says so in the
    ``holdout_is_train`` flag.
    """
    if not hp_grid:
        raise ConfigError("hp_grid must not be empty")
    xs = [x for x, _ in problem.samples]
    train_idx, hold_idx = split_holdout(len(xs), holdout_fraction, seed)
    holdout_is_train = hold_idx.size == 0
    eval_idx = train_idx if holdout_is_train else hold_idx
    w = problem.w

    rows = []
    for hp in hp_grid:
        for activation in ("relu", "identity"):
            make_target = relu if activation == "relu" else (lambda z: z)
            train = [(xs[i], make_target(w @ xs[i])) for i in train_idx]
            sub = LayerProblem(w=w, samples=train, activation=activation)
            a, b, state = decompose(sub, hp)
            packaged = build_layer(
                f"{activation}", a, b, zero_tol=zero_tol, sv_tol=sv_tol
            )
            rates = compression_rate(packaged)
            err = 0.0
            energy = 0.0
            for i in eval_idx:
                truth = relu(w @ xs[i])
                approx = apply_activation((a + b) @ xs[i], "relu")
                err += float(np.sum((truth - approx) ** 2))
                energy += float(np.sum(truth * truth))
            rows.append(
                {
                    "lambda1": hp.lambda1,
                    "lambda2": hp.lambda2,
                    "activation": activation,
                    "cr_a": rates["cr_a"],
                    "cr_b": rates["cr_b"],
                    "cr_total": rates["cr_total"],
                    "holdout_error": err,
                    "holdout_error_rel": err / energy if energy > 0 else 0.0,
                    "holdout_is_train": holdout_is_train,
                    "iterations": state.iteration,
                    "converged": state.converged,
                    "rel_residual": state.history[-1]["rel_residual"],
                }
            )
    return rows


COMPARE_COLUMNS = [
    "lambda1",
    "lambda2",
    "activation",
    "cr_a",
    "cr_b",
    "cr_total",
    "holdout_error",
    "holdout_error_rel",
    "holdout_is_train",
    "iterations",
    "converged",
    "rel_residual",
]
