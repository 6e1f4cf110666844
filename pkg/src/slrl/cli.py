"""Command-line driver.

Verbs: decompose, pipeline, bench, compare-nl, export-csr, inspect.
Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admm import HyperParams, LayerProblem, decompose
from .arrayio import read_array_file
from .bench import benchmark
from .errors import (
    ArrayFormatError,
    BlowupError,
    ConfigError,
    ContainerVersionError,
    CorruptContainerError,
    GeometryError,
    MalformedFileError,
    NumericalError,
    ParameterError,
    ShapeError,
    SlrlError,
)
from .pipeline import (
    COMPARE_COLUMNS,
    LayerConfig,
    compare_nonlinear_linear,
    load_config,
    process_layer,
    run_pipeline,
    version_string,
    write_csv,
)
from .sgd import SgdConfig
from .store import compression_rate, deserialize, export_csr, serialize

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

_CONFIG_ERRORS = (ConfigError, ParameterError, GeometryError, ShapeError)
_IO_ERRORS = (
    OSError,
    MalformedFileError,
    ArrayFormatError,
    CorruptContainerError,
    ContainerVersionError,
)


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda1", type=float, default=0.1)
    p.add_argument("--lambda2", type=float, default=0.275)
    p.add_argument("--t", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument(
        "--mode",
        choices=["both", "sparse-only", "lowrank-only"],
        default="both",
    )
    p.add_argument("--epochs", type=int, default=5, help="SGD epochs per iteration")
    p.add_argument("--seed", type=int, default=0)


def _hp_from_args(args) -> HyperParams:
    return HyperParams(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        t=args.t,
        tol=args.tol,
        max_iter=args.max_iter,
        mode=args.mode.replace("-", "_"),
        sgd=SgdConfig(epochs=args.epochs, seed=args.seed),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slrl",
        description="Sparse-plus-low-rank layer compression",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="decompose one layer")
    p.add_argument("--weights", required=True)
    p.add_argument("--samples-x", nargs="*", default=[], metavar="NPY")
    p.add_argument("--samples-y", nargs="*", default=[], metavar="NPY")
    p.add_argument("--activation", choices=["relu", "identity"], default="relu")
    p.add_argument("--name", default="layer")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    _add_hp_flags(p)

    p = sub.add_parser("pipeline", help="decompose a configured layer stack")
    p.add_argument("--config", required=True)
    p.add_argument("--strategy", choices=["symmetric", "asymmetric"], default="symmetric")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--keep-going", action="store_true", help="continue past failed layers")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("bench", help="time a compressed layer against its dense baseline")
    p.add_argument("--layer", required=True, help=".slrl container")
    p.add_argument("--weights", required=True, help="dense baseline weights (npy)")
    p.add_argument("--input", required=True, help="input activations (npy)")
    p.add_argument("--reps", type=int, default=9)
    p.add_argument("--activation", choices=["relu", "identity"], default="relu")
    p.add_argument("--out", default=None, help="directory for report.jsonl and figure")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("compare-nl", help="nonlinear vs linear reconstruction sweep")
    p.add_argument("--weights", required=True)
    p.add_argument("--samples-x", nargs="+", required=True, metavar="NPY")
    p.add_argument(
        "--lambda1-grid",
        default="0.08,0.15,0.3",
        help="comma-separated lambda1 values",
    )
    p.add_argument("--ratio", type=float, default=2.75, help="lambda2 / lambda1")
    p.add_argument("--t", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("export-csr", help="export the sparse component as CSR npy trio")
    p.add_argument("--layer", required=True)
    p.add_argument("--out", required=True, help="output stem")

    p = sub.add_parser("inspect", help="describe a compressed-layer container")
    p.add_argument("--layer", required=True)
    p.add_argument("--json", action="store_true", dest="as_json")

    return parser


def _load_samples(xs, ys):
    if len(xs) != len(ys):
        raise ConfigError(f"got {len(xs)} sample inputs but {len(ys)} sample outputs")
    return [(read_array_file(x), read_array_file(y)) for x, y in zip(xs, ys)]


def _cmd_decompose(args) -> int:
    hp = _hp_from_args(args)
    w = read_array_file(args.weights)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    samples = _load_samples(args.samples_x, args.samples_y)
    problem = LayerProblem(w=w, samples=samples, activation=args.activation)
    layer_cfg = LayerConfig(
        name=args.name,
        weights=Path(args.weights),
        samples_x=list(args.samples_x),
        samples_y=list(args.samples_y),
        activation=args.activation,
        hp=hp,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    packaged, row, state = process_layer(
        layer_cfg, problem, seed=args.seed, strategy="single"
    )
    serialize(packaged, out / f"{args.name}.slrl")
    from .pipeline import _write_history_csv

    _write_history_csv(out / f"{args.name}_history.csv", state.history)
    if not args.no_figures:
        from .plots import convergence_figure

        convergence_figure(state.history, out / f"{args.name}_convergence.png", args.name)
    (out / f"{args.name}_summary.json").write_text(
        json.dumps(row, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"{args.name}: cr_total={row['cr_total']:.2f}% "
        f"residual={row['rel_residual']:.3e} iterations={row['iterations']}"
    )
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
        config.raw = dict(config.raw)
        config.raw["seed"] = args.seed
    out = args.out or config.out_dir
    if out is None:
        raise ConfigError("no output directory: set --out or config out_dir")
    summary = run_pipeline(
        config,
        out,
        strategy=args.strategy,
        keep_going=args.keep_going,
        figures=not args.no_figures,
    )
    for row in summary["layers"]:
        print(
            f"{row['name']}: cr_total={row['cr_total']:.2f}% "
            f"residual={row['rel_residual']:.3e}"
        )
    reduction = summary["reduction"]
    print(
        f"total: cr={summary['cr_total']:.2f}% "
        f"({reduction:.2f}x reduction)" if reduction else f"cr={summary['cr_total']:.2f}%"
    )
    if summary["errors"]:
        for err in summary["errors"]:
            print(f"failed: {err['layer']}: {err['error']}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _cmd_bench(args) -> int:
    layer = deserialize(args.layer)
    w = read_array_file(args.weights)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    x = read_array_file(args.input)
    report = benchmark(layer, w, x, repetitions=args.reps, activation=args.activation)
    line = report.to_json()
    print(line)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "bench.jsonl", "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        if not args.no_figures:
            from .plots import speedup_figure

            speedup_figure([report], out / "speedup.png")
    return EXIT_OK


def _cmd_compare_nl(args) -> int:
    w = read_array_file(args.weights)
    if w.ndim == 4:
        w = w.reshape(w.shape[0], -1)
    xs = [read_array_file(p) for p in args.samples_x]
    # targets are rebuilt per objective inside the comparison
    samples = [(x, np.zeros((w.shape[0], x.shape[1]))) for x in xs]
    problem = LayerProblem(w=w, samples=samples, activation="relu")
    try:
        lambda1s = [float(v) for v in args.lambda1_grid.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --lambda1-grid: {exc}") from exc
    if not lambda1s:
        raise ConfigError("--lambda1-grid is empty")
    grid = [
        HyperParams(
            lambda1=l1,
            lambda2=args.ratio * l1,
            t=args.t,
            tol=args.tol,
            max_iter=args.max_iter,
            sgd=SgdConfig(epochs=args.epochs, seed=args.seed),
        )
        for l1 in lambda1s
    ]
    rows = compare_nonlinear_linear(problem, grid, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "compare_nl.csv", COMPARE_COLUMNS, rows)
    if not args.no_figures:
        from .plots import tradeoff_figure

        tradeoff_figure(rows, out / "compare_nl.png")
    for row in rows:
        print(
            f"lambda1={row['lambda1']:g} {row['activation']:<8} "
            f"cr={row['cr_total']:.2f}% err={row['holdout_error_rel']:.4f}"
        )
    return EXIT_OK


def _cmd_export_csr(args) -> int:
    layer = deserialize(args.layer)
    paths = export_csr(layer, args.out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    layer = deserialize(args.layer)
    rates = compression_rate(layer)
    info = {
        "name": layer.name,
        "shape": list(layer.original_shape),
        "sparse_columns": layer.sparse.nnz_cols,
        "lowrank_rank": layer.lowrank.rank if layer.lowrank else None,
        "lowrank_dense": layer.dense_b is not None,
        "param_counts": layer.param_counts,
        "cr_a": rates["cr_a"],
        "cr_b": rates["cr_b"],
        "cr_total": rates["cr_total"],
        "reduction": rates["reduction"] if rates["cr_total"] > 0 else None,
        "metadata": layer.metadata,
    }
    if args.as_json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        n, m = layer.original_shape
        print(f"{layer.name or '(unnamed)'}: {n}x{m}")
        print(f"  sparse columns: {layer.sparse.nnz_cols}/{m}")
        if layer.lowrank is not None:
            print(f"  low-rank: rank {layer.lowrank.rank}")
        elif layer.dense_b is not None:
            print("  low-rank: stored dense")
        else:
            print("  low-rank: none")
        print(
            f"  CR(A)={rates['cr_a']:.2f}%  CR(B)={rates['cr_b']:.2f}%  "
            f"CR(A+B)={rates['cr_total']:.2f}%"
        )
        if rates["cr_total"] > 0:
            print(f"  reduction: {rates['reduction']:.2f}x")
        for key in sorted(layer.metadata):
            print(f"  {key}: {layer.metadata[key]}")
    return EXIT_OK


_COMMANDS = {
    "decompose": _cmd_decompose,
    "pipeline": _cmd_pipeline,
    "bench": _cmd_bench,
    "compare-nl": _cmd_compare_nl,
    "export-csr": _cmd_export_csr,
    "inspect": _cmd_inspect,
}


def dump_blowup_state(exc: BlowupError, out_dir) -> Path | None:
    """Write the failed iterates for post-mortem; returns the dump path."""
    if not exc.state:
        return None
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"blowup_iter{exc.iteration}.npz"
    np.savez(path, **exc.state)
    return path


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if isinstance(exc, BlowupError) and getattr(args, "out", None):
            path = dump_blowup_state(exc, args.out)
            if path is not None:
                print(f"iterates dumped to {path}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _IO_ERRORS as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SlrlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
