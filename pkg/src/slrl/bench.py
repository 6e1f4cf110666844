"""Forward passes for dense and compressed layers, plus timing harness.

The compressed forward computes r(A X + U (V X)) where the sparse product
reads only the packed columns of A against the matching rows of X, so a
layer with few surviving columns skips most of the GEMM work.  Timing
claims are gated on correctness: the compressed output must agree with
the densified layer's dense forward before a speedup is reported.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError, ShapeError
from .store import CompressedLayer
from .tensor import apply_activation, as_matrix

DIVERGENCE_BOUND = 1e-6


@dataclass
class OpCounter:
    """Multiply-add tallies for one compressed forward (debug instrumentation)."""

    sparse_macs: int = 0
    lowrank_macs: int = 0
    dense_macs: int = 0


@dataclass
class BenchReport:
    """Timing and correctness summary for one layer."""

    layer_name: str
    dense_seconds: float
    compressed_seconds: float
    speedup: float
    max_divergence: float
    weight_shape: tuple
    input_shape: tuple
    repetitions: int
    threads: str = "default"
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "layer": self.layer_name,
            "dense_seconds": self.dense_seconds,
            "compressed_seconds": self.compressed_seconds,
            "speedup": self.speedup,
            "max_divergence": self.max_divergence,
            "weight_shape": list(self.weight_shape),
            "input_shape": list(self.input_shape),
            "repetitions": self.repetitions,
            "threads": self.threads,
        }
        payload.update(self.notes)
        return json.dumps(payload, sort_keys=True)


def forward_dense(w: np.ndarray, x: np.ndarray, activation: str = "relu") -> np.ndarray:
    """r(W X)."""
    w = as_matrix(w, "w")
    x = as_matrix(x, "x")
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"w is {w.shape}, x is {x.shape}: inner dimensions differ")
    return apply_activation(w @ x, activation)


def forward_compressed(
    layer: CompressedLayer,
    x: np.ndarray,
    activation: str = "relu",
    op_counter: OpCounter | None = None,
) -> np.ndarray:
    """r(A X + U (V X)), touching only the packed columns of A."""
    x = as_matrix(x, "x")
    n, m = layer.original_shape
    if x.shape[0] != m:
        raise ShapeError(f"layer expects {m} input rows, x has {x.shape[0]}")
    p = x.shape[1]
    pre = np.zeros((n, p))
    sp = layer.sparse
    if sp.nnz_cols:
        pre += sp.packed @ x[sp.nz_col_indices, :]
        if op_counter is not None:
            op_counter.sparse_macs += n * sp.nnz_cols * p
    if layer.lowrank is not None and layer.lowrank.rank:
        lr = layer.lowrank
        pre += lr.u @ (lr.v @ x)
        if op_counter is not None:
            op_counter.lowrank_macs += lr.rank * (n + m) * p
    elif layer.dense_b is not None:
        pre += layer.dense_b @ x
        if op_counter is not None:
            op_counter.dense_macs += n * m * p
    return apply_activation(pre, activation)


def _median_seconds(fn, repetitions: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def benchmark(
    layer: CompressedLayer,
    w: np.ndarray,
    x: np.ndarray,
    repetitions: int = 5,
    activation: str = "relu",
    warmup: int = 2,
) -> BenchReport:
    """Time the dense and compressed forwards on identical inputs.

    The correctness gate runs first: the compressed forward must match
    the dense forward of the densified layer within ``DIVERGENCE_BOUND``
    relative, otherwise a :class:`NumericalError` is raised and no timing
    is reported.  ``w`` is the original dense weight used for the
    baseline timing.
    """
    if repetitions < 5:
        raise ParameterError(f"repetitions must be >= 5, got {repetitions}")
    w = as_matrix(w, "w")
    x = as_matrix(x, "x")

    reference = forward_dense(layer.densify(), x, activation)
    compressed = forward_compressed(layer, x, activation)
    scale = max(float(np.max(np.abs(reference))), 1e-30)
    divergence = float(np.max(np.abs(reference - compressed))) / scale
    if divergence > DIVERGENCE_BOUND:
        raise NumericalError(
            f"compressed forward diverges from densified reference: "
            f"{divergence:.3e} > {DIVERGENCE_BOUND:.1e}; timing withheld"
        )

    dense_s = _median_seconds(lambda: forward_dense(w, x, activation), repetitions, warmup)
    comp_s = _median_seconds(
        lambda: forward_compressed(layer, x, activation), repetitions, warmup
    )
    return BenchReport(
        layer_name=layer.name,
        dense_seconds=dense_s,
        compressed_seconds=comp_s,
        speedup=dense_s / comp_s if comp_s > 0 else float("inf"),
        max_divergence=divergence,
        weight_shape=w.shape,
        input_shape=x.shape,
        repetitions=repetitions,
    )
