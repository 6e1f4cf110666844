"""slrl: sparse-plus-low-rank layer compression via corrected 3-block ADMM."""

__version__ = "0.1.0"

from .admm import (  # noqa: E402
    AdmmState,
    HyperParams,
    LayerProblem,
    correction_step,
    decompose,
    objective,
    reconstruction_error,
)
from .arrayio import read_array_file, write_array_file  # noqa: E402
from .bench import BenchReport, OpCounter, benchmark, forward_compressed, forward_dense  # noqa: E402
from .prox import SvdResult, prox_l21, svd, svt  # noqa: E402
from .sgd import SgdConfig, solve_m, subgradient_m  # noqa: E402
from .store import (  # noqa: E402
    ColumnSparse,
    CompressedLayer,
    LowRankFactors,
    build_layer,
    compression_rate,
    deserialize,
    export_csr,
    factorize_lowrank,
    pack_sparse,
    passthrough_layer,
    serialize,
)
from .tensor import ConvGeometry, im2col, lower_filter, relu  # noqa: E402

__all__ = [
    "AdmmState",
    "BenchReport",
    "ColumnSparse",
    "CompressedLayer",
    "ConvGeometry",
    "HyperParams",
    "LayerProblem",
    "LowRankFactors",
    "OpCounter",
    "SgdConfig",
    "SvdResult",
    "benchmark",
    "build_layer",
    "compression_rate",
    "correction_step",
    "decompose",
    "deserialize",
    "export_csr",
    "factorize_lowrank",
    "forward_compressed",
    "forward_dense",
    "im2col",
    "lower_filter",
    "objective",
    "pack_sparse",
    "passthrough_layer",
    "prox_l21",
    "read_array_file",
    "reconstruction_error",
    "relu",
    "serialize",
    "solve_m",
    "subgradient_m",
    "svd",
    "svt",
    "write_array_file",
]
