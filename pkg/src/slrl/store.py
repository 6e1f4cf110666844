"""Compressed layer representations, parameter accounting, and the container format.

The sparse component keeps only its nonzero columns (indices plus a dense
packed block); the low-rank component is held as two thin factors
B = U V.  When factoring would not shrink the layer (r*(n+m) >= n*m, or a
layer deliberately left untouched) the component is stored dense and
counted dense, so packaging never inflates a model.

Container layout (little-endian), magic "SLRL", version 1:

    magic     4s   b"SLRL"
    version   u16
    n, m      u32 x2   original shape
    nnz       u32      packed sparse columns
    bkind     u8       0 = no low-rank part, 1 = factors, 2 = dense
    r         u32      factor rank (0 unless bkind == 1)
    meta_len  u32      UTF-8 JSON byte length
    indices   u32 * nnz
    packed    f64 * n * nnz
    u         f64 * n * r          (bkind == 1)
    v         f64 * r * m          (bkind == 1)
    dense     f64 * n * m          (bkind == 2)
    metadata  UTF-8 JSON
    crc32     u32      of every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .errors import (
    ContainerVersionError,
    CorruptContainerError,
    MalformedFileError,
    ParameterError,
    ShapeError,
)
from .prox import SvdResult, column_norms, svd

FORMAT_MAGIC = b"SLRL"
FORMAT_VERSION = 1

_BKIND_NONE = 0
_BKIND_FACTORS = 1
_BKIND_DENSE = 2


@dataclass
class ColumnSparse:
    """Column-packed sparse matrix: kept columns only, in index order."""

    rows: int
    cols: int
    nz_col_indices: np.ndarray  # strictly increasing, int64
    packed: np.ndarray  # rows x len(nz_col_indices)

    def __post_init__(self):
        self.nz_col_indices = np.asarray(self.nz_col_indices, dtype=np.int64)
        self.packed = np.ascontiguousarray(self.packed, dtype=np.float64)
        idx = self.nz_col_indices
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.cols:
                raise ShapeError(f"column indices out of range [0, {self.cols})")
            if np.any(np.diff(idx) <= 0):
                raise ShapeError("column indices must be strictly increasing")
        if self.packed.shape != (self.rows, idx.size):
            raise ShapeError(
                f"packed block shape {self.packed.shape}, expected "
                f"({self.rows}, {idx.size})"
            )

    @property
    def nnz_cols(self) -> int:
        return int(self.nz_col_indices.size)

    def param_count(self) -> int:
        # one scalar-equivalent of index overhead per kept column
        return self.rows * self.nnz_cols + self.nnz_cols

    def densify(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        if self.nnz_cols:
            out[:, self.nz_col_indices] = self.packed
        return out


@dataclass
class LowRankFactors:
    """Thin factor pair u (n x r) and v (r x m) representing B = u v."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.ascontiguousarray(self.u, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[1] != self.v.shape[0]:
            raise ShapeError(
                f"incompatible factor shapes {self.u.shape} and {self.v.shape}"
            )

    @property
    def rank(self) -> int:
        return int(self.u.shape[1])

    def param_count(self) -> int:
        return self.rank * (self.u.shape[0] + self.v.shape[1])

    def reconstruct(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.u.shape[0], self.v.shape[1]))
        return self.u @ self.v


@dataclass
class CompressedLayer:
    """Packaged decomposition of one layer plus provenance metadata."""

    name: str
    sparse: ColumnSparse
    lowrank: LowRankFactors | None
    dense_b: np.ndarray | None
    original_shape: tuple
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.original_shape = (int(self.original_shape[0]), int(self.original_shape[1]))
        n, m = self.original_shape
        if (self.sparse.rows, self.sparse.cols) != (n, m):
            raise ShapeError(
                f"sparse block is {self.sparse.rows}x{self.sparse.cols}, "
                f"layer is {n}x{m}"
            )
        if self.lowrank is not None and self.dense_b is not None:
            raise ShapeError("layer cannot carry both factored and dense low-rank parts")
        if self.lowrank is not None:
            if self.lowrank.u.shape[0] != n or self.lowrank.v.shape[1] != m:
                raise ShapeError("low-rank factors do not match layer shape")
        if self.dense_b is not None:
            self.dense_b = np.ascontiguousarray(self.dense_b, dtype=np.float64)
            if self.dense_b.shape != (n, m):
                raise ShapeError("dense low-rank block does not match layer shape")

    @property
    def param_counts(self) -> dict:
        n, m = self.original_shape
        if self.lowrank is not None:
            low = self.lowrank.param_count()
        elif self.dense_b is not None:
            low = n * m
        else:
            low = 0
        return {
            "original": n * m,
            "sparse": self.sparse.param_count(),
            "lowrank": low,
        }

    def densify(self) -> np.ndarray:
        out = self.sparse.densify()
        if self.lowrank is not None:
            out += self.lowrank.reconstruct()
        elif self.dense_b is not None:
            out += self.dense_b
        return out


def pack_sparse(a: np.ndarray, zero_tol: float = 0.0) -> ColumnSparse:
    """Drop columns with Euclidean norm <= zero_tol; pack the rest in order."""
    if zero_tol < 0:
        raise ParameterError(f"zero_tol must be >= 0, got {zero_tol}")
    a = np.ascontiguousarray(a, dtype=np.float64)
    keep = np.flatnonzero(column_norms(a) > zero_tol)
    return ColumnSparse(
        rows=a.shape[0],
        cols=a.shape[1],
        nz_col_indices=keep.astype(np.int64),
        packed=a[:, keep],
    )


def factorize_lowrank(
    b: np.ndarray, sv_tol: float = 1e-9, factors: SvdResult | None = None
) -> LowRankFactors:
    """Truncated factorization of b keeping singular values > sv_tol * sigma_1.

    Set ``factors`` to reuse an SVT output's factors instead of
    recomputing the SVD.
    """
    if factors is None:
        b = np.ascontiguousarray(b, dtype=np.float64)
        if not np.any(b):
            return LowRankFactors(
                u=np.zeros((b.shape[0], 0)), v=np.zeros((0, b.shape[1]))
            )
        factors = svd(b)
    s = factors.singular_values
    if s.size == 0 or s[0] <= 0:
        return LowRankFactors(
            u=np.zeros((factors.u.shape[0], 0)), v=np.zeros((0, factors.v.shape[1]))
        )
    keep = s > sv_tol * s[0]
    return LowRankFactors(u=factors.u[:, keep] * s[keep], v=factors.v[keep, :])


def build_layer(
    name: str,
    a: np.ndarray,
    b: np.ndarray | None,
    *,
    zero_tol: float = 0.0,
    sv_tol: float = 1e-9,
    svt_factors: SvdResult | None = None,
    metadata: dict | None = None,
) -> CompressedLayer:
    """Assemble a CompressedLayer from solver output, with the dense guard."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    n, m = a.shape
    sparse = pack_sparse(a, zero_tol)
    meta = dict(metadata or {})
    lowrank = None
    dense_b = None
    if b is not None and np.any(b):
        lowrank = factorize_lowrank(b, sv_tol, factors=svt_factors)
        if lowrank.param_count() >= n * m:
            meta["lowrank_stored_dense"] = True
            dense_b = np.ascontiguousarray(b, dtype=np.float64)
            lowrank = None
    return CompressedLayer(
        name=name,
        sparse=sparse,
        lowrank=lowrank,
        dense_b=dense_b,
        original_shape=(n, m),
        metadata=meta,
    )


def passthrough_layer(name: str, w: np.ndarray, metadata: dict | None = None) -> CompressedLayer:
    """An untouched layer: empty sparse part, dense block, counted at 100%."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    n, m = w.shape
    meta = dict(metadata or {})
    meta["skipped"] = True
    return CompressedLayer(
        name=name,
        sparse=ColumnSparse(n, m, np.zeros(0, dtype=np.int64), np.zeros((n, 0))),
        lowrank=None,
        dense_b=w.copy(),
        original_shape=(n, m),
        metadata=meta,
    )


def compression_rate(layer: CompressedLayer) -> dict:
    """CR percentages for the sparse part, the low-rank part, and their sum.

    ``reduction`` is the model-size reduction factor 100 / cr_total.
    """
    counts = layer.param_counts
    original = counts["original"]
    cr_a = 100.0 * counts["sparse"] / original
    cr_b = 100.0 * counts["lowrank"] / original
    cr_total = cr_a + cr_b
    return {
        "cr_a": cr_a,
        "cr_b": cr_b,
        "cr_total": cr_total,
        "reduction": 100.0 / cr_total if cr_total > 0 else float("inf"),
    }


def _pack_array(arr: np.ndarray, dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=dtype).tobytes()


def serialize(layer: CompressedLayer, path) -> None:
    """Write the container format described in the module docstring."""
    n, m = layer.original_shape
    meta = dict(layer.metadata)
    meta["name"] = layer.name
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    if layer.lowrank is not None:
        bkind, r = _BKIND_FACTORS, layer.lowrank.rank
    elif layer.dense_b is not None:
        bkind, r = _BKIND_DENSE, 0
    else:
        bkind, r = _BKIND_NONE, 0

    blob = bytearray()
    blob += FORMAT_MAGIC
    blob += struct.pack(
        "<HIIIBII",
        FORMAT_VERSION,
        n,
        m,
        layer.sparse.nnz_cols,
        bkind,
        r,
        len(meta_bytes),
    )
    blob += _pack_array(layer.sparse.nz_col_indices, "<u4")
    blob += _pack_array(layer.sparse.packed, "<f8")
    if bkind == _BKIND_FACTORS:
        blob += _pack_array(layer.lowrank.u, "<f8")
        blob += _pack_array(layer.lowrank.v, "<f8")
    elif bkind == _BKIND_DENSE:
        blob += _pack_array(layer.dense_b, "<f8")
    blob += meta_bytes
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def _take(buf: memoryview, offset: int, nbytes: int, path) -> tuple[memoryview, int]:
    if offset + nbytes > len(buf):
        raise MalformedFileError(f"{path}: container truncated")
    return buf[offset : offset + nbytes], offset + nbytes


def deserialize(path) -> CompressedLayer:
    """Read a container written by :func:`serialize`.

    Raises :class:`CorruptContainerError` on checksum mismatch,
    :class:`ContainerVersionError` on a format-version mismatch, and
    :class:`MalformedFileError` for anything structurally unreadable.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 + 23 + 4:
        raise MalformedFileError(f"{path}: container truncated")
    if blob[:4] != FORMAT_MAGIC:
        raise MalformedFileError(f"{path}: bad magic {blob[:4]!r}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CorruptContainerError(
            f"{path}: checksum mismatch (stored {stored_crc:#010x}, "
            f"computed {actual_crc:#010x})"
        )
    version, n, m, nnz, bkind, r, meta_len = struct.unpack("<HIIIBII", blob[4:27])
    if version != FORMAT_VERSION:
        raise ContainerVersionError(
            f"{path}: container version {version}, this build reads version "
            f"{FORMAT_VERSION}"
        )
    buf = memoryview(blob[:-4])
    offset = 27
    raw, offset = _take(buf, offset, 4 * nnz, path)
    indices = np.frombuffer(raw, dtype="<u4").astype(np.int64)
    raw, offset = _take(buf, offset, 8 * n * nnz, path)
    packed = np.frombuffer(raw, dtype="<f8").reshape(n, nnz).copy()
    lowrank = None
    dense_b = None
    if bkind == _BKIND_FACTORS:
        raw, offset = _take(buf, offset, 8 * n * r, path)
        u = np.frombuffer(raw, dtype="<f8").reshape(n, r).copy()
        raw, offset = _take(buf, offset, 8 * r * m, path)
        v = np.frombuffer(raw, dtype="<f8").reshape(r, m).copy()
        lowrank = LowRankFactors(u=u, v=v)
    elif bkind == _BKIND_DENSE:
        raw, offset = _take(buf, offset, 8 * n * m, path)
        dense_b = np.frombuffer(raw, dtype="<f8").reshape(n, m).copy()
    elif bkind != _BKIND_NONE:
        raise MalformedFileError(f"{path}: unknown low-rank kind {bkind}")
    raw, offset = _take(buf, offset, meta_len, path)
    try:
        meta = json.loads(bytes(raw).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFileError(f"{path}: bad metadata block ({exc})") from exc
    if offset != len(buf):
        raise MalformedFileError(f"{path}: {len(buf) - offset} trailing bytes")
    name = meta.pop("name", "")
    return CompressedLayer(
        name=name,
        sparse=ColumnSparse(n, m, indices, packed),
        lowrank=lowrank,
        dense_b=dense_b,
        original_shape=(n, m),
        metadata=meta,
    )


def export_csr(layer: CompressedLayer, stem) -> dict:
    """Write the sparse component as a standard three-array CSR NPY trio.

    Creates ``<stem>_indptr.npy`` (int64), ``<stem>_indices.npy`` (int64)
    and ``<stem>_data.npy`` (float64); returns the written paths.
    """
    csr = scipy.sparse.csr_matrix(layer.sparse.densify())
    paths = {
        "indptr": f"{stem}_indptr.npy",
        "indices": f"{stem}_indices.npy",
        "data": f"{stem}_data.npy",
    }
    np.save(paths["indptr"], csr.indptr.astype(np.int64))
    np.save(paths["indices"], csr.indices.astype(np.int64))
    np.save(paths["data"], csr.data.astype(np.float64))
    return paths
