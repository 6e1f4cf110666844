"""Array-file I/O: NPY version 1.0, the interchange format for weights and samples.

Accepted payloads are little-endian 4- or 8-byte floats, C-contiguous,
2-D (matrices) or 4-D (filter banks).  float32 data is widened to float64
on ingestion; the solver works in float64 throughout.
"""

from __future__ import annotations

import numpy as np

from .errors import ArrayFormatError, MalformedFileError

_SUPPORTED_DTYPES = ("<f4", "<f8")
_SUPPORTED_NDIM = (2, 4)


def read_array_file(path) -> np.ndarray:
    """Read an NPY v1.0 file into a float64 matrix or 4-D filter bank.

    Raises :class:`MalformedFileError` for unparseable or truncated files,
    :class:`ArrayFormatError` for parseable files with an unsupported
    dtype, byte order, layout, or rank.  OS-level failures propagate as
    ``OSError``.
    """
    with open(path, "rb") as fh:
        try:
            version = np.lib.format.read_magic(fh)
        except ValueError as exc:
            raise MalformedFileError(f"{path}: not an NPY file ({exc})") from exc
        if version != (1, 0):
            raise ArrayFormatError(
                f"{path}: NPY version {version[0]}.{version[1]} not supported, "
                "expected 1.0"
            )
        try:
            shape, fortran_order, dtype = np.lib.format.read_array_header_1_0(fh)
        except ValueError as exc:
            raise MalformedFileError(f"{path}: bad NPY header ({exc})") from exc
        if dtype.str not in _SUPPORTED_DTYPES:
            raise ArrayFormatError(
                f"{path}: dtype {dtype.str} not supported, expected one of "
                f"{_SUPPORTED_DTYPES}"
            )
        if fortran_order:
            raise ArrayFormatError(f"{path}: Fortran-ordered payloads not supported")
        if len(shape) not in _SUPPORTED_NDIM or any(d < 1 for d in shape):
            raise ArrayFormatError(
                f"{path}: shape {shape} not supported, expected 2-D or 4-D "
                "with positive dimensions"
            )
        count = int(np.prod(shape))
        data = np.fromfile(fh, dtype=dtype, count=count)
    if data.size != count:
        raise MalformedFileError(
            f"{path}: truncated payload, expected {count} elements, "
            f"got {data.size}"
        )
    return np.ascontiguousarray(data.reshape(shape), dtype=np.float64)


def write_array_file(path, value: np.ndarray) -> None:
    """Write a 2-D or 4-D float array as NPY v1.0.

    float32 input is written as-is; anything else is written as float64.
    """
    arr = np.asarray(value)
    if arr.ndim not in _SUPPORTED_NDIM:
        raise ArrayFormatError(
            f"cannot write array with ndim={arr.ndim}, expected 2-D or 4-D"
        )
    if arr.dtype != np.float32:
        arr = arr.astype(np.float64, copy=False)
    arr = np.ascontiguousarray(arr)
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, arr, version=(1, 0))
