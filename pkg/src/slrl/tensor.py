"""Dense matrix/tensor primitives: activations, filter lowering, im2col.

All solver-facing values are C-contiguous float64 ndarrays.  A "matrix"
is a 2-D array; a 4-D filter bank is indexed (filters, channels, kh, kw).
The lowering order is fixed: channel-major, then kernel row, then kernel
column, shared between :func:`lower_filter` and :func:`im2col` so that

    lower_filter(w) @ im2col(x, geom)

reproduces the direct convolution, one output column per spatial position
in raster order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParameterError, ShapeError


def as_matrix(x, name: str = "matrix", require_finite: bool = True) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, validating invariants."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    if require_finite and not np.isfinite(arr).all():
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a C-contiguous float64 4-D filter bank (n, c, kh, kw)."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D, got ndim={arr.ndim}")
    if min(arr.shape) < 1:
        raise ShapeError(f"{name} must have positive dimensions, got {arr.shape}")
    return arr


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def apply_activation(z: np.ndarray, kind: str) -> np.ndarray:
    """Apply a named activation ("relu" or "identity")."""
    if kind == "relu":
        return relu(z)
    if kind == "identity":
        return np.asarray(z, dtype=np.float64)
    raise ParameterError(f"unknown activation {kind!r}")


def lower_filter(w: np.ndarray) -> np.ndarray:
    """Reshape a 4-D filter bank (n, c, kh, kw) to an n-by-(c*kh*kw) matrix.

    Row i holds filter i flattened channel-major, then kernel row, then
    kernel column.
    """
    w = as_tensor4(w, "filter")
    n, c, kh, kw = w.shape
    return np.ascontiguousarray(w.reshape(n, c * kh * kw))


@dataclass(frozen=True)
class ConvGeometry:
    """Spatial geometry of one convolution: input size, kernel, stride, padding."""

    in_h: int
    in_w: int
    channels: int
    kernel: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        for field in ("in_h", "in_w", "channels", "kernel", "stride"):
            if getattr(self, field) < 1:
                raise GeometryError(f"{field} must be >= 1, got {getattr(self, field)}")
        if self.padding < 0:
            raise GeometryError(f"padding must be >= 0, got {self.padding}")
        if self.out_h < 1 or self.out_w < 1:
            raise GeometryError(
                f"geometry yields empty output: {self.out_h}x{self.out_w}"
            )

    @property
    def out_h(self) -> int:
        return (self.in_h + 2 * self.padding - self.kernel) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.in_w + 2 * self.padding - self.kernel) // self.stride + 1


def im2col(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Unroll each receptive field of ``x`` (c, H, W) into one column.

    Returns a (c * k * k)-by-(out_h * out_w) matrix.  Column j holds the
    receptive field of output position j in raster order; rows follow the
    same channel-major order as :func:`lower_filter`, so a lowered filter
    times this matrix equals the convolution output.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise GeometryError(f"input must be 3-D (c, H, W), got ndim={x.ndim}")
    c, h, w = x.shape
    if (c, h, w) != (geom.channels, geom.in_h, geom.in_w):
        raise GeometryError(
            f"input shape {x.shape} does not match geometry "
            f"({geom.channels}, {geom.in_h}, {geom.in_w})"
        )
    k, s, p = geom.kernel, geom.stride, geom.padding
    oh, ow = geom.out_h, geom.out_w
    if p > 0:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = np.empty((c * k * k, oh * ow), dtype=np.float64)
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                patch = x[ci, ky : ky + s * oh : s, kx : kx + s * ow : s]
                cols[(ci * k + ky) * k + kx, :] = patch.reshape(-1)
    return cols
