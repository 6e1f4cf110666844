"""Closed-form proximal operators for the two regularizers.

``prox_l21`` solves, per column,

    min_a  theta * ||a||_2 + (1/2) * ||a - c||_2^2

which either rescales the column toward the origin or zeroes it whole:
that is what makes the sparse component column-structured.  ``svt``
applies the same soft threshold to the singular values, the proximal
operator of the nuclear norm,

    min_b  theta * ||b||_* + (1/2) * ||b - d||_F^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ParameterError, SvdError
from .tensor import as_matrix


@dataclass(frozen=True)
class SvdResult:
    """Compact factorization u @ diag(singular_values) @ v.

    ``u`` is n-by-r, ``v`` is r-by-m, singular values are nonincreasing
    and nonnegative.  Singular-vector signs are not canonicalized; compare
    sign-invariant quantities only.
    """

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((self.u.shape[0], self.v.shape[1]))
        return (self.u * self.singular_values) @ self.v


def svd(a: np.ndarray) -> SvdResult:
    """Compact SVD via LAPACK's Golub-Kahan driver (gesvd); deterministic."""
    a = as_matrix(a, "svd input")
    try:
        u, s, vh = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
    except scipy.linalg.LinAlgError as exc:
        raise SvdError(f"SVD did not converge: {exc}", matrix=a) from exc
    return SvdResult(u=u, singular_values=s, v=vh)


def column_norms(c: np.ndarray) -> np.ndarray:
    """Euclidean norm of every column."""
    return np.sqrt(np.sum(np.square(c), axis=0))


def l21_norm(a: np.ndarray) -> float:
    """Sum of the Euclidean norms of the columns."""
    return float(np.sum(column_norms(a)))


def prox_l21(c: np.ndarray, threshold: float) -> np.ndarray:
    """Column-wise soft threshold.

    Columns with norm strictly above ``threshold`` shrink by exactly
    ``threshold`` in norm while keeping their direction; all others
    (including ties at the threshold) become zero columns.
    """
    if threshold <= 0:
        raise ParameterError(f"threshold must be > 0, got {threshold}")
    c = as_matrix(c, "prox input")
    norms = column_norms(c)
    # avoid 0/0 on all-zero columns; those scale to zero regardless
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(norms > threshold, (norms - threshold) / safe, 0.0)
    return c * scale


def svt(d: np.ndarray, threshold: float) -> tuple[np.ndarray, SvdResult]:
    """Singular value thresholding.

    Returns the shrunk matrix together with its truncated factors
    (u, (sigma - threshold)_+, v) restricted to the singular values that
    stay positive, so rank never increases.
    """
    if threshold <= 0:
        raise ParameterError(f"threshold must be > 0, got {threshold}")
    d = as_matrix(d, "svt input")
    f = svd(d)
    shrunk = f.singular_values - threshold
    keep = shrunk > 0
    factors = SvdResult(
        u=np.ascontiguousarray(f.u[:, keep]),
        singular_values=shrunk[keep],
        v=np.ascontiguousarray(f.v[keep, :]),
    )
    if factors.rank == 0:
        return np.zeros_like(d), factors
    return factors.reconstruct(), factors


def nuclear_norm(b: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(svd(b).singular_values))
