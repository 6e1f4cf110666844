"""Inexact inner solver for the response-fitting block.

Per outer iteration the coupling variable M minimizes

    g(M) = sum_i ||Y_i - r(M X_i)||_F^2
           + <L, C - M> + (t/2) * ||C - M||_F^2,        C = A_hat + B_hat

which is convex but only piecewise smooth when r is the ReLU.  It is
attacked with minibatch SGD plus momentum; the best iterate seen
(including the warm start) is returned, so the objective never gets
worse.  Two cases short-circuit the SGD run because they admit exact
minimizers:

* no samples: grad = -L + t(M - C) = 0 gives M = C + L/t;
* identity activation: the whole objective is quadratic and one linear
  solve lands on the minimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ParameterError, ShapeError
from .tensor import apply_activation

_DIVERGENCE_FACTOR = 10.0
_DIVERGENCE_PATIENCE = 3


@dataclass(frozen=True)
class SgdConfig:
    """Settings for one inner SGD run."""

    learning_rate: float = 1e-3
    momentum: float = 0.9
    epochs: int = 5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")


def _check_shapes(samples, m, a_hat, b_hat, lambda_dual):
    shape = m.shape
    for other, name in ((a_hat, "a_hat"), (b_hat, "b_hat"), (lambda_dual, "lambda_dual")):
        if other.shape != shape:
            raise ShapeError(f"{name} shape {other.shape} != M shape {shape}")
    for i, (x, y) in enumerate(samples):
        if x.shape[0] != shape[1]:
            raise ShapeError(f"sample {i}: X has {x.shape[0]} rows, expected {shape[1]}")
        if y.shape != (shape[0], x.shape[1]):
            raise ShapeError(
                f"sample {i}: Y shape {y.shape}, expected ({shape[0]}, {x.shape[1]})"
            )


def m_objective(samples, m, a_hat, b_hat, lambda_dual, t, activation="relu") -> float:
    """Value of g(M) for the current iterate."""
    gap = a_hat + b_hat - m
    total = float(np.sum(lambda_dual * gap)) + 0.5 * t * float(np.sum(gap * gap))
    for x, y in samples:
        err = y - apply_activation(m @ x, activation)
        total += float(np.sum(err * err))
    return total


def subgradient_m(samples, m, a_hat, b_hat, lambda_dual, t) -> np.ndarray:
    """Full subgradient of g at M for the ReLU response.

    The ReLU kink contributes subgradient 0 (the derivative at exactly
    zero is taken as 0, which keeps dead-zone gradients sparse).
    """
    _check_shapes(samples, m, a_hat, b_hat, lambda_dual)
    grad = -lambda_dual + t * (m - a_hat - b_hat)
    for x, y in samples:
        z = m @ x
        active = z > 0
        grad += 2.0 * ((np.maximum(z, 0.0) - y) * active) @ x.T
    return grad


def _data_subgradient(batch, m):
    grad = np.zeros_like(m)
    for x, y in batch:
        z = m @ x
        active = z > 0
        grad += 2.0 * ((np.maximum(z, 0.0) - y) * active) @ x.T
    return grad


def _solve_identity(samples, a_hat, b_hat, lambda_dual, t):
    # stationarity: M (2 sum X X^T + t I) = 2 sum Y X^T + L + t (A_hat + B_hat)
    m_cols = a_hat.shape[1]
    gram = np.zeros((m_cols, m_cols))
    rhs = lambda_dual + t * (a_hat + b_hat)
    for x, y in samples:
        gram += 2.0 * (x @ x.T)
        rhs = rhs + 2.0 * (y @ x.T)
    gram[np.diag_indices_from(gram)] += t
    return np.linalg.solve(gram.T, rhs.T).T


def solve_m(
    samples,
    a_hat: np.ndarray,
    b_hat: np.ndarray,
    lambda_dual: np.ndarray,
    t: float,
    warm_start: np.ndarray,
    cfg: SgdConfig,
    activation: str = "relu",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Approximately minimize g(M), never returning worse than the warm start.

    Deterministic for a fixed (cfg.seed, inputs); pass ``rng`` to derive
    the shuffling stream externally (the outer loop does this per
    iteration).  Raises :class:`DivergenceError` if the epoch objective
    exceeds 10x its initial value for 3 consecutive epochs.
    """
    if t <= 0:
        raise ParameterError(f"t must be > 0, got {t}")
    _check_shapes(samples, warm_start, a_hat, b_hat, lambda_dual)

    if len(samples) == 0:
        return a_hat + b_hat + lambda_dual / t

    if activation == "identity":
        exact = _solve_identity(samples, a_hat, b_hat, lambda_dual, t)
        obj_exact = m_objective(samples, exact, a_hat, b_hat, lambda_dual, t, activation)
        obj_warm = m_objective(samples, warm_start, a_hat, b_hat, lambda_dual, t, activation)
        return exact if obj_exact <= obj_warm else warm_start.copy()

    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    n_samples = len(samples)
    batch = min(cfg.batch_size, n_samples)
    m = warm_start.copy()
    velocity = np.zeros_like(m)
    best = warm_start.copy()
    best_obj = m_objective(samples, m, a_hat, b_hat, lambda_dual, t, activation)
    initial_obj = best_obj
    bad_epochs = 0
    trace = [best_obj]

    for _ in range(cfg.epochs):
        order = rng.permutation(n_samples)
        for start in range(0, n_samples, batch):
            idx = order[start : start + batch]
            picked = [samples[i] for i in idx]
            grad = (n_samples / len(picked)) * _data_subgradient(picked, m)
            grad += -lambda_dual + t * (m - a_hat - b_hat)
            velocity = cfg.momentum * velocity - cfg.learning_rate * grad
            m += velocity
        obj = m_objective(samples, m, a_hat, b_hat, lambda_dual, t, activation)
        trace.append(obj)
        if obj < best_obj:
            best_obj = obj
            best = m.copy()
        threshold = _DIVERGENCE_FACTOR * max(abs(initial_obj), 1e-12)
        if obj > threshold:
            bad_epochs += 1
            if bad_epochs >= _DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"inner solver diverged: objective {obj:.3e} exceeds "
                    f"{_DIVERGENCE_FACTOR}x initial {initial_obj:.3e} for "
                    f"{_DIVERGENCE_PATIENCE} consecutive epochs",
                    trace=trace,
                )
        else:
            bad_epochs = 0
    return best
