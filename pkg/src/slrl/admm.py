"""Corrected 3-block ADMM for the sparse-plus-low-rank layer decomposition.

A lowered weight matrix W is approximated by A + B where A is
column-structured sparse and B is low rank, by minimizing the regularized
post-activation reconstruction error over N sampled feature-map pairs:

    min_{A,B}  sum_i ||Y_i - r((A + B) X_i)||_F^2
               + lambda1 * ||A||_{2,1} + lambda2 * ||B||_*

An auxiliary coupling variable M with constraint A + B = M splits this
into three blocks per iteration: a column soft threshold for A, singular
value thresholding for B, an inexact SGD solve for M, and the dual ascent
step for L.  The direct 3-block extension of ADMM is not convergent in
general, so every iteration ends with a correction step that linearly
recombines (B, M, L) with parameters tau and alpha:

    (B, M, L)_{k+1} = (B, M, L)_k - alpha * T * ((B, M, L)_k - hat)
    T = [[ I, (tau-1) I, 0 ],
         [ tau I,     I, 0 ],
         [ 0,         0, I ]]

A is not corrected; the new A is the threshold output itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BlowupError, ParameterError, ShapeError
from .prox import l21_norm, nuclear_norm, prox_l21, svt
from .sgd import SgdConfig, solve_m
from .tensor import apply_activation, as_matrix

MODES = ("both", "sparse_only", "lowrank_only")
ACTIVATIONS = ("relu", "identity")

# objective-plateau window used alongside the residual in the stop rule
_STALL_WINDOW = 5


@dataclass(frozen=True)
class HyperParams:
    """Solver hyperparameters.

    The recommended regime is lambda1 in [0.08, 0.3] with lambda2 about
    2.5-3x lambda1; the penalty t stays fixed at 1e-3 (no adaptive
    schedule).  tau and alpha are the correction-step constants.
    """

    lambda1: float
    lambda2: float
    t: float = 1e-3
    tau: float = 0.5
    alpha: float = 0.75
    tol: float = 1e-4
    max_iter: int = 500
    sgd: SgdConfig = field(default_factory=SgdConfig)
    mode: str = "both"

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "t", "tol"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.max_iter < 1:
            raise ParameterError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class LayerProblem:
    """One layer's decomposition problem: lowered weights plus sampled responses.

    ``samples`` is a list of (X_i, Y_i) pairs; each X_i is m-by-p_i and
    Y_i is n-by-p_i for an n-by-m weight matrix.  With
    ``activation="identity"`` the data term is the plain linear
    reconstruction error, the baseline the nonlinear objective is
    compared against.
    """

    w: np.ndarray
    samples: list
    activation: str = "relu"

    def __post_init__(self):
        self.w = as_matrix(self.w, "w")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )
        n, m = self.w.shape
        checked = []
        for i, (x, y) in enumerate(self.samples):
            x = as_matrix(x, f"samples[{i}].x")
            y = as_matrix(y, f"samples[{i}].y")
            if x.shape[0] != m:
                raise ShapeError(
                    f"samples[{i}]: X has {x.shape[0]} rows, expected {m}"
                )
            if y.shape != (n, x.shape[1]):
                raise ShapeError(
                    f"samples[{i}]: Y shape {y.shape}, expected ({n}, {x.shape[1]})"
                )
            checked.append((x, y))
        self.samples = checked

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def signal_energy(self) -> float:
        return float(sum(np.sum(y * y) for _, y in self.samples))


@dataclass
class AdmmState:
    """Iterates and per-iteration history of one decomposition run."""

    a: np.ndarray
    b: np.ndarray
    m: np.ndarray
    lambda_dual: np.ndarray
    iteration: int = 0
    converged: bool = False
    history: list = field(default_factory=list)


def objective(problem: LayerProblem, a, b, hp: HyperParams) -> dict:
    """Terms of the regularized reconstruction objective at (a, b)."""
    data = 0.0
    ab = a + b
    for x, y in problem.samples:
        err = y - apply_activation(ab @ x, problem.activation)
        data += float(np.sum(err * err))
    l21 = hp.lambda1 * l21_norm(a)
    nuc = hp.lambda2 * nuclear_norm(b) if np.any(b) else 0.0
    return {
        "total": data + l21 + nuc,
        "data_term": data,
        "l21_term": l21,
        "nuclear_term": nuc,
    }


def reconstruction_error(problem: LayerProblem, a, b, activation=None) -> float:
    """Post-activation data term sum_i ||Y_i - r((a+b) X_i)||_F^2."""
    kind = activation if activation is not None else problem.activation
    ab = a + b
    return float(
        sum(
            np.sum((y - apply_activation(ab @ x, kind)) ** 2)
            for x, y in problem.samples
        )
    )


def correction_step(hat, prev, tau: float = 0.5, alpha: float = 0.75):
    """Apply the 3x3 block correction to (b, m, lambda) triples.

    ``hat`` and ``prev`` are (b, m, lambda) tuples of equally shaped
    matrices; returns the corrected triple.  With hat == prev this is the
    identity (the fixed point of the map).
    """
    b_hat, m_hat, lam_hat = hat
    b_prev, m_prev, lam_prev = prev
    shapes = {b_hat.shape, m_hat.shape, lam_hat.shape,
              b_prev.shape, m_prev.shape, lam_prev.shape}
    if len(shapes) != 1:
        raise ShapeError(f"correction operands disagree in shape: {sorted(shapes)}")
    db = b_prev - b_hat
    dm = m_prev - m_hat
    dlam = lam_prev - lam_hat
    b_next = b_prev - alpha * (db + (tau - 1.0) * dm)
    m_next = m_prev - alpha * (tau * db + dm)
    lam_next = lam_prev - alpha * dlam
    return b_next, m_next, lam_next


def _guard_finite(iteration, **mats):
    for name, mat in mats.items():
        if not np.isfinite(mat).all():
            raise BlowupError(
                f"non-finite iterate {name} at iteration {iteration}",
                iteration=iteration,
                state={k: v.copy() for k, v in mats.items()},
            )


def _stalled(history, tol) -> bool:
    if len(history) < _STALL_WINDOW:
        return False
    window = [rec["objective"] for rec in history[-_STALL_WINDOW:]]
    spread = max(window) - min(window)
    return spread <= tol * max(1.0, abs(window[-1]))


def decompose(problem: LayerProblem, hp: HyperParams):
    """Run the corrected ADMM loop; returns (a, b, state).

    Initialization: A = 0, B = W, M = W, L = 0 (zero constraint residual
    with the pretrained weights intact).  Stops when the relative primal
    residual ||A+B-M||_F / max(1, ||M||_F) falls below ``hp.tol`` and the
    objective has moved less than ``hp.tol`` (relative) over the last 5
    iterations, or at ``hp.max_iter``.

    Modes: ``sparse_only`` pins B = 0 and skips the SVT step entirely;
    ``lowrank_only`` pins A = 0 and skips the column threshold.
    """
    n, m_cols = problem.shape
    w = problem.w
    zeros = np.zeros((n, m_cols))

    a = zeros.copy()
    b = zeros.copy() if hp.mode == "sparse_only" else w.copy()
    m = w.copy()
    lam = zeros.copy()
    state = AdmmState(a=a, b=b, m=m, lambda_dual=lam)

    for k in range(hp.max_iter):
        if hp.mode == "lowrank_only":
            a_hat = zeros.copy()
        else:
            a_hat = prox_l21(m - b - lam / hp.t, hp.lambda1 / hp.t)

        if hp.mode == "sparse_only":
            b_hat = zeros.copy()
        else:
            b_hat, _ = svt(m - a_hat - lam / hp.t, hp.lambda2 / hp.t)

        m_hat = solve_m(
            problem.samples,
            a_hat,
            b_hat,
            lam,
            hp.t,
            warm_start=m,
            cfg=hp.sgd,
            activation=problem.activation,
            rng=np.random.default_rng([hp.sgd.seed, k]),
        )
        lam_hat = lam + hp.t * (a_hat + b_hat - m_hat)

        a = a_hat
        b, m, lam = correction_step(
            (b_hat, m_hat, lam_hat), (b, m, lam), hp.tau, hp.alpha
        )
        if hp.mode == "sparse_only":
            b = zeros.copy()  # keep the pin exact; correction mixes in dm otherwise
        elif hp.mode == "lowrank_only":
            a = zeros.copy()

        _guard_finite(k, a=a, b=b, m=m, lam=lam)

        terms = objective(problem, a, b, hp)
        residual = float(np.linalg.norm(a + b - m))
        rel_residual = residual / max(1.0, float(np.linalg.norm(m)))
        state.history.append(
            {
                "iteration": k + 1,
                "objective": terms["total"],
                "data_term": terms["data_term"],
                "l21_term": terms["l21_term"],
                "nuclear_term": terms["nuclear_term"],
                "primal_residual": residual,
                "rel_residual": rel_residual,
            }
        )
        state.iteration = k + 1
        if rel_residual <= hp.tol and _stalled(state.history, hp.tol):
            state.converged = True
            break

    state.a, state.b, state.m, state.lambda_dual = a, b, m, lam
    return a, b, state


def with_mode(hp: HyperParams, mode: str) -> HyperParams:
    """Copy of hp with a different mode."""
    return replace(hp, mode=mode)
