"""
Global linear neighborhood factorization.

Learns a nonnegative ``n x k`` factor ``F`` minimizing

    Q(F) = ||X - F F^T X||_F^2

either by the multiplicative rule or by Nesterov-accelerated projected
gradient descent with a backtracking line search.  ``F F^T`` is never
formed; every product goes through ``F^T X`` or ``X^T F`` so one evaluation
costs ``O(n k (m + k))``.

Both optimizers run in shared memory; parallelism comes from the threaded
BLAS underneath numpy.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ApgdParams",
    "GlnpResult",
    "IterationRecord",
    "glnp_apgd",
    "glnp_gradient",
    "glnp_multiplicative",
    "glnp_objective",
    "nesterov_next",
    "project_nonnegative",
    "projected_gradient",
    "write_convergence_csv",
]

_DENOM_FLOOR = 1e-12
_ROW_BLOCK = 4096


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective: float
    gradient_norm: float
    step_size: float


@dataclass
class GlnpResult:
    F: np.ndarray
    history: list[IterationRecord] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    # outer iterations whose line search ran out of inner steps
    line_search_exhausted: list[int] = field(default_factory=list)
    gammas: list[float] = field(default_factory=list)
    # per outer step: (Q(Y), Q(accepted), ls_sigma * <grad Q(Y), accepted - Y>)
    line_search: list[tuple[float, float, float]] = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.history[-1].objective if self.history else float("nan")


@dataclass(frozen=True)
class ApgdParams:
    max_iter: int = 100
    max_inner_iter: int = 20
    beta: float = 0.1
    ls_sigma: float = 0.01
    epsilon: float = 1e-4
    tol: float = 1e-5

    def __post_init__(self):
        if self.max_iter < 1 or self.max_inner_iter < 1:
            raise ValueError("iteration budgets must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.ls_sigma < 1:
            raise ValueError("ls_sigma must lie in (0, 1)")
        if self.epsilon < 0 or self.tol < 0:
            raise ValueError("epsilon and tol must be nonnegative")


def glnp_objective(X, F) -> float:
    X = np.asarray(X, dtype=float)
    F = np.asarray(F, dtype=float)
    A = F.T @ X
    total = 0.0
    for lo in range(0, X.shape[0], _ROW_BLOCK):
        R = X[lo:lo + _ROW_BLOCK] - F[lo:lo + _ROW_BLOCK] @ A
        total += float(np.einsum("ij,ij->", R, R))
    return total


def _factored_terms(X, F):
    B = X @ (X.T @ F)
    D = F @ (F.T @ B)
    G = B @ (F.T @ F)
    return B, D, G


def glnp_gradient(X, F) -> np.ndarray:
    """``2 F F^T X X^T F + 2 X X^T F F^T F - 4 X X^T F``."""
    X = np.asarray(X, dtype=float)
    F = np.asarray(F, dtype=float)
    B, D, G = _factored_terms(X, F)
    return 2.0 * D + 2.0 * G - 4.0 * B


def project_nonnegative(C) -> np.ndarray:
    return np.maximum(C, 0.0)


def projected_gradient(F, grad) -> np.ndarray:
    """Gradient with components that would leave the orthant zeroed at the boundary."""
    F = np.asarray(F)
    grad = np.asarray(grad)
    return np.where(F > 0, grad, np.minimum(grad, 0.0))


def nesterov_next(gamma: float) -> float:
    return (1.0 + math.sqrt(1.0 + 4.0 * gamma * gamma)) / 2.0


def _init_factor(n: int, k: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(n, k))


def _check_inputs(X, k: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a matrix")
    if np.any(X < 0):
        raise ValueError("GLNP needs nonnegative features; shift the data first")
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"rank k={k} outside [1, {X.shape[0]}]")
    return X


def glnp_multiplicative(X, k: int, max_iter: int = 100, tol: float = 1e-5, seed=0,
                        F0=None, record: bool = True) -> GlnpResult:
    """Multiplicative updates ``F <- F * sqrt(2B / (D + G))``.

    Stops once the largest entry-wise change in ``F`` drops below ``tol``.
    Records hold the objective and gradient norm *after* each update; the
    step size column is NaN since the rule has none.
    """
    X = _check_inputs(X, k)
    F = _init_factor(X.shape[0], k, seed) if F0 is None else np.array(F0, dtype=float)
    result = GlnpResult(F)
    if record:
        g = glnp_gradient(X, F)
        result.history.append(IterationRecord(0, glnp_objective(X, F), float(np.linalg.norm(g)), math.nan))
    for t in range(1, max_iter + 1):
        B, D, G = _factored_terms(X, F)
        F_new = F * np.sqrt(2.0 * B / np.maximum(D + G, _DENOM_FLOOR))
        change = float(np.max(np.abs(F_new - F)))
        F = F_new
        result.iterations = t
        if record:
            g = glnp_gradient(X, F)
            result.history.append(IterationRecord(t, glnp_objective(X, F), float(np.linalg.norm(g)), math.nan))
        if change < tol:
            result.converged = True
            break
    result.F = F
    return result


def glnp_apgd(X, k: int, params: ApgdParams | None = None, seed=0, F0=None) -> GlnpResult:
    """Nesterov-accelerated projected gradient descent with backtracking.

    Each outer step moves from the extrapolation point ``Y`` along the
    Frobenius-normalized negative gradient, projected onto ``F >= 0``.  The
    step starts at 1 and shrinks by ``beta`` until

        Q(Y_new) - Q(Y) <= ls_sigma * <grad Q(Y), Y_new - Y>

    (raw gradient on the right).  Outer iterations stop on a small projected
    gradient relative to the initial gradient, on a small relative objective
    change, or after ``max_iter`` steps.
    """
    params = params or ApgdParams()
    X = _check_inputs(X, k)
    F = _init_factor(X.shape[0], k, seed) if F0 is None else np.array(F0, dtype=float)
    result = GlnpResult(F)

    grad_F = glnp_gradient(X, F)
    grad0_norm = float(np.linalg.norm(grad_F))
    obj_F = glnp_objective(X, F)
    pg_norm = float(np.linalg.norm(projected_gradient(F, grad_F)))
    result.history.append(IterationRecord(0, obj_F, pg_norm, math.nan))
    if pg_norm <= params.epsilon * grad0_norm:
        result.converged = True
        return result

    Y = F
    gamma = 1.0
    result.gammas.append(gamma)
    for t in range(1, params.max_iter + 1):
        grad_Y = grad_F if Y is F else glnp_gradient(X, Y)
        gnorm = float(np.linalg.norm(grad_Y))
        obj_Y = obj_F if Y is F else glnp_objective(X, Y)
        if gnorm == 0.0:
            # Y is stationary in the unconstrained sense; nothing to descend along
            candidate, obj_c, step, decrease = Y, obj_Y, 0.0, 0.0
        else:
            direction = grad_Y / gnorm
            step = 1.0
            for inner in range(params.max_inner_iter):
                candidate = project_nonnegative(Y - step * direction)
                obj_c = glnp_objective(X, candidate)
                decrease = params.ls_sigma * float(np.vdot(grad_Y, candidate - Y))
                if obj_c - obj_Y <= decrease:
                    break
                if inner + 1 < params.max_inner_iter:
                    step *= params.beta
            else:
                result.line_search_exhausted.append(t)
        result.line_search.append((obj_Y, obj_c, decrease))

        F_prev, F, obj_prev = F, candidate, obj_F
        obj_F = obj_c
        gamma_next = nesterov_next(gamma)
        momentum = (gamma - 1.0) / gamma_next
        Y = F + momentum * (F - F_prev) if momentum else F
        gamma = gamma_next
        result.gammas.append(gamma)

        grad_F = glnp_gradient(X, F)
        pg_norm = float(np.linalg.norm(projected_gradient(F, grad_F)))
        result.history.append(IterationRecord(t, obj_F, pg_norm, step))
        result.iterations = t
        if pg_norm <= params.epsilon * grad0_norm:
            result.converged = True
            break
        if obj_F > 0 and abs(obj_F - obj_prev) / obj_F < params.tol:
            result.converged = True
            break
        if obj_F == 0:
            result.converged = True
            break
    result.F = F
    return result


def write_convergence_csv(history, stream=None, extra: dict | None = None) -> str:
    """Write ``iteration,objective,gradient_norm,step_size`` rows; returns the text."""
    buf = stream if stream is not None else io.StringIO()
    extra = extra or {}
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(extra) + ["iteration", "objective", "gradient_norm", "step_size"])
    for rec in history:
        writer.writerow(list(extra.values()) + [rec.iteration, repr(rec.objective),
                                                repr(rec.gradient_norm), repr(rec.step_size)])
    return buf.getvalue() if stream is None else ""
