"""
Label propagation on a normalized low-rank graph ``S ~= Fbar Fbar^T``.

The iterative solver runs on row chunks and only reduces ``k``-vectors;
the closed form goes through the Woodbury identity and solves a single
``k x k`` system.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .runtime import Collective, Communicator, RowPartitionedMatrix, WorkerGroup, resolve_group

__all__ = [
    "DEFAULT_ALPHA",
    "LabelState",
    "PropagationDiverged",
    "PropagationResult",
    "WoodburySolveError",
    "classify",
    "lp_closed_form",
    "lp_iterative",
    "lp_iterative_local",
]

DEFAULT_ALPHA = 0.01
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 1000
_DIVERGENCE_BOUND = 1e12


class PropagationDiverged(FloatingPointError):
    pass


class WoodburySolveError(np.linalg.LinAlgError):
    pass


@dataclass
class LabelState:
    """Initial labels ``f0`` in {-1, 0, +1} (0 = unlabeled) and the weight ``alpha``."""

    f0: np.ndarray
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=float).ravel()
        if not np.all(np.isin(self.f0, (-1.0, 0.0, 1.0))):
            raise ValueError("f0 entries must be -1, 0 or +1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass
class PropagationResult:
    f: np.ndarray
    iterations: int
    converged: bool
    changes: list[float] = field(default_factory=list)


def lp_iterative_local(comm: Communicator, Fbar_p, f0_p, offset: int, n: int, alpha: float,
                       max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL, seed=0):
    """Rank kernel for ``f <- alpha Fbar (Fbar^T f) + (1 - alpha) f0``.

    The random start is drawn for all ``n`` rows from ``seed`` and sliced,
    so the trajectory does not depend on the number of ranks.
    """
    Fbar_p = np.asarray(Fbar_p, dtype=float)
    f0_p = np.asarray(f0_p, dtype=float).ravel()
    rows = Fbar_p.shape[0]
    f = np.random.default_rng(seed).uniform(-1.0, 1.0, size=n)[offset:offset + rows]
    changes = []
    converged = False
    t = 0
    for t in range(1, max_iter + 1):
        f_old = f
        proj = comm.allreduce(Fbar_p.T @ f, Collective.ALLREDUCE_SUM)
        f = alpha * (Fbar_p @ proj) + (1.0 - alpha) * f0_p
        local = np.array([np.max(np.abs(f - f_old)) if rows else 0.0,
                          np.max(np.abs(f)) if rows else 0.0])
        change, size = comm.allreduce(local, Collective.ALLREDUCE_MAX)
        changes.append(float(change))
        if not np.isfinite(size) or size > _DIVERGENCE_BOUND:
            raise PropagationDiverged(f"propagation diverged at iteration {t}")
        if change < tol:
            converged = True
            break
    return f, t, converged, changes


def lp_iterative(Fbar: RowPartitionedMatrix, state: LabelState, max_iter: int = DEFAULT_MAX_ITER,
                 tol: float = DEFAULT_TOL, seed=0, group: WorkerGroup | None = None) -> PropagationResult:
    if state.f0.size != Fbar.n:
        raise ValueError(f"f0 has {state.f0.size} entries for {Fbar.n} rows")
    group = resolve_group(group, Fbar.nparts)
    rank_args = [(c, state.f0[lo:hi], lo) for c, (lo, hi) in zip(Fbar.chunks, Fbar.ranges)]
    out = group.run(lp_iterative_local, Fbar.n, state.alpha, max_iter, tol, seed, rank_args=rank_args)
    f = np.concatenate([o[0] for o in out])
    _, iterations, converged, changes = out[0]
    return PropagationResult(f, iterations, converged, changes)


def lp_closed_form(Fbar, f0, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """``(1 - alpha) (I - alpha Fbar Fbar^T)^{-1} f0`` through a ``k x k`` solve.

    Uses ``(I - a F F^T)^{-1} = I - F (F^T F - I/a)^{-1} F^T``.
    """
    if isinstance(Fbar, RowPartitionedMatrix):
        Fbar = Fbar.gather()
    Fbar = np.asarray(Fbar, dtype=float)
    f0 = np.asarray(f0, dtype=float).ravel()
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    k = Fbar.shape[1]
    M = Fbar.T @ Fbar - np.eye(k) / alpha
    try:
        z = scipy.linalg.solve(M, Fbar.T @ f0, assume_a="sym", check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise WoodburySolveError("Woodbury solve failed") from exc
    if not np.all(np.isfinite(z)):
        raise WoodburySolveError("Woodbury solve failed")
    return (1.0 - alpha) * (f0 - Fbar @ z)


def classify(f, test_mask=None) -> np.ndarray:
    """Sign of the scores, zero mapping to +1."""
    f = np.asarray(f, dtype=float).ravel()
    if test_mask is not None:
        f = f[np.asarray(test_mask)]
    return np.where(f >= 0, 1, -1).astype(np.int64)
