"""Column shift to nonnegativity and symmetric low-rank normalization."""
from __future__ import annotations

import numpy as np

from .runtime import Collective, Communicator, RowPartitionedMatrix, WorkerGroup, resolve_group

__all__ = [
    "DegenerateRowError",
    "NonFiniteFeatureError",
    "par_normalize",
    "par_normalize_local",
    "par_shift",
    "par_shift_local",
]


class NonFiniteFeatureError(ValueError):
    pass


class DegenerateRowError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"degenerate row degree at global row {row}")
        self.row = row


def par_shift_local(comm: Communicator, Xp: np.ndarray) -> np.ndarray:
    """Rank kernel: subtract each column's global minimum where it is negative."""
    Xp = np.asarray(Xp, dtype=float)
    bad = comm.allreduce([float(not np.all(np.isfinite(Xp)))], Collective.ALLREDUCE_MAX)
    if bad[0]:
        raise NonFiniteFeatureError("non-finite feature")
    d = Xp.shape[1]
    local_min = Xp.min(axis=0) if Xp.shape[0] else np.full(d, np.inf)
    col_min = comm.allreduce(local_min, Collective.ALLREDUCE_MIN)
    shift = np.where(col_min < 0, col_min, 0.0)
    return Xp - shift


def par_shift(X: RowPartitionedMatrix, group: WorkerGroup | None = None) -> RowPartitionedMatrix:
    group = resolve_group(group, X.nparts)
    out = group.run(par_shift_local, rank_args=[(c,) for c in X.chunks])
    return RowPartitionedMatrix(out, list(X.ranges))


def par_normalize_local(comm: Communicator, Fp: np.ndarray, offset: int = 0) -> np.ndarray:
    """Rank kernel: ``F_ij / sqrt(F_i . colsum(F))`` with the column sums reduced globally.

    ``offset`` is the global index of this rank's first row, used in error
    messages only.
    """
    Fp = np.asarray(Fp, dtype=float)
    col_sum = comm.allreduce(Fp.sum(axis=0), Collective.ALLREDUCE_SUM)
    degree = Fp @ col_sum
    bad = np.flatnonzero(~(degree > 0))
    # every rank must learn about a failure, otherwise the others hang in the next collective
    first_bad = comm.allreduce(
        [offset + bad[0] if bad.size else np.inf], Collective.ALLREDUCE_MIN
    )[0]
    if np.isfinite(first_bad):
        raise DegenerateRowError(int(first_bad))
    return Fp / np.sqrt(degree)[:, None]


def par_normalize(F: RowPartitionedMatrix, group: WorkerGroup | None = None) -> RowPartitionedMatrix:
    group = resolve_group(group, F.nparts)
    out = group.run(par_normalize_local, rank_args=[(c, lo) for c, (lo, _) in zip(F.chunks, F.ranges)])
    return RowPartitionedMatrix(out, list(F.ranges))
