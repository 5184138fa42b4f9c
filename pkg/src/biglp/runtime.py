"""
Row-partitioned SPMD runtime.

Vocabulary
----------

replicated  : a value that is identical on every rank.
partitioned : a value split into contiguous row chunks, one per rank.
root-only   : a value that only exists on the root rank.

collective  : an operation every rank of the group must enter.

Workers are threads sharing one address space. Every numerical kernel is
written against :class:`Communicator`, so the same code runs with ``P = 1``
(inline, no threads) or ``P > 1`` (one thread per rank).  Reductions are
always evaluated in rank order ``0, 1, ..., P-1`` which makes results
bit-reproducible for a fixed ``P``.
"""
from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Collective",
    "CollectiveError",
    "CommStats",
    "Communicator",
    "RowPartitionedMatrix",
    "WorkerGroup",
    "block_ranges",
    "partition_rows",
]


class CollectiveError(RuntimeError):
    """Raised when ranks disagree on the arguments of a collective."""


class Collective(enum.Enum):
    ALLREDUCE_SUM = "allreduce_sum"
    ALLREDUCE_MIN = "allreduce_min"
    ALLREDUCE_MAX = "allreduce_max"
    BROADCAST = "broadcast"
    GATHER = "gather"


_REDUCERS = {
    Collective.ALLREDUCE_SUM: np.add,
    Collective.ALLREDUCE_MIN: np.minimum,
    Collective.ALLREDUCE_MAX: np.maximum,
}


def block_ranges(n: int, P: int) -> list[tuple[int, int]]:
    """Balanced contiguous ``[lo, hi)`` ranges; the first ``n % P`` get one extra row."""
    if P < 1:
        raise ValueError("need at least one worker")
    if n < 1:
        raise ValueError("need at least one row")
    if P > n:
        raise ValueError(f"more workers than rows ({P} > {n})")
    base, extra = divmod(n, P)
    ranges = []
    lo = 0
    for r in range(P):
        hi = lo + base + (1 if r < extra else 0)
        ranges.append((lo, hi))
        lo = hi
    return ranges


@dataclass
class CommStats:
    """Bytes a message-passing backend would have put on the wire.

    allreduce counts ``2 (P-1)`` copies of the buffer (reduce to root, then
    broadcast back), broadcast ``P-1`` copies and gather the non-root chunks.
    """

    bytes: int = 0
    calls: dict[str, int] = field(default_factory=dict)

    def record(self, kind: Collective, nbytes: int) -> None:
        self.bytes += int(nbytes)
        self.calls[kind.value] = self.calls.get(kind.value, 0) + 1

    def reset(self) -> None:
        self.bytes = 0
        self.calls.clear()


class _Rendezvous:
    """State shared by the ranks of one SPMD region."""

    def __init__(self, size: int, stats: CommStats):
        self.size = size
        self.barrier = threading.Barrier(size)
        self.slots: list[Any] = [None] * size
        self.stats = stats


class Communicator:
    """Per-rank handle on the group's collectives."""

    def __init__(self, rank: int, rendezvous: _Rendezvous):
        self.rank = rank
        self.size = rendezvous.size
        self._rv = rendezvous

    def _check_root(self, root: int) -> None:
        if not 0 <= root < self.size:
            raise CollectiveError(f"root {root} outside [0, {self.size})")

    def _exchange(self, value: Any) -> list[Any]:
        rv = self._rv
        rv.slots[self.rank] = value
        rv.barrier.wait()
        return list(rv.slots)

    def _release(self) -> None:
        # second barrier: nobody may overwrite a slot before every rank has read it
        self._rv.barrier.wait()

    def barrier(self) -> None:
        self._rv.barrier.wait()

    def allreduce(self, buffer, op: Collective = Collective.ALLREDUCE_SUM) -> np.ndarray:
        if op not in _REDUCERS:
            raise CollectiveError(f"{op} is not a reduction")
        buf = np.asarray(buffer)
        slots = self._exchange(buf)
        try:
            shapes = {s.shape for s in slots}
            if len(shapes) != 1:
                raise CollectiveError(
                    f"{op.value}: buffer shapes differ across ranks: "
                    + ", ".join(str(s.shape) for s in slots)
                )
            reduce = _REDUCERS[op]
            out = np.array(slots[0], copy=True)
            for s in slots[1:]:
                out = reduce(out, s)
            if self.rank == 0:
                self._rv.stats.record(op, 2 * (self.size - 1) * buf.nbytes)
        finally:
            self._release()
        return out

    def bcast(self, buffer, root: int = 0):
        """Root's buffer on every rank. Non-roots may pass ``None``."""
        self._check_root(root)
        buf = None if buffer is None else np.asarray(buffer)
        if self.rank == root and buf is None:
            raise CollectiveError("broadcast root passed no buffer")
        slots = self._exchange(buf)
        try:
            src = slots[root]
            for r, s in enumerate(slots):
                if s is not None and s.shape != src.shape:
                    raise CollectiveError(
                        f"broadcast: rank {r} buffer shape {s.shape} != root shape {src.shape}"
                    )
            out = np.array(src, copy=True)
            if self.rank == root:
                self._rv.stats.record(Collective.BROADCAST, (self.size - 1) * src.nbytes)
        finally:
            self._release()
        return out

    def gather(self, buffer, root: int = 0):
        """Rank-ordered concatenation along axis 0 on root; ``None`` elsewhere.

        Chunks may differ in leading length (as row chunks do) but must agree
        on the trailing shape.
        """
        self._check_root(root)
        buf = np.asarray(buffer)
        slots = self._exchange(buf)
        try:
            trailing = {s.shape[1:] for s in slots}
            if len(trailing) != 1 or any(s.ndim == 0 for s in slots):
                raise CollectiveError(
                    "gather: chunk shapes incompatible across ranks: "
                    + ", ".join(str(s.shape) for s in slots)
                )
            out = None
            if self.rank == root:
                out = np.concatenate(slots, axis=0)
                moved = sum(s.nbytes for r, s in enumerate(slots) if r != root)
                self._rv.stats.record(Collective.GATHER, moved)
        finally:
            self._release()
        return out

    def collective(self, kind: Collective, buffer, root: int = 0):
        if kind in _REDUCERS:
            return self.allreduce(buffer, kind)
        if kind is Collective.BROADCAST:
            return self.bcast(buffer, root)
        if kind is Collective.GATHER:
            return self.gather(buffer, root)
        raise CollectiveError(f"unknown collective {kind!r}")


class WorkerGroup:
    """``P`` virtual workers executing one function in SPMD style.

    >>> group = WorkerGroup(3)
    >>> group.run(lambda comm: comm.allreduce([comm.rank + 1.0])[0])
    [6.0, 6.0, 6.0]
    """

    def __init__(self, P: int = 1):
        if P < 1:
            raise ValueError("need at least one worker")
        self.size = int(P)
        self.stats = CommStats()

    def row_ranges(self, n: int) -> list[tuple[int, int]]:
        return block_ranges(n, self.size)

    def run(self, fn: Callable[..., Any], *args, rank_args: Sequence[tuple] | None = None,
            **kwargs) -> list[Any]:
        """Call ``fn(comm, *rank_args[r], *args, **kwargs)`` on every rank.

        Returns the per-rank results in rank order.  If any rank raises, the
        group is torn down and the first non-barrier exception is re-raised.
        """
        P = self.size
        if rank_args is not None and len(rank_args) != P:
            raise ValueError(f"rank_args has {len(rank_args)} entries for {P} workers")
        rv = _Rendezvous(P, self.stats)
        results: list[Any] = [None] * P
        errors: list[BaseException | None] = [None] * P

        def body(rank: int) -> None:
            comm = Communicator(rank, rv)
            extra = tuple(rank_args[rank]) if rank_args is not None else ()
            try:
                results[rank] = fn(comm, *extra, *args, **kwargs)
            except BaseException as exc:  # noqa: BLE001 - re-raised by the controller
                errors[rank] = exc
                rv.barrier.abort()

        if P == 1:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(r,), name=f"biglp-rank{r}")
                       for r in range(P)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

        real = [e for e in errors if e is not None and not isinstance(e, threading.BrokenBarrierError)]
        if real:
            raise real[0]
        broken = [e for e in errors if e is not None]
        if broken:
            raise broken[0]
        return results


@dataclass
class RowPartitionedMatrix:
    """Dense ``n x d`` matrix stored as contiguous row chunks, one per rank."""

    chunks: list[np.ndarray]
    ranges: list[tuple[int, int]]

    def __post_init__(self):
        if len(self.chunks) != len(self.ranges):
            raise ValueError("one chunk per row range required")
        widths = {c.shape[1:] for c in self.chunks}
        if len(widths) != 1:
            raise ValueError("all chunks must share the trailing shape")
        expected = 0
        for (lo, hi), c in zip(self.ranges, self.chunks):
            if lo != expected or hi - lo != c.shape[0]:
                raise ValueError("row ranges must be contiguous and match chunk sizes")
            expected = hi

    @property
    def nparts(self) -> int:
        return len(self.chunks)

    @property
    def n(self) -> int:
        return self.ranges[-1][1]

    @property
    def d(self) -> int:
        first = self.chunks[0]
        return first.shape[1] if first.ndim > 1 else 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) + self.chunks[0].shape[1:]

    def gather(self) -> np.ndarray:
        return np.concatenate(self.chunks, axis=0)

    @classmethod
    def from_chunks(cls, chunks: Sequence[np.ndarray]) -> "RowPartitionedMatrix":
        ranges = []
        lo = 0
        for c in chunks:
            ranges.append((lo, lo + c.shape[0]))
            lo += c.shape[0]
        return cls(list(chunks), ranges)


def partition_rows(matrix, P: int) -> RowPartitionedMatrix:
    """Split ``matrix`` (or a vector) into ``P`` balanced contiguous row blocks."""
    A = np.asarray(matrix)
    if A.ndim == 0:
        raise ValueError("cannot partition a scalar")
    ranges = block_ranges(A.shape[0], P)
    return RowPartitionedMatrix([np.array(A[lo:hi], copy=True) for lo, hi in ranges], ranges)


def resolve_group(group: WorkerGroup | None, P: int) -> WorkerGroup:
    if group is None:
        return WorkerGroup(P)
    if group.size != P:
        raise ValueError(f"worker group has {group.size} workers, data has {P} chunks")
    return group
