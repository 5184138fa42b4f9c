"""
Nystrom low-rank approximation of the RBF kernel matrix.

``W ~= C G^+ C^T = F F^T`` where ``G`` is the kernel among ``k`` landmark
points and ``C`` the kernel between every row and the landmarks.  Landmarks
are either sampled rows or k-means centroids.  All heavy work is done on row
chunks; only ``O(k)`` vectors, ``k x d`` landmarks and ``k x k`` matrices are
communicated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist

from .runtime import (
    Collective,
    Communicator,
    RowPartitionedMatrix,
    WorkerGroup,
    block_ranges,
    resolve_group,
)

__all__ = [
    "KernelParams",
    "LandmarkSet",
    "RankDeficientKernelError",
    "median_sigma",
    "nystrom_factor",
    "nystrom_factor_local",
    "rbf",
    "rbf_matrix",
    "sample_kmeans",
    "sample_kmeans_local",
    "sample_random",
    "sample_random_local",
]

DEFAULT_PINV_TOL = 1e-12
DEFAULT_KMEANS_ITER = 5


class RankDeficientKernelError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelParams:
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"RBF width must be positive, got {self.sigma!r}")


@dataclass
class LandmarkSet:
    """``k x d`` landmark points, plus their global row ids when they are data rows."""

    points: np.ndarray
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] < 1:
            raise ValueError("empty landmark set")
        if self.source_indices is not None:
            idx = np.asarray(self.source_indices, dtype=np.int64)
            if idx.shape != (self.points.shape[0],) or np.unique(idx).size != idx.size:
                raise ValueError("source indices must be distinct, one per landmark")
            self.source_indices = idx

    @property
    def k(self) -> int:
        return self.points.shape[0]


def _sigma(params) -> float:
    return params.sigma if isinstance(params, KernelParams) else KernelParams(float(params)).sigma


def rbf(a, b, params) -> float:
    """``exp(-||a - b||^2 / (2 sigma^2))`` for two vectors."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("vectors differ in length")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input to rbf")
    s = _sigma(params)
    diff = a - b
    return float(np.exp(-np.dot(diff, diff) / (2.0 * s * s)))


def rbf_matrix(A, B, params) -> np.ndarray:
    """Pairwise RBF kernel between the rows of ``A`` and ``B``."""
    s = _sigma(params)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[0] == 0 or B.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * s * s))


def median_sigma(X, seed=0, max_rows: int = 1000) -> float:
    """Median pairwise Euclidean distance over a seeded subsample of rows."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    if X.shape[0] > max_rows:
        X = X[np.sort(rng.choice(X.shape[0], size=max_rows, replace=False))]
    dist = pdist(X)
    dist = dist[dist > 0]
    if dist.size == 0:
        return 1.0
    return float(np.median(dist))


# -- landmark selection -----------------------------------------------------

def _owner_broadcast(comm: Communicator, Xp, offset: int, ranges, indices) -> np.ndarray:
    """Every rank ends up with ``X[indices]``; each owner ships the rows it holds."""
    d = Xp.shape[1]
    out = np.empty((len(indices), d))
    for r, (lo, hi) in enumerate(ranges):
        sel = np.flatnonzero((indices >= lo) & (indices < hi))
        if sel.size == 0:
            continue
        payload = Xp[indices[sel] - offset] if comm.rank == r else None
        out[sel] = comm.bcast(payload, root=r)
    return out


def sample_random_local(comm: Communicator, Xp, offset: int, n: int, k: int, seed) -> LandmarkSet:
    """Rank kernel: root shuffles ``[0, n)``, broadcasts the first ``k`` ids, owners ship rows."""
    if not 1 <= k <= n:
        raise ValueError(f"cannot sample k={k} landmarks from n={n} rows")
    Xp = np.asarray(Xp, dtype=float)
    ids = np.random.default_rng(seed).permutation(n)[:k] if comm.rank == 0 else None
    ids = comm.bcast(ids, root=0).astype(np.int64)
    ranges = block_ranges(n, comm.size)
    points = _owner_broadcast(comm, Xp, offset, ranges, ids)
    return LandmarkSet(points, ids)


def sample_random(X: RowPartitionedMatrix, k: int, seed=0, group: WorkerGroup | None = None) -> LandmarkSet:
    if not 1 <= k <= X.n:
        raise ValueError(f"cannot sample k={k} landmarks from n={X.n} rows")
    group = resolve_group(group, X.nparts)
    out = group.run(sample_random_local, X.n, k, seed,
                    rank_args=[(c, lo) for c, (lo, _) in zip(X.chunks, X.ranges)])
    return out[0]


def sample_kmeans_local(comm: Communicator, Xp, offset: int, n: int, k: int,
                        max_iter: int = DEFAULT_KMEANS_ITER, seed=0) -> LandmarkSet:
    """Rank kernel: distributed Lloyd iterations seeded by random sampling.

    Runs exactly ``max_iter`` rounds.  Per-cluster counts and displacement
    sums are reduced over all ranks; a cluster that receives no points keeps
    its previous centroid.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    Xp = np.asarray(Xp, dtype=float)
    centroids = sample_random_local(comm, Xp, offset, n, k, seed).points
    d = Xp.shape[1]
    for _ in range(max_iter):
        if Xp.shape[0]:
            nearest = np.argmin(cdist(Xp, centroids, "sqeuclidean"), axis=1)
        else:
            nearest = np.empty(0, dtype=np.int64)
        counts = np.bincount(nearest, minlength=k).astype(float)
        # sums of offsets from the current centroid keep the mean exact for coincident points
        sums = np.zeros((k, d))
        np.add.at(sums, nearest, Xp - centroids[nearest])
        packed = comm.allreduce(np.hstack([counts[:, None], sums]), Collective.ALLREDUCE_SUM)
        total, shift = packed[:, 0], packed[:, 1:]
        filled = total > 0
        centroids = centroids.copy()
        centroids[filled] += shift[filled] / total[filled, None]
    return LandmarkSet(centroids, None)


def sample_kmeans(X: RowPartitionedMatrix, k: int, max_iter: int = DEFAULT_KMEANS_ITER, seed=0,
                  group: WorkerGroup | None = None) -> LandmarkSet:
    if not 1 <= k <= X.n:
        raise ValueError(f"cannot pick k={k} centroids from n={X.n} rows")
    group = resolve_group(group, X.nparts)
    out = group.run(sample_kmeans_local, X.n, k, max_iter, seed,
                    rank_args=[(c, lo) for c, (lo, _) in zip(X.chunks, X.ranges)])
    return out[0]


# -- factorization ------------------------------------------------------------

def _landmark_eigs(G: np.ndarray, pinv_tol: float) -> tuple[np.ndarray, np.ndarray]:
    if not np.all(np.isfinite(G)):
        raise RankDeficientKernelError("rank-deficient landmark kernel (non-finite entries)")
    G = 0.5 * (G + G.T)
    vals, vecs = scipy.linalg.eigh(G)
    vals = np.clip(vals, 0.0, None)[::-1]
    vecs = vecs[:, ::-1]
    lam_max = vals[0] if vals.size else 0.0
    keep = vals > pinv_tol * lam_max
    if lam_max <= 0 or not np.any(keep):
        raise RankDeficientKernelError("rank-deficient landmark kernel")
    return vals[keep], vecs[:, keep]


def nystrom_factor_local(comm: Communicator, Xp, landmarks: LandmarkSet, params,
                         pinv_tol: float = DEFAULT_PINV_TOL) -> np.ndarray:
    """Rank kernel returning this rank's rows of ``F = C V diag(1/sqrt(lambda))``.

    The rows of ``G`` are built in blocks across ranks and gathered on the
    root, which eigendecomposes it and broadcasts the kept eigenpairs.
    """
    if not 0 < pinv_tol < 1:
        raise ValueError("pinv_tol must lie in (0, 1)")
    L = landmarks.points
    k = L.shape[0]
    P = comm.size
    if k >= P:
        lo, hi = block_ranges(k, P)[comm.rank]
    else:
        lo, hi = (comm.rank, comm.rank + 1) if comm.rank < k else (k, k)
    G = comm.gather(rbf_matrix(L[lo:hi], L, params), root=0)
    vals = vecs = None
    failed = 0.0
    if comm.rank == 0:
        try:
            vals, vecs = _landmark_eigs(G, pinv_tol)
        except RankDeficientKernelError:
            failed = 1.0
    if comm.allreduce([failed], Collective.ALLREDUCE_MAX)[0]:
        raise RankDeficientKernelError("rank-deficient landmark kernel")
    vals = comm.bcast(vals, root=0)
    vecs = comm.bcast(vecs, root=0)
    C = rbf_matrix(Xp, L, params)
    return (C @ vecs) / np.sqrt(vals)


def nystrom_factor(X: RowPartitionedMatrix, landmarks: LandmarkSet, params,
                   pinv_tol: float = DEFAULT_PINV_TOL, group: WorkerGroup | None = None) -> RowPartitionedMatrix:
    group = resolve_group(group, X.nparts)
    out = group.run(nystrom_factor_local, landmarks, params, pinv_tol,
                    rank_args=[(c,) for c in X.chunks])
    return RowPartitionedMatrix(out, list(X.ranges))
