"""Reference classifiers: k-nearest neighbors and dense-kernel label propagation."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .labelprop import DEFAULT_ALPHA, DEFAULT_MAX_ITER, DEFAULT_TOL
from .nystrom import rbf_matrix

__all__ = [
    "DENSE_LP_LIMIT",
    "NeighborQuery",
    "accuracy",
    "dense_kernel",
    "full_lp",
    "knn_predict",
    "knn_predict_many",
    "symmetric_normalize",
]

DENSE_LP_LIMIT = 20_000


@dataclass
class NeighborQuery:
    train_points: np.ndarray
    train_labels: np.ndarray
    num_neighbors: int = 5

    def __post_init__(self):
        self.train_points = np.atleast_2d(np.asarray(self.train_points, dtype=float))
        self.train_labels = np.asarray(self.train_labels).ravel()
        if self.train_points.shape[0] == 0:
            raise ValueError("empty training set")
        if self.train_labels.size != self.train_points.shape[0]:
            raise ValueError("one label per training point required")
        if not np.all(np.isin(self.train_labels, (-1, 1))):
            raise ValueError("training labels must be -1 or +1")
        if not 1 <= self.num_neighbors <= self.train_points.shape[0]:
            raise ValueError(
                f"num_neighbors={self.num_neighbors} with {self.train_points.shape[0]} training points"
            )


def _vote(dist_rows: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    # stable sort: equal distances keep training order, so the lower index wins
    order = np.argsort(dist_rows, axis=1, kind="stable")[:, :m]
    votes = labels[order].sum(axis=1)
    return np.where(votes >= 0, 1, -1)


def knn_predict(query, nq: NeighborQuery) -> int:
    """Majority label among the ``num_neighbors`` closest training points."""
    q = np.asarray(query, dtype=float).reshape(1, -1)
    return int(knn_predict_many(q, nq)[0])


def knn_predict_many(queries, nq: NeighborQuery, workers: int = 1, block: int = 1024) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if Q.shape[1] != nq.train_points.shape[1]:
        raise ValueError("query dimension does not match training points")
    labels = nq.train_labels.astype(np.int64)

    def run(lo: int) -> np.ndarray:
        dist = cdist(Q[lo:lo + block], nq.train_points, "sqeuclidean")
        return _vote(dist, labels, nq.num_neighbors)

    starts = range(0, Q.shape[0], block)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, starts))
    else:
        parts = [run(lo) for lo in starts]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def dense_kernel(X, kernel: str = "rbf", sigma: float | None = None) -> np.ndarray:
    """Dense similarity matrix.  The linear kernel shifts features to be nonnegative
    and clamps any remaining negative products to zero."""
    X = np.asarray(X, dtype=float)
    if kernel == "rbf":
        if sigma is None:
            raise ValueError("RBF kernel needs sigma")
        return rbf_matrix(X, X, sigma)
    if kernel == "linear":
        col_min = X.min(axis=0)
        Xs = X - np.where(col_min < 0, col_min, 0.0)
        return np.maximum(Xs @ Xs.T, 0.0)
    raise ValueError(f"unknown kernel {kernel!r}")


def symmetric_normalize(W) -> np.ndarray:
    """``D^{-1/2} W D^{-1/2}`` with ``D`` the row sums of ``W``."""
    W = np.asarray(W, dtype=float)
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError(f"degenerate row degree at row {int(np.flatnonzero(deg <= 0)[0])}")
    inv = 1.0 / np.sqrt(deg)
    return W * inv[:, None] * inv[None, :]


def full_lp(X, f0, alpha: float = DEFAULT_ALPHA, sigma: float | None = None, kernel: str = "rbf",
            max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL, W=None) -> np.ndarray:
    """Label propagation ``f <- alpha S f + (1 - alpha) f0`` on the full kernel graph.

    Starts from ``f0`` and iterates until the largest change drops below
    ``tol``.  Pass ``W`` to reuse a precomputed similarity matrix.
    """
    n = np.shape(X)[0] if W is None else np.shape(W)[0]
    if n > DENSE_LP_LIMIT:
        raise ValueError(f"dense LP refused for n={n} > {DENSE_LP_LIMIT}")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    S = symmetric_normalize(dense_kernel(X, kernel, sigma) if W is None else W)
    f0 = np.asarray(f0, dtype=float).ravel()
    f = f0.copy()
    for _ in range(max_iter):
        f_new = alpha * (S @ f) + (1.0 - alpha) * f0
        done = np.max(np.abs(f_new - f)) < tol
        f = f_new
        if done:
            break
    return f


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted).ravel()
    truth = np.asarray(truth).ravel()
    if predicted.size != truth.size:
        raise ValueError(f"length mismatch: {predicted.size} predictions, {truth.size} labels")
    if predicted.size == 0:
        raise ValueError("empty prediction vector")
    return float(np.mean(predicted == truth))
