"""Dataset loading, subsampling and train/test splitting."""
from __future__ import annotations

import collections
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Dataset",
    "DatasetError",
    "load_dataset",
    "save_csv",
    "split_train_test",
    "subsample",
]


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=np.int64).ravel()
        if self.X.shape[0] != self.y.size:
            raise DatasetError("one label per row required")
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("dataset contains NaN or infinite features")
        if not np.all(np.isin(self.y, (-1, 1))):
            raise DatasetError("labels must be -1 or +1")
        if np.unique(self.y).size != 2:
            raise DatasetError("both classes must be present")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def _binarize(raw: np.ndarray, classes) -> tuple[np.ndarray, np.ndarray]:
    """Map raw labels to +-1; returns ``(keep_mask, y)``.

    ``classes=None`` accepts exactly two distinct labels (the larger one
    becomes +1).  ``classes=(pos, neg)`` keeps only those two labels and
    ``classes="top2"`` keeps the two most frequent ones.
    """
    counts = collections.Counter(raw.tolist())
    if classes is None:
        if len(counts) > 2:
            raise DatasetError(f"binary tasks only: found {len(counts)} classes {sorted(counts)}")
        if len(counts) < 2:
            raise DatasetError("binary tasks need two classes")
        neg, pos = sorted(counts)
    elif classes == "top2":
        top = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:2]
        if len(top) < 2:
            raise DatasetError("binary tasks need two classes")
        neg, pos = sorted(label for label, _ in top)
    else:
        pos, neg = (float(c) for c in classes)
        if pos == neg:
            raise DatasetError("positive and negative class must differ")
    keep = (raw == pos) | (raw == neg)
    return keep, np.where(raw[keep] == pos, 1, -1)


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or all(not f.strip() for f in fields):
                continue
            if width is None:
                width = len(fields)
                if width < 2:
                    raise DatasetError(f"line {lineno}: need a label and at least one feature")
            elif len(fields) != width:
                raise DatasetError(f"line {lineno}: expected {width} fields, found {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from None
    if not rows:
        raise DatasetError(f"{path}: no samples")
    arr = np.array(rows)
    return arr[:, 1:], arr[:, 0]


def _read_svmlight(path: Path, n_features: int | None) -> tuple[np.ndarray, np.ndarray]:
    from sklearn.datasets import load_svmlight_file

    try:
        X, raw = load_svmlight_file(str(path), n_features=n_features, dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    return X.toarray(), raw


def load_dataset(path, fmt: str | None = None, classes=None, n_features: int | None = None,
                 name: str | None = None) -> Dataset:
    """Read a binary classification dataset.

    ``fmt`` is ``"csv"`` (label in the first column) or ``"svmlight"``
    (``label idx:val ...``, densified); by default it is guessed from the
    file extension.  ``path`` may also be a list of files in the same format
    (for example a train/test pair); their rows are concatenated before the
    classes are chosen.
    """
    paths = [Path(p) for p in path] if isinstance(path, (list, tuple)) else [Path(path)]
    if not paths:
        raise DatasetError("no input files")
    if fmt is None:
        fmt = "csv" if paths[0].suffix.lower() == ".csv" else "svmlight"
    if fmt == "csv":
        parts = [_read_csv(p) for p in paths]
    elif fmt in ("svmlight", "libsvm"):
        if n_features is None and len(paths) > 1:
            n_features = max(_read_svmlight(p, None)[0].shape[1] for p in paths)
        parts = [_read_svmlight(p, n_features) for p in paths]
    else:
        raise DatasetError(f"unknown format {fmt!r}")
    widths = {X.shape[1] for X, _ in parts}
    if len(widths) > 1:
        raise DatasetError(f"files disagree on the feature count: {sorted(widths)}")
    X = np.vstack([X for X, _ in parts])
    raw = np.concatenate([np.asarray(r, dtype=float) for _, r in parts])
    keep, y = _binarize(raw, classes)
    return Dataset(X[keep], y, name or paths[0].stem)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``label,features...`` with round-trip exact float formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for label, row in zip(dataset.y, dataset.X):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def subsample(dataset: Dataset, size: int, seed=0) -> Dataset:
    """A seeded random subset of ``size`` rows, kept in original order."""
    if size >= dataset.n:
        return dataset
    idx = np.sort(np.random.default_rng(seed).choice(dataset.n, size=size, replace=False))
    return Dataset(dataset.X[idx], dataset.y[idx], dataset.name)


def split_train_test(y, train_fraction: float, test_fraction: float = 0.2, seed=0,
                     max_attempts: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Hold out ``test_fraction`` of rows and label ``train_fraction`` of all rows.

    Training rows are drawn from the non-test remainder.  Returns
    ``(f0, test_mask)`` with ``f0 = y`` on training rows and 0 elsewhere.
    Draws are repeated from the same generator until both classes have at
    least one labeled row.
    """
    y = np.asarray(y, dtype=np.int64).ravel()
    n = y.size
    if not 0 < test_fraction < 1 or not 0 < train_fraction < 1:
        raise ValueError("fractions must lie in (0, 1)")
    n_test = int(round(test_fraction * n))
    n_test = min(max(n_test, 1), n - 2) if n >= 3 else 0
    n_train = min(max(int(round(train_fraction * n)), 2), n - n_test)
    if n - n_test < 2 or np.count_nonzero(y == 1) == 0 or np.count_nonzero(y == -1) == 0:
        raise DatasetError("cannot label both classes with this split")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        perm = rng.permutation(n)
        test = perm[:n_test]
        train = perm[n_test:n_test + n_train]
        labels = y[train]
        if np.any(labels == 1) and np.any(labels == -1):
            f0 = np.zeros(n)
            f0[train] = y[train]
            mask = np.zeros(n, dtype=bool)
            mask[test] = True
            return f0, mask
    raise DatasetError(f"no split with both classes labeled after {max_attempts} draws")
