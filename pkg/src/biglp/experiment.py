"""End-to-end experiments: factor, normalize, propagate, score."""
from __future__ import annotations

import csv
import dataclasses
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, glnp, labelprop, nystrom, preprocess
from .data import Dataset, load_dataset, split_train_test, subsample
from .runtime import WorkerGroup, partition_rows

__all__ = [
    "METHODS",
    "ExperimentConfig",
    "PhaseError",
    "Report",
    "compute_factor",
    "load_config",
    "run_experiment",
    "run_trial",
]

log = logging.getLogger(__name__)

METHODS = ("glnp-mul", "glnp-apgd", "nystrom-random", "nystrom-kmeans", "knn", "full-lp")


@dataclass
class ExperimentConfig:
    data: str = ""
    format: str | None = None
    method: str = "nystrom-kmeans"
    k: int = 100
    sigma: float | None = None
    alpha: float = labelprop.DEFAULT_ALPHA
    train_fraction: float = 0.05
    test_fraction: float = 0.2
    trials: int = 10
    seed: int = 0
    workers: int = 1
    subsample: int | None = None
    classes: str | None = None
    # factorization budgets
    max_iter: int = 100
    tol: float = 1e-5
    max_inner_iter: int = 20
    beta: float = 0.1
    ls_sigma: float = 0.01
    epsilon: float = 1e-4
    kmeans_iter: int = nystrom.DEFAULT_KMEANS_ITER
    pinv_tol: float = nystrom.DEFAULT_PINV_TOL
    # propagation budgets
    lp_max_iter: int = labelprop.DEFAULT_MAX_ITER
    lp_tol: float = labelprop.DEFAULT_TOL
    # baselines
    neighbors: int = 5
    kernel: str = "rbf"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if not 0 < self.train_fraction < 1 or not 0 < self.test_fraction < 1:
            raise ValueError("fractions must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    def apgd_params(self) -> glnp.ApgdParams:
        return glnp.ApgdParams(max_iter=self.max_iter, max_inner_iter=self.max_inner_iter,
                               beta=self.beta, ls_sigma=self.ls_sigma, epsilon=self.epsilon,
                               tol=self.tol)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, text: str):
    fld = {f.name: f for f in dataclasses.fields(ExperimentConfig)}[name]
    kind = str(fld.type)
    if text.lower() in ("", "none", "null"):
        if "None" in kind:
            return None
        raise ValueError(f"{name} may not be empty")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    return text


def load_config(path, **overrides) -> ExperimentConfig:
    """Parse a flat ``key = value`` file (``#`` starts a comment)."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, val)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if values.get("data") and not Path(values["data"]).is_absolute():
        values["data"] = str((Path(path).parent / values["data"]).resolve())
    return ExperimentConfig(**values)


@dataclass
class TrialResult:
    accuracy: float
    lp_iterations: int = 0
    comm_bytes: int = 0
    timings: dict[str, float] = field(default_factory=dict)
    history: list[glnp.IterationRecord] = field(default_factory=list)


@dataclass
class Report:
    config: ExperimentConfig
    dataset: str
    n: int
    d: int
    sigma: float | None
    trials: list[TrialResult]

    @property
    def accuracies(self) -> list[float]:
        return [t.accuracy for t in self.trials]

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std_accuracy(self) -> float:
        acc = self.accuracies
        return float(np.std(acc, ddof=1)) if len(acc) > 1 else 0.0

    def metrics(self) -> dict[str, object]:
        """Deterministic part of the report (no wall-clock values)."""
        out: dict[str, object] = {f"config.{k}": v for k, v in self.config.as_dict().items()}
        out.update({
            "dataset": self.dataset,
            "n": self.n,
            "d": self.d,
            "sigma": self.sigma,
            "accuracy.mean": self.mean_accuracy,
            "accuracy.std": self.std_accuracy,
            "comm.bytes": sum(t.comm_bytes for t in self.trials),
            "lp.iterations": ",".join(str(t.lp_iterations) for t in self.trials),
        })
        return out

    def timings(self) -> dict[str, float]:
        phases: dict[str, float] = {}
        for t in self.trials:
            for name, sec in t.timings.items():
                phases[name] = phases.get(name, 0.0) + sec
        return {f"time.{k}": v for k, v in phases.items()}

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.txt", "w") as fh:
            for key, val in {**self.metrics(), **self.timings()}.items():
                fh.write(f"{key}={val!r}\n" if isinstance(val, float) else f"{key}={val}\n")
        with open(out / "accuracy.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["trial", "accuracy"])
            for i, acc in enumerate(self.accuracies):
                writer.writerow([i, repr(acc)])
        with open(out / "convergence.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["trial", "iteration", "objective", "gradient_norm", "step_size"])
            for i, t in enumerate(self.trials):
                for rec in t.history:
                    writer.writerow([i, rec.iteration, repr(rec.objective),
                                     repr(rec.gradient_norm), repr(rec.step_size)])


class PhaseError(RuntimeError):
    """A pipeline stage failed; the original exception is chained as ``__cause__``."""

    def __init__(self, phase: str, cause: BaseException):
        super().__init__(f"{phase}: {type(cause).__name__}: {cause}")
        self.phase = phase


@contextmanager
def _phase(timings: dict, name: str):
    start = time.perf_counter()
    try:
        yield
    except PhaseError:
        raise
    except Exception as exc:
        raise PhaseError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def compute_factor(X: np.ndarray, cfg: ExperimentConfig, sigma: float | None, seed: int,
                   group: WorkerGroup, timings: dict | None = None):
    """Low-rank factor ``F`` (row-partitioned) and the GLNP history, if any."""
    timings = {} if timings is None else timings
    Xp = partition_rows(X, group.size)
    history: list[glnp.IterationRecord] = []
    if cfg.method.startswith("nystrom"):
        with _phase(timings, "sampling"):
            if cfg.method == "nystrom-random":
                marks = nystrom.sample_random(Xp, cfg.k, seed=seed, group=group)
            else:
                marks = nystrom.sample_kmeans(Xp, cfg.k, max_iter=cfg.kmeans_iter, seed=seed, group=group)
        with _phase(timings, "factor"):
            F = nystrom.nystrom_factor(Xp, marks, nystrom.KernelParams(sigma), cfg.pinv_tol, group=group)
        return F, history
    if cfg.method.startswith("glnp"):
        with _phase(timings, "shift"):
            Xs = preprocess.par_shift(Xp, group=group).gather()
        with _phase(timings, "factor"):
            if cfg.method == "glnp-mul":
                res = glnp.glnp_multiplicative(Xs, cfg.k, max_iter=cfg.max_iter, tol=cfg.tol, seed=seed)
            else:
                res = glnp.glnp_apgd(Xs, cfg.k, cfg.apgd_params(), seed=seed)
        return partition_rows(res.F, group.size), res.history
    raise ValueError(f"method {cfg.method!r} has no low-rank factor")


def run_trial(ds: Dataset, cfg: ExperimentConfig, trial: int, sigma: float | None) -> TrialResult:
    timings: dict[str, float] = {}
    with _phase(timings, "split"):
        f0, test_mask = split_train_test(ds.y, cfg.train_fraction, cfg.test_fraction,
                                         seed=_seed(cfg.seed, trial, 0))
    truth = ds.y[test_mask]

    if cfg.method == "knn":
        with _phase(timings, "knn"):
            train = f0 != 0
            nq = baselines.NeighborQuery(ds.X[train], ds.y[train], min(cfg.neighbors, int(train.sum())))
            pred = baselines.knn_predict_many(ds.X[test_mask], nq, workers=cfg.workers)
        return TrialResult(baselines.accuracy(pred, truth), timings=timings)

    if cfg.method == "full-lp":
        with _phase(timings, "propagate"):
            f = baselines.full_lp(ds.X, f0, cfg.alpha, sigma=sigma, kernel=cfg.kernel,
                                  max_iter=cfg.lp_max_iter, tol=cfg.lp_tol)
        pred = labelprop.classify(f, test_mask)
        return TrialResult(baselines.accuracy(pred, truth), timings=timings)

    group = WorkerGroup(cfg.workers)
    F, history = compute_factor(ds.X, cfg, sigma, _seed(cfg.seed, trial, 1), group, timings)
    with _phase(timings, "normalize"):
        Fbar = preprocess.par_normalize(F, group=group)
    with _phase(timings, "propagate"):
        res = labelprop.lp_iterative(Fbar, labelprop.LabelState(f0, cfg.alpha), cfg.lp_max_iter,
                                     cfg.lp_tol, seed=_seed(cfg.seed, trial, 2), group=group)
    pred = labelprop.classify(res.f, test_mask)
    return TrialResult(baselines.accuracy(pred, truth), res.iterations, group.stats.bytes,
                       timings, history)


def run_experiment(cfg: ExperimentConfig, dataset: Dataset | None = None) -> Report:
    """Run ``cfg.trials`` independent trials and collect the accuracy statistics."""
    if dataset is None:
        classes = cfg.classes
        if classes and classes != "top2":
            classes = tuple(float(c) for c in classes.split(","))
        dataset = load_dataset(cfg.data, cfg.format, classes=classes)
    if cfg.subsample:
        dataset = subsample(dataset, cfg.subsample, seed=cfg.seed)
    sigma = cfg.sigma
    needs_sigma = cfg.method.startswith("nystrom") or (cfg.method == "full-lp" and cfg.kernel == "rbf")
    if needs_sigma and sigma is None:
        sigma = nystrom.median_sigma(dataset.X, seed=cfg.seed)
    if not needs_sigma:
        sigma = None
    trials = []
    for trial in range(cfg.trials):
        result = run_trial(dataset, cfg, trial, sigma)
        log.info("trial %d: accuracy %.4f", trial, result.accuracy)
        trials.append(result)
    return Report(cfg, dataset.name, dataset.n, dataset.d, sigma, trials)
