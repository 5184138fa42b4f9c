"""Command line entry point: ``biglp {run,approx,propagate,knn}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import labelprop, nystrom, preprocess
from .data import load_dataset, subsample
from .experiment import ExperimentConfig, compute_factor, load_config, run_experiment
from .glnp import write_convergence_csv
from .runtime import WorkerGroup, partition_rows


def _save_matrix(path: str, A: np.ndarray) -> None:
    if path.endswith(".npy"):
        np.save(path, A)
    else:
        np.savetxt(path, np.atleast_2d(A.T).T if A.ndim == 1 else A, fmt="%.17g", delimiter=",")


def _load_matrix(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=1)


def _classes(text):
    if not text or text == "top2":
        return text or None
    return tuple(float(c) for c in text.split(","))


def _data_paths(paths: list[str]):
    return paths[0] if len(paths) == 1 else paths


def cmd_run(args) -> int:
    cfg = load_config(args.config, workers=args.workers, trials=args.trials)
    report = run_experiment(cfg)
    out = Path(args.out or Path(args.config).with_suffix("").name + "_out")
    report.write(out)
    print(f"{report.dataset} {cfg.method}: accuracy {100 * report.mean_accuracy:.2f}% "
          f"+/- {100 * report.std_accuracy:.2f} over {cfg.trials} trials -> {out}")
    return 0


def cmd_approx(args) -> int:
    ds = load_dataset(_data_paths(args.data), args.format, classes=_classes(args.classes))
    if args.subsample:
        ds = subsample(ds, args.subsample, seed=args.seed)
    cfg = ExperimentConfig(method=args.method, k=args.k, sigma=args.sigma, seed=args.seed,
                           workers=args.workers, max_iter=args.max_iter, kmeans_iter=args.kmeans_iter)
    sigma = cfg.sigma
    if sigma is None and cfg.method.startswith("nystrom"):
        sigma = nystrom.median_sigma(ds.X, seed=cfg.seed)
    group = WorkerGroup(cfg.workers)
    F, history = compute_factor(ds.X, cfg, sigma, cfg.seed, group)
    if args.normalize:
        F = preprocess.par_normalize(F, group=group)
    _save_matrix(args.out, F.gather())
    if args.convergence and history:
        with open(args.convergence, "w", newline="") as fh:
            write_convergence_csv(history, fh)
    print(f"factor {F.n}x{F.gather().shape[1]} written to {args.out}; "
          f"sigma={sigma} comm_bytes={group.stats.bytes}")
    return 0


def cmd_propagate(args) -> int:
    F = _load_matrix(args.factor)
    F = F.reshape(F.shape[0], -1)
    f0 = _load_matrix(args.labels).ravel()
    group = WorkerGroup(args.workers)
    Fp = partition_rows(F, args.workers)
    Fbar = Fp if args.normalized else preprocess.par_normalize(Fp, group=group)
    if args.closed_form:
        f = labelprop.lp_closed_form(Fbar, f0, args.alpha)
        note = "closed form"
    else:
        res = labelprop.lp_iterative(Fbar, labelprop.LabelState(f0, args.alpha), args.max_iter,
                                     args.tol, seed=args.seed, group=group)
        f = res.f
        note = f"{res.iterations} iterations, converged={res.converged}"
    _save_matrix(args.out, f)
    print(f"scores for {f.size} rows written to {args.out} ({note})")
    return 0


def cmd_knn(args) -> int:
    ds = load_dataset(_data_paths(args.data), args.format, classes=_classes(args.classes))
    cfg = ExperimentConfig(method="knn", train_fraction=args.train_fraction,
                           test_fraction=args.test_fraction, neighbors=args.neighbors,
                           trials=args.trials, seed=args.seed, workers=args.workers,
                           subsample=args.subsample)
    report = run_experiment(cfg, ds)
    for trial, acc in enumerate(report.accuracies):
        print(f"trial {trial}: accuracy {100 * acc:.2f}%")
    print(f"mean accuracy {100 * report.mean_accuracy:.2f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biglp", description="Low-rank label propagation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment described by a key=value config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: <config>_out)")
    p.add_argument("--workers", type=int)
    p.add_argument("--trials", type=int)
    p.set_defaults(func=cmd_run)

    def data_args(p):
        p.add_argument("--data", required=True, nargs="+", help="one file, or several to concatenate")
        p.add_argument("--format", choices=["csv", "svmlight"])
        p.add_argument("--classes", help="'pos,neg' raw labels or 'top2'")
        p.add_argument("--subsample", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("approx", help="compute a low-rank factor F with W ~= F F^T")
    data_args(p)
    p.add_argument("--method", required=True,
                   choices=["glnp-mul", "glnp-apgd", "nystrom-random", "nystrom-kmeans"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--sigma", type=float)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--kmeans-iter", type=int, default=nystrom.DEFAULT_KMEANS_ITER)
    p.add_argument("--normalize", action="store_true", help="write the normalized factor")
    p.add_argument("--convergence", help="CSV file for GLNP iteration records")
    p.add_argument("--out", required=True, help=".npy or comma-separated text")
    p.set_defaults(func=cmd_approx)

    p = sub.add_parser("propagate", help="propagate labels through a factor")
    p.add_argument("--factor", required=True)
    p.add_argument("--labels", required=True, help="f0 values in {-1,0,1}, one per row")
    p.add_argument("--alpha", type=float, default=labelprop.DEFAULT_ALPHA)
    p.add_argument("--normalized", action="store_true", help="factor is already normalized")
    p.add_argument("--closed-form", action="store_true")
    p.add_argument("--max-iter", type=int, default=labelprop.DEFAULT_MAX_ITER)
    p.add_argument("--tol", type=float, default=labelprop.DEFAULT_TOL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("knn", help="k-nearest-neighbor baseline")
    data_args(p)
    p.add_argument("--train-fraction", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--neighbors", type=int, default=5)
    p.add_argument("--trials", type=int, default=10)
    p.set_defaults(func=cmd_knn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"biglp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
