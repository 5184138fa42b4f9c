"""Acceptance suite.

Each test states one criterion, evaluates every part of it, records a
``criterion N: PASS|FAIL ...`` line (collected into the terminal summary)
and then asserts.  Criteria 1, 2 and the real-data half of 5 read datasets
from ``$BIGLP_DATA_DIR``; when the files are missing they fail with a
message saying which file to provide.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from biglp import baselines, data, experiment, labelprop, nystrom, preprocess
from biglp.data import Dataset, load_dataset, split_train_test
from biglp.experiment import ExperimentConfig, run_experiment
from biglp.glnp import ApgdParams, glnp_apgd, glnp_gradient, glnp_multiplicative, glnp_objective
from biglp.runtime import WorkerGroup, partition_rows

pytestmark = pytest.mark.acceptance

DATA_FILES = {
    # name: (candidate file groups, feature count, class selection)
    "gisette": ([("gisette.svm",), ("gisette.csv",), ("gisette_scale", "gisette_scale.t")], 5000, None),
    "protein": ([("protein.svm",), ("protein.csv",), ("protein", "protein.t")], 357, "top2"),
}


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)


def real_dataset(name: str) -> Dataset | None:
    root = os.environ.get("BIGLP_DATA_DIR")
    if not root:
        return None
    groups, width, classes = DATA_FILES[name]
    for group in groups:
        paths = [Path(root) / f for f in group]
        if all(p.exists() for p in paths):
            fmt = "csv" if paths[0].suffix == ".csv" else "svmlight"
            return load_dataset(paths, fmt, classes=classes, n_features=None if fmt == "csv" else width,
                                name=name)
    return None


def missing(name: str) -> str:
    groups = " or ".join("+".join(g) for g in DATA_FILES[name][0])
    where = os.environ.get("BIGLP_DATA_DIR", "<BIGLP_DATA_DIR unset>")
    return f"{name} dataset not found in {where} (expected {groups})"


def synthetic(n=10_000, d=50, seed=7):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 1.5, (6, d))
    which = rng.integers(0, 6, n)
    X = centers[which] + rng.normal(size=(n, d))
    y = np.where(which % 2 == 0, 1, -1)
    return X, y


def within(value, target, pts=3.0):
    return abs(100 * value - target) <= pts


# -- criterion 1 ---------------------------------------------------------------

@pytest.mark.dataset
def test_criterion_1_gisette_reproduction():
    ds = real_dataset("gisette")
    if ds is None:
        record(1, False, missing("gisette"))
        pytest.fail(missing("gisette"))
    targets = {"glnp-apgd": 95.01, "nystrom-kmeans": 85.29, "knn": 90.89}
    got = {}
    for method in targets:
        cfg = ExperimentConfig(method=method, k=100, train_fraction=0.05, trials=10, seed=0)
        got[method] = run_experiment(cfg, ds).mean_accuracy
    ok = all(within(got[m], t) for m, t in targets.items())
    record(1, ok, "; ".join(f"{m} {100 * got[m]:.2f}% (target {t}±3)" for m, t in targets.items()))
    assert ok


# -- criterion 2 ---------------------------------------------------------------

@pytest.mark.dataset
def test_criterion_2_protein_reproduction():
    ds = real_dataset("protein")
    if ds is None:
        record(2, False, missing("protein"))
        pytest.fail(missing("protein"))
    grid = (0.001, 0.005, 0.01, 0.05)
    means = []
    for frac in grid:
        cfg = ExperimentConfig(method="nystrom-kmeans", k=100, train_fraction=frac, trials=10, seed=0)
        means.append(run_experiment(cfg, ds).mean_accuracy)
    increasing = all(a < b for a, b in zip(means, means[1:]))
    ok = within(means[2], 64.44) and within(means[3], 68.39) and increasing
    record(2, ok, "grid " + ", ".join(f"{100 * f:g}%: {100 * m:.2f}%" for f, m in zip(grid, means))
           + f"; targets 1%: 64.44±3, 5%: 68.39±3; strictly increasing={increasing}")
    assert ok


# -- criterion 3 ---------------------------------------------------------------

def _normalized(rng, n, k):
    return preprocess.par_normalize(partition_rows(rng.uniform(0, 1, (n, k)) + 1e-2, 1)).gather()


def _labels(rng, n):
    f0 = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
    f0[rng.uniform(size=n) > 0.2] = 0.0
    return f0


def _check_iterative_vs_closed():
    worst = 0.0
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        n, k = int(rng.integers(2, 501)), int(rng.integers(1, 21))
        alpha = float(rng.uniform(0.01, 0.9))
        Fbar, f0 = _normalized(rng, n, k), _labels(rng, n)
        res = labelprop.lp_iterative(partition_rows(Fbar, min(4, n)), labelprop.LabelState(f0, alpha),
                                     max_iter=10_000, tol=1e-10, seed=i)
        assert res.converged
        worst = max(worst, float(np.max(np.abs(res.f - labelprop.lp_closed_form(Fbar, f0, alpha)))))
    return worst <= 1e-6, f"(a) iterative vs closed form max {worst:.1e}"


def _check_woodbury():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(2000 + i)
        n, k = int(rng.integers(2, 201)), int(rng.integers(1, 21))
        alpha = float(rng.uniform(0.01, 0.99))
        Fbar, f0 = _normalized(rng, n, k), _labels(rng, n)
        dense = (1 - alpha) * np.linalg.inv(np.eye(n) - alpha * Fbar @ Fbar.T) @ f0
        worst = max(worst, float(np.max(np.abs(labelprop.lp_closed_form(Fbar, f0, alpha) - dense))))
    return worst <= 1e-8, f"(b) Woodbury vs dense inverse max {worst:.1e}"


def _check_nystrom_exact():
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(3000 + i)
        distinct = rng.normal(size=(int(rng.integers(2, 12)), 4))
        X = distinct[rng.integers(0, len(distinct), 500)]
        X[:len(distinct)] = distinct
        sigma = nystrom.median_sigma(X)
        W = nystrom.rbf_matrix(X, X, sigma)
        part = partition_rows(X, 4)
        # explicit cover, then a random sample large enough to hit every distinct row
        covers = [nystrom.LandmarkSet(distinct)]
        for seed in range(100):
            marks = nystrom.sample_random(part, 3 * len(distinct), seed=seed)
            if len(np.unique(marks.points, axis=0)) == len(distinct):
                covers.append(marks)
                break
        for marks in covers:
            F = nystrom.nystrom_factor(part, marks, nystrom.KernelParams(sigma)).gather()
            worst = max(worst, float(np.max(np.abs(F @ F.T - W))))
    return worst <= 1e-8, f"(c) Nystrom on covered rows max {worst:.1e}"


def _check_full_rank_lp():
    worst = 0.0
    for i in range(5):
        rng = np.random.default_rng(4000 + i)
        X = rng.normal(size=(60, 3))
        sigma = nystrom.median_sigma(X)
        part = partition_rows(X, 3)
        marks = nystrom.LandmarkSet(X, np.arange(60))
        Fbar = preprocess.par_normalize(nystrom.nystrom_factor(part, marks, nystrom.KernelParams(sigma)))
        f0 = _labels(rng, 60)
        f0[:2] = [1, -1]
        for alpha in (0.01, 0.5):
            low = labelprop.lp_iterative(Fbar, labelprop.LabelState(f0, alpha), max_iter=10_000, tol=1e-14).f
            dense = baselines.full_lp(X, f0, alpha, sigma=sigma, max_iter=10_000, tol=1e-14)
            worst = max(worst, float(np.max(np.abs(low - dense))))
    return worst <= 1e-8, f"(d) k=n low-rank LP vs dense LP max {worst:.1e}"


def check_criterion_3():
    parts = [_check_iterative_vs_closed(), _check_woodbury(), _check_nystrom_exact(), _check_full_rank_lp()]
    return all(ok for ok, _ in parts), "; ".join(d for _, d in parts)


def test_criterion_3_oracle_equivalence():
    ok, detail = check_criterion_3()
    record(3, ok, detail)
    assert ok


# -- criterion 4 ---------------------------------------------------------------

def check_criterion_4():
    worst = 0.0
    h = 1e-5
    for i in range(20):
        rng = np.random.default_rng(5000 + i)
        n, m, k = int(rng.integers(1, 9)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
        X, F = rng.uniform(size=(n, m)), rng.uniform(size=(n, k))
        fd = np.zeros_like(F)
        for idx in np.ndindex(F.shape):
            up, down = F.copy(), F.copy()
            up[idx] += h
            down[idx] -= h
            fd[idx] = (glnp_objective(X, up) - glnp_objective(X, down)) / (2 * h)
        rel = np.linalg.norm(glnp_gradient(X, F) - fd) / max(np.linalg.norm(fd), 1e-12)
        worst = max(worst, float(rel))
    return worst < 1e-4, f"max relative error {worst:.1e} over 20 instances (n<=8, m<=6, k<=3)"


def test_criterion_4_gradient_check():
    ok, detail = check_criterion_4()
    record(4, ok, detail)
    assert ok


# -- criterion 5 ---------------------------------------------------------------

def _optimizer_wins(X_full, seeds=10, rows=1000, k=100, budget=100):
    wins = 0
    for seed in range(seeds):
        idx = np.sort(np.random.default_rng(seed).choice(X_full.shape[0], size=min(rows, X_full.shape[0]),
                                                         replace=False))
        X = preprocess.par_shift(partition_rows(X_full[idx], 1)).gather()
        mul = glnp_multiplicative(X, k, max_iter=budget, tol=0, seed=seed, record=False)
        apgd = glnp_apgd(X, k, ApgdParams(max_iter=budget, tol=0, epsilon=0), seed=seed)
        wins += glnp_objective(X, apgd.F) <= glnp_objective(X, mul.F)
    return wins


@pytest.mark.dataset
def test_criterion_5_optimizer_comparison():
    results, problems = [], []
    for name in ("gisette", "protein"):
        ds = real_dataset(name)
        if ds is None:
            problems.append(missing(name))
            continue
        wins = _optimizer_wins(ds.X)
        results.append(f"{name}: APGD <= MUL in {wins}/10 seeds")
        if wins < 7:
            problems.append(f"{name} only {wins}/10")
    ok = not problems
    record(5, ok, "; ".join(results + problems))
    assert ok, "; ".join(problems)


# -- criterion 6 ---------------------------------------------------------------

def _pipeline_scores(X, f0, P, k=100):
    group = WorkerGroup(P)
    Xp = partition_rows(X, P)
    marks = nystrom.sample_kmeans(Xp, k, seed=3, group=group)
    sigma = nystrom.median_sigma(X)
    F = nystrom.nystrom_factor(Xp, marks, nystrom.KernelParams(sigma), group=group)
    Fbar = preprocess.par_normalize(F, group=group)
    return labelprop.lp_iterative(Fbar, labelprop.LabelState(f0, 0.01), seed=5, group=group).f


def nystrom_comm_bytes(X, k, P=4, seed=0):
    group = WorkerGroup(P)
    Xp = partition_rows(X, P)
    marks = nystrom.sample_random(Xp, k, seed=seed, group=group)
    nystrom.nystrom_factor(Xp, marks, nystrom.KernelParams(nystrom.median_sigma(X)), group=group)
    return group.stats.bytes


def check_criterion_6():
    X, y = synthetic()
    f0, _ = split_train_test(y, 0.05, seed=1)
    ref = _pipeline_scores(X, f0, 1)
    spread = max(float(np.max(np.abs(_pipeline_scores(X, f0, P) - ref))) for P in (2, 4, 8))

    ks = np.array([10, 20, 50, 100])
    n = X.shape[0]
    bytes_ = np.array([nystrom_comm_bytes(X, int(k)) for k in ks], dtype=float)
    design = np.column_stack([np.full(ks.size, float(n)), ks.astype(float) ** 2])
    coef, *_ = np.linalg.lstsq(design, bytes_, rcond=None)
    resid = bytes_ - design @ coef
    r2 = 1 - float(resid @ resid) / float(np.sum((bytes_ - bytes_.mean()) ** 2))
    ok = spread <= 1e-10 and r2 > 0.99
    detail = (f"f spread over P in {{1,2,4,8}}: {spread:.1e}; comm bytes {bytes_.astype(int).tolist()} "
              f"for k={ks.tolist()}, fit c1*n + c2*k^2 R^2={r2:.5f}")
    return ok, detail


def test_criterion_6_partition_invariance_and_comm():
    ok, detail = check_criterion_6()
    record(6, ok, detail)
    assert ok


# -- criterion 7 ---------------------------------------------------------------

def _nystrom_seconds(X, P, k=100, repeats=3):
    best = np.inf
    for _ in range(repeats):
        group = WorkerGroup(P)
        Xp = partition_rows(X, P)
        start = time.perf_counter()
        marks = nystrom.sample_random(Xp, k, seed=0, group=group)
        nystrom.nystrom_factor(Xp, marks, nystrom.KernelParams(5.0), group=group)
        best = min(best, time.perf_counter() - start)
    return best


def test_criterion_7_scaling():
    X, _ = synthetic()
    t1, t4 = _nystrom_seconds(X, 1), _nystrom_seconds(X, 4)
    ratio = t4 / t1
    ok = ratio < 0.5
    record(7, ok, f"P=1 {t1 * 1e3:.1f} ms, P=4 {t4 * 1e3:.1f} ms, ratio {ratio:.2f} (need < 0.5; "
                  f"{os.cpu_count()} CPU(s) visible)")
    assert ok


# -- criterion 8 ---------------------------------------------------------------

def test_criterion_8_synthetic_only(monkeypatch):
    """Criteria 3, 4, 6 and the synthetic form of 5 complete with every dataset reader disabled.

    Pass/fail of those checks is reported on their own lines; here only
    standalone runnability is judged.
    """
    def refuse(*args, **kwargs):
        raise AssertionError("a synthetic-only suite tried to read a dataset")

    monkeypatch.delenv("BIGLP_DATA_DIR", raising=False)
    for module in (data, experiment):
        monkeypatch.setattr(module, "load_dataset", refuse)
    outcome = {}
    ran = True
    for criterion, check in ((3, check_criterion_3), (4, check_criterion_4), (6, check_criterion_6)):
        try:
            outcome[criterion] = "pass" if check()[0] else "fail"
        except AssertionError as exc:
            ran = False
            outcome[criterion] = f"needs data ({exc})"
    # the optimizer comparison at the same rows / k / budget on clustered synthetic data
    rng = np.random.default_rng(11)
    centers = rng.uniform(0, 1, (8, 60))
    X = np.abs(centers[rng.integers(0, 8, 1000)] + 0.1 * rng.normal(size=(1000, 60)))
    wins = _optimizer_wins(X)
    outcome[5] = f"APGD<=MUL {wins}/10"
    record(8, ran, "ran with dataset readers disabled: "
           + ", ".join(f"c{c} {r}" for c, r in sorted(outcome.items())))
    assert ran


def test_dataset_locator_joins_split_files(tmp_path, monkeypatch):
    (tmp_path / "protein").write_text("0 1:1\n1 2:1\n1 3:1\n2 1:2\n")
    (tmp_path / "protein.t").write_text("2 357:0.5\n0 1:3\n2 2:2\n")
    monkeypatch.setenv("BIGLP_DATA_DIR", str(tmp_path))
    ds = real_dataset("protein")
    # over both files: class 2 has three rows, 0 and 1 tie at two and the lower label wins
    assert ds.X.shape == (5, 357)
    np.testing.assert_array_equal(ds.y, [-1, 1, 1, -1, 1])
    assert real_dataset("gisette") is None
