"""Seeded Monte Carlo studies: rate slopes, interval coverage, jump-count recovery
and normality of the standardized estimates.

Replication ``r`` always uses seed ``seed_base + r``.  Jobs can be spread over
processes (``STEPDECONV_WORKERS``); results are collected in submission order,
so reports are identical for any worker count.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from .errors import ContractError, StepDeconvError
from .estimator import FitConfig, _jsonable, fit_known_k, fit_penalized
from .inference import confidence_intervals, covariance, estimate_sigma2, v_matrix
from .kernels import Kernel
from .model import DesignSpec, simulate_dataset
from .signal import StepFunction, hausdorff_jump_distance, l2_distance

METRICS = ("theta_l2", "tau_abs", "l2_function", "hausdorff")
MAX_FAILURE_RATE = 0.05
WORKERS_ENV = "STEPDECONV_WORKERS"
KS_95 = 1.358


@dataclass
class Scenario:
    kernel: Kernel
    truth: StepFunction
    design: DesignSpec = field(default_factory=DesignSpec)
    sigma: float = 0.2
    n_grid: tuple = (250, 500, 1000, 2000, 4000)
    reps: int = 200
    seed_base: int = 0
    fit: FitConfig = field(default_factory=FitConfig)
    metric: str = "tau_abs"
    band: Optional[tuple] = None
    target: Optional[float] = None
    name: str = "scenario"

    def __post_init__(self):
        self.n_grid = tuple(int(n) for n in self.n_grid)
        if self.metric not in METRICS:
            raise ContractError(f"unknown metric {self.metric!r}; choose from {METRICS}")
        if self.reps < 1:
            raise ContractError("reps must be positive")
        if self.sigma < 0:
            raise ContractError("sigma must be nonnegative")
        if not self.n_grid or any(b <= a for a, b in zip(self.n_grid[:-1], self.n_grid[1:])):
            raise ContractError("n grid must be strictly increasing")

    def check_rate_study(self):
        if len(self.n_grid) < 3:
            raise ContractError("a rate study needs at least 3 sample sizes")
        if self.reps < 50:
            raise ContractError(f"a rate study needs reps >= 50, got {self.reps}")

    def target_slope(self):
        if self.target is not None:
            return float(self.target)
        if self.kernel.family == "abel":
            r = 1.0 / (3.0 - 2.0 * self.kernel.alpha)
            return {"tau_abs": -r, "hausdorff": -r, "theta_l2": -0.5,
                    "l2_function": -r / 2.0}[self.metric]
        return -0.25 if self.metric == "l2_function" else -0.5

    def slope_band(self):
        if self.band is not None:
            lo, hi = self.band
            return float(lo), float(hi)
        if self.metric == "l2_function" and self.kernel.family != "abel":
            return -0.40, -0.15
        t = self.target_slope()
        return t - 0.15, t + 0.15

    def seed(self, rep):
        return self.seed_base + rep

    def dataset(self, n, rep):
        return simulate_dataset(self.kernel, self.truth, self.design, n, self.sigma,
                                self.seed(rep))

    def to_dict(self):
        return {
            "name": self.name,
            "kernel": self.kernel.to_config(),
            "theta": self.truth.theta.tolist(),
            "design": self.design.to_config(),
            "sigma": self.sigma,
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "seed_base": self.seed_base,
            "metric": self.metric,
            "fit": _jsonable(vars(self.fit)),
        }


def metric_value(metric, truth, theta_hat):
    theta = truth.theta
    theta_hat = np.asarray(theta_hat, dtype=float)
    if metric == "theta_l2":
        if theta_hat.shape != theta.shape:
            return math.inf
        return float(np.linalg.norm(theta_hat - theta))
    if metric == "tau_abs":
        if theta_hat.shape != theta.shape:
            return math.inf
        d = np.abs(theta_hat[1::2] - theta[1::2])
        return float(d.max()) if d.size else 0.0
    est = StepFunction(tuple(theta_hat[0::2]), tuple(theta_hat[1::2]))
    if metric == "l2_function":
        return l2_distance(truth, est)
    if metric == "hausdorff":
        return hausdorff_jump_distance(truth, est)
    raise ContractError(f"unknown metric {metric!r}")


# -- job execution --------------------------------------------------------------

def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ContractError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _run_jobs(fn, jobs, workers=None):
    workers = workers or worker_count()
    if workers == 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _guarded(fn, *args):
    try:
        return fn(*args), None
    except (StepDeconvError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _known_k_job(job):
    scenario, n, rep = job
    data = scenario.dataset(n, rep)
    fit, err = _guarded(fit_known_k, data, scenario.kernel, scenario.truth.k, scenario.fit)
    return (data, fit, err)


def _rate_job(job):
    scenario, n, rep = job
    _, fit, err = _known_k_job(job)
    if err:
        return n, rep, None, err
    return n, rep, metric_value(scenario.metric, scenario.truth, fit.theta_hat), None


def _quantiles(values):
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan, math.nan
    q10, med, q90 = np.quantile(v, [0.1, 0.5, 0.9])
    return float(med), float(q10), float(q90)


def binomial_se(p, reps):
    return math.sqrt(max(p * (1.0 - p), 0.0) / reps) if reps else math.nan


# -- rate study ------------------------------------------------------------------

def fit_slope(ns, errors):
    """OLS slope of log(error) on log(n) with its standard error."""
    ln = np.log(np.asarray(ns, dtype=float))
    le = np.log(np.asarray(errors, dtype=float))
    if len(ln) < 2 or not np.all(np.isfinite(le)):
        return math.nan, math.nan
    res = stats.linregress(ln, le)
    se = float(res.stderr) if len(ln) > 2 else math.nan
    return float(res.slope), se


@dataclass
class RateReport:
    metric: str
    n_grid: list
    median: list
    q10: list
    q90: list
    slope: Optional[float]
    slope_stderr: Optional[float]
    target: float
    band: tuple
    passed: bool
    status: str
    failures: dict
    records: list = field(repr=False, default_factory=list)
    scenario: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable({
            "kind": "rates", "scenario": self.scenario, "metric": self.metric,
            "n_grid": self.n_grid, "median": self.median, "q10": self.q10,
            "q90": self.q90, "slope": self.slope, "slope_stderr": self.slope_stderr,
            "target_slope": self.target, "band": list(self.band), "pass": self.passed,
            "status": self.status, "failures": self.failures})

    def summary_lines(self):
        lo, hi = self.band
        if self.status == "degenerate-noiseless":
            return [f"rates[{self.metric}]: degenerate-noiseless, max error "
                    f"{max(self.median):.3g} -> {'PASS' if self.passed else 'FAIL'}"]
        slope = "nan" if self.slope is None else f"{self.slope:.3f}"
        return [f"rates[{self.metric}]: slope {slope} +- {self.slope_stderr or math.nan:.3f}, "
                f"band [{lo:.2f}, {hi:.2f}] ({self.status}) -> "
                f"{'PASS' if self.passed else 'FAIL'}"]


def run_rate_experiment(scenario, workers=None):
    """Known-k fits at every n; slope of log median error against log n."""
    scenario.check_rate_study()
    jobs = [(scenario, n, r) for n in scenario.n_grid for r in range(scenario.reps)]
    results = _run_jobs(_rate_job, jobs, workers)
    return _rate_report(scenario, results)


def _rate_report(scenario, results):
    by_n = {n: [] for n in scenario.n_grid}
    failures = {n: [] for n in scenario.n_grid}
    records = []
    for n, rep, value, err in results:
        if err is None and math.isfinite(value):
            by_n[n].append(value)
            records.append((n, rep, value))
        else:
            failures[n].append({"rep": rep, "error": err or "non-finite metric"})
    med, q10, q90 = zip(*(_quantiles(by_n[n]) for n in scenario.n_grid))
    fail_frac = max(len(failures[n]) / scenario.reps for n in scenario.n_grid)
    band = scenario.slope_band()
    target = scenario.target_slope()
    fail_info = {str(n): len(v) for n, v in failures.items()}

    if fail_frac > MAX_FAILURE_RATE:
        slope, se, status, passed = None, None, "too-many-failures", False
    elif scenario.sigma == 0:
        tol = scenario.fit.refine_tol
        passed = all(v <= tol for _, _, v in records)
        slope, se, status = None, None, "degenerate-noiseless"
    else:
        slope, se = fit_slope(scenario.n_grid, med)
        passed = bool(math.isfinite(slope) and band[0] <= slope <= band[1])
        status = "ok" if math.isfinite(slope) else "undefined-slope"
    return RateReport(scenario.metric, list(scenario.n_grid), list(med), list(q10),
                      list(q90), slope, se, target, band, passed, status, fail_info,
                      records, scenario.to_dict())


def rate_reports_for_metrics(scenario, metrics, workers=None):
    """Several metrics from one set of fits (the fits do not depend on the metric)."""
    scenario.check_rate_study()
    jobs = [(scenario, n, r) for n in scenario.n_grid for r in range(scenario.reps)]
    fits = _run_jobs(_theta_job, jobs, workers)
    out = {}
    for m in metrics:
        s = Scenario(**{**vars(scenario), "metric": m, "band": None
                        if m != scenario.metric else scenario.band})
        results = [(n, rep, None if th is None else metric_value(m, s.truth, th), err)
                   for n, rep, th, err in fits]
        out[m] = _rate_report(s, results)
    return out


def _theta_job(job):
    scenario, n, rep = job
    _, fit, err = _known_k_job(job)
    return n, rep, None if err else fit.theta_hat, err


# -- coverage --------------------------------------------------------------------

def _coverage_job(job):
    scenario, n, rep, level = job
    data, fit, err = _known_k_job((scenario, n, rep))
    if err:
        return rep, None, err
    try:
        step = fit.step()
        if step.k != fit.k_hat:
            return rep, None, "fitted levels coincide"
        sigma2 = estimate_sigma2(data, fit, scenario.kernel)
        V, _ = v_matrix(scenario.kernel, step, scenario.design.density)
        ci = confidence_intervals(fit.theta_hat, V, sigma2, n, level)
    except (StepDeconvError, np.linalg.LinAlgError) as exc:
        return rep, None, f"{type(exc).__name__}: {exc}"
    return rep, (ci, fit.theta_hat), None


@dataclass
class CoverageReport:
    n: int
    level: float
    coverage: list
    stderr: list
    band: tuple
    passed: bool
    status: str
    failures: int
    reps: int
    records: list = field(repr=False, default_factory=list)
    scenario: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable({
            "kind": "coverage", "scenario": self.scenario, "n": self.n,
            "level": self.level, "coverage": self.coverage, "stderr": self.stderr,
            "band": list(self.band), "pass": self.passed, "status": self.status,
            "failures": self.failures, "reps": self.reps})

    def summary_lines(self):
        cov = ", ".join(f"{c:.3f}" for c in self.coverage)
        return [f"coverage[n={self.n}, level={self.level}]: ({cov}) band "
                f"[{self.band[0]:.3f}, {self.band[1]:.3f}] -> "
                f"{'PASS' if self.passed else 'FAIL'}"]


def default_coverage_band(level, reps):
    if abs(level - 0.95) < 1e-12:
        return 0.90, 0.98
    se = binomial_se(level, reps)
    return max(level - 3 * se, 0.0), min(level + 3 * se, 1.0)


def run_coverage_experiment(scenario, level=0.95, n=None, band=None, workers=None):
    """Fraction of replications whose plug-in Wald interval covers each true parameter."""
    if not scenario.kernel.bounded:
        raise ContractError("coverage needs a bounded kernel")
    if not 0.0 < level < 1.0:
        raise ContractError("level must lie in (0, 1)")
    n = int(n if n is not None else scenario.n_grid[-1])
    theta = scenario.truth.theta
    band = tuple(band) if band is not None else default_coverage_band(level, scenario.reps)
    records = []
    failures = 0
    hits = np.zeros(len(theta))
    noiseless = scenario.sigma == 0
    if noiseless:
        jobs = [(scenario, n, r) for r in range(scenario.reps)]
        for rep, (data, fit, err) in enumerate(_run_jobs(_known_k_job, jobs, workers)):
            if err:
                failures += 1
                continue
            # Zero-width intervals: cover up to the optimizer's tolerance.
            cov = np.abs(fit.theta_hat - theta) <= scenario.fit.refine_tol
            hits += cov
            records.extend((n, rep, j, int(c)) for j, c in enumerate(cov))
    else:
        jobs = [(scenario, n, r, level) for r in range(scenario.reps)]
        for rep, res, err in _run_jobs(_coverage_job, jobs, workers):
            if err:
                failures += 1
                continue
            ci, _ = res
            cov = (ci[:, 0] <= theta) & (theta <= ci[:, 1])
            hits += cov
            records.extend((n, rep, j, int(c)) for j, c in enumerate(cov))
    done = scenario.reps - failures
    coverage = (hits / done).tolist() if done else [math.nan] * len(theta)
    stderr = [binomial_se(p, done) for p in coverage]
    if failures / scenario.reps > MAX_FAILURE_RATE:
        status, passed = "too-many-failures", False
    elif noiseless:
        status = "degenerate-noiseless"
        passed = all(c == 1.0 for c in coverage)
    else:
        status = "ok"
        passed = all(band[0] <= c <= band[1] for c in coverage)
    return CoverageReport(n, level, coverage, stderr, band, passed, status, failures,
                          scenario.reps, records, scenario.to_dict())


# -- selection -------------------------------------------------------------------

def _selection_job(job):
    scenario, n, rep = job
    data = scenario.dataset(n, rep)
    fit, err = _guarded(fit_penalized, data, scenario.kernel, scenario.fit)
    return n, rep, None if err else fit.k_hat, err


@dataclass
class SelectionReport:
    n_grid: list
    recovery: list
    stderr: list
    k_true: int
    min_recovery: float
    monotone: bool
    passed: bool
    status: str
    failures: dict
    k_hat_counts: dict
    records: list = field(repr=False, default_factory=list)
    scenario: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable({
            "kind": "select", "scenario": self.scenario, "n_grid": self.n_grid,
            "recovery": self.recovery, "stderr": self.stderr, "k_true": self.k_true,
            "min_recovery": self.min_recovery, "monotone": self.monotone,
            "pass": self.passed, "status": self.status, "failures": self.failures,
            "k_hat_counts": self.k_hat_counts})

    def summary_lines(self):
        rec = ", ".join(f"{p:.3f}" for p in self.recovery)
        return [f"select[k={self.k_true}]: recovery ({rec}), final >= "
                f"{self.min_recovery}, monotone={self.monotone} -> "
                f"{'PASS' if self.passed else 'FAIL'}"]


def is_monotone_within_se(p, se):
    """p nondecreasing up to one binomial standard error between neighbours."""
    return all(b >= a - max(sa, sb) for a, b, sa, sb in zip(p[:-1], p[1:], se[:-1], se[1:]))


def run_selection_experiment(scenario, min_recovery=0.95, workers=None):
    """Fraction of penalized fits with the true jump count at each n."""
    jobs = [(scenario, n, r) for n in scenario.n_grid for r in range(scenario.reps)]
    results = _run_jobs(_selection_job, jobs, workers)
    k_true = scenario.truth.k
    hits = {n: 0 for n in scenario.n_grid}
    done = {n: 0 for n in scenario.n_grid}
    counts = {n: {} for n in scenario.n_grid}
    records = []
    for n, rep, k_hat, err in results:
        if err:
            continue
        done[n] += 1
        hits[n] += int(k_hat == k_true)
        counts[n][k_hat] = counts[n].get(k_hat, 0) + 1
        records.append((n, rep, k_hat))
    recovery = [hits[n] / done[n] if done[n] else math.nan for n in scenario.n_grid]
    stderr = [binomial_se(p, done[n]) for p, n in zip(recovery, scenario.n_grid)]
    failures = {str(n): scenario.reps - done[n] for n in scenario.n_grid}
    monotone = is_monotone_within_se(recovery, stderr)
    if max(scenario.reps - d for d in done.values()) / scenario.reps > MAX_FAILURE_RATE:
        status, passed = "too-many-failures", False
    else:
        status = "ok"
        passed = bool(monotone and recovery[-1] >= min_recovery)
    counts = {str(n): {str(k): c for k, c in sorted(v.items())} for n, v in counts.items()}
    return SelectionReport(list(scenario.n_grid), recovery, stderr, k_true, min_recovery,
                           monotone, passed, status, failures, counts, records,
                           scenario.to_dict())


# -- normality -------------------------------------------------------------------

def standardized_summary(z):
    """Mean, variance and Kolmogorov sup-distance of a sample against N(0, 1)."""
    z = np.asarray(z, dtype=float)
    ks = float(stats.kstest(z, "norm").statistic)
    return {"mean": float(np.mean(z)), "variance": float(np.var(z, ddof=1)),
            "ks_distance": ks, "ks_band": KS_95 / math.sqrt(len(z))}


def ks_self_test(reps=500, seed=0):
    """Calibration check: genuine standard normals should sit inside the KS band."""
    z = np.random.default_rng(seed).standard_normal(reps)
    s = standardized_summary(z)
    return s["ks_distance"] < s["ks_band"], s


@dataclass
class NormalityReport:
    n: int
    parameters: list
    mean_band: tuple
    var_band: tuple
    passed: bool
    status: str
    failures: int
    records: list = field(repr=False, default_factory=list)
    scenario: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable({
            "kind": "diagnose", "scenario": self.scenario, "n": self.n,
            "parameters": self.parameters, "mean_band": list(self.mean_band),
            "variance_band": list(self.var_band), "pass": self.passed,
            "status": self.status, "failures": self.failures})

    def summary_lines(self):
        parts = ", ".join(f"({p['mean']:.3f}, {p['variance']:.3f})" for p in self.parameters)
        return [f"diagnose[n={self.n}]: (mean, variance) {parts} -> "
                f"{'PASS' if self.passed else 'FAIL'}"]


def normality_diagnostics(scenario, n=None, mean_band=(-0.15, 0.15), var_band=(0.8, 1.25),
                          workers=None):
    """Standardize sqrt(n)(theta_hat - theta) by the true sigma^2 V^-1 diagonal."""
    if not scenario.kernel.bounded:
        raise ContractError("normality diagnostics need a bounded kernel")
    n = int(n if n is not None else scenario.n_grid[-1])
    theta = scenario.truth.theta
    jobs = [(scenario, n, r) for r in range(scenario.reps)]
    fits = _run_jobs(_theta_job, jobs, workers)
    good = [(rep, th) for _, rep, th, err in fits if err is None]
    failures = scenario.reps - len(good)
    p = len(theta)
    if scenario.sigma == 0:
        z = np.zeros((len(good), p))
        status = "degenerate-noiseless"
    else:
        V, _ = v_matrix(scenario.kernel, scenario.truth, scenario.design.density)
        sd = np.sqrt(np.diag(covariance(V, scenario.sigma ** 2, n)))
        z = np.array([(th - theta) / sd for _, th in good]).reshape(len(good), p)
        status = "ok"
    params = []
    for j in range(p):
        if status == "ok" and len(good) > 1:
            params.append({"index": j, **standardized_summary(z[:, j])})
        else:
            params.append({"index": j, "mean": 0.0, "variance": 0.0,
                           "ks_distance": math.nan, "ks_band": math.nan})
    records = [(n, rep, j, float(z[i, j])) for i, (rep, _) in enumerate(good)
               for j in range(p)]
    if failures / scenario.reps > MAX_FAILURE_RATE:
        status, passed = "too-many-failures", False
    elif status == "degenerate-noiseless":
        passed = False
    else:
        passed = all(mean_band[0] <= q["mean"] <= mean_band[1]
                     and var_band[0] <= q["variance"] <= var_band[1] for q in params)
    return NormalityReport(n, params, tuple(mean_band), tuple(var_band), passed, status,
                           failures, records, scenario.to_dict())


# -- output ----------------------------------------------------------------------

_CSV_HEADERS = {
    RateReport: ("n", "rep", "metric"),
    CoverageReport: ("n", "rep", "parameter", "covered"),
    SelectionReport: ("n", "rep", "k_hat"),
    NormalityReport: ("n", "rep", "parameter", "z"),
}


def write_report(report, out_dir, stem):
    """Write ``stem.json`` and the flat per-replication ``stem.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{stem}.json"
    csv_path = out / f"{stem}.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True,
                                    allow_nan=True) + "\n")
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_CSV_HEADERS[type(report)])
        for row in report.records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return json_path, csv_path


__all__ = ["Scenario", "RateReport", "CoverageReport", "SelectionReport",
           "NormalityReport", "METRICS", "metric_value", "fit_slope",
           "run_rate_experiment", "rate_reports_for_metrics", "run_coverage_experiment",
           "run_selection_experiment", "normality_diagnostics", "standardized_summary",
           "ks_self_test", "binomial_se", "is_monotone_within_se", "write_report",
           "worker_count"]
