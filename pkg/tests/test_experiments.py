import csv
import json
import math

import numpy as np
import pytest

from stepdeconv import experiments as exp
from stepdeconv.errors import ContractError
from stepdeconv.estimator import FitConfig
from stepdeconv.kernels import Kernel
from stepdeconv.signal import StepFunction

HALF = StepFunction((0.0, 1.0), (0.5,))


def scenario(**kw):
    base = dict(kernel=Kernel.laplace(), truth=HALF, sigma=0.2, n_grid=(100, 200, 400),
                reps=50)
    base.update(kw)
    return exp.Scenario(**base)


def test_slope_self_test():
    ns = np.array([250, 500, 1000, 2000, 4000])
    slope, se = exp.fit_slope(ns, ns ** -0.5)
    assert slope == pytest.approx(-0.5, abs=1e-12)
    assert se == pytest.approx(0.0, abs=1e-12)


def test_ks_self_test():
    ok, s = exp.ks_self_test(500, seed=0)
    assert ok and s["ks_band"] == pytest.approx(1.358 / math.sqrt(500))


@pytest.mark.parametrize("metric,truth_theta,est,value", [
    ("tau_abs", (0, 0.5, 1), (0, 0.53, 1), 0.03),
    ("theta_l2", (0, 0.5, 1), (0.3, 0.5, 1.4), 0.5),
    ("hausdorff", (0, 0.5, 1), (0, 0.4, 1), 0.1),
    ("l2_function", (0, 0.5, 1), (0, 0.4, 1), math.sqrt(0.1)),
    ("tau_abs", (0, 0.5, 1), (0.5,), math.inf),
])
def test_metric_values(metric, truth_theta, est, value):
    truth = StepFunction.from_theta(np.array(truth_theta, dtype=float))
    assert exp.metric_value(metric, truth, est) == pytest.approx(value, abs=1e-12)


@pytest.mark.parametrize("kw", [dict(metric="mse"), dict(reps=0), dict(sigma=-1),
                                dict(n_grid=(100, 100, 200))])
def test_scenario_contract(kw):
    with pytest.raises(ContractError):
        scenario(**kw)


@pytest.mark.parametrize("kw", [dict(reps=49), dict(n_grid=(100, 200))])
def test_rate_study_preconditions(kw):
    with pytest.raises(ContractError):
        exp.run_rate_experiment(scenario(**kw))


def test_target_slopes_and_bands():
    assert scenario().target_slope() == -0.5
    assert scenario().slope_band() == pytest.approx((-0.65, -0.35))
    assert scenario(metric="l2_function").slope_band() == (-0.40, -0.15)
    abel = scenario(kernel=Kernel.abel(0.75))
    assert abel.target_slope() == pytest.approx(-2 / 3)
    assert abel.slope_band() == pytest.approx((-2 / 3 - 0.15, -2 / 3 + 0.15))
    assert scenario(band=(-1, 0), target=-0.7).slope_band() == (-1.0, 0.0)


def test_noiseless_rate_study_is_degenerate():
    rep = exp.run_rate_experiment(scenario(sigma=0.0, kernel=Kernel.boxcar()))
    assert rep.status == "degenerate-noiseless" and rep.passed
    assert rep.slope is None
    assert max(v for _, _, v in rep.records) <= FitConfig().refine_tol


def test_rate_study_is_deterministic_and_worker_independent():
    s = scenario()
    a = exp.run_rate_experiment(s, workers=1)
    b = exp.run_rate_experiment(s, workers=1)
    c = exp.run_rate_experiment(s, workers=2)
    assert a.to_dict() == b.to_dict() == c.to_dict()
    assert a.records == c.records
    assert a.status == "ok" and math.isfinite(a.slope)
    assert all(lo <= m <= hi for lo, m, hi in zip(a.q10, a.median, a.q90))


def test_shared_fits_match_single_metric_runs():
    s = scenario(metric="theta_l2")
    both = exp.rate_reports_for_metrics(s, ["theta_l2", "hausdorff"])
    alone = exp.run_rate_experiment(scenario(metric="hausdorff"))
    assert both["hausdorff"].to_dict() == alone.to_dict()


def test_noiseless_coverage_is_one():
    rep = exp.run_coverage_experiment(scenario(sigma=0.0), n=200)
    assert rep.coverage == [1.0, 1.0, 1.0] and rep.passed


def test_coverage_at_half_level():
    s = scenario(kernel=Kernel.laplace(), reps=200, sigma=0.1,
                 truth=StepFunction((0.0, 2.0), (0.5,)))
    rep = exp.run_coverage_experiment(s, level=0.5, n=1000)
    lo, hi = rep.band
    assert (lo, hi) == pytest.approx((0.5 - 3 * math.sqrt(0.25 / 200),
                                      0.5 + 3 * math.sqrt(0.25 / 200)))
    assert rep.passed, rep.coverage


def test_coverage_refuses_abel():
    with pytest.raises(ContractError):
        exp.run_coverage_experiment(scenario(kernel=Kernel.abel(0.75)))


def test_selection_with_huge_penalty_recovers_nothing():
    s = scenario(kernel=Kernel.boxcar(), fit=FitConfig(lam=1e6, k_max=2), reps=20)
    rep = exp.run_selection_experiment(s)
    assert rep.recovery == [0.0, 0.0, 0.0] and not rep.passed


def test_noiseless_selection_recovers_everything():
    s = scenario(kernel=Kernel.boxcar(), sigma=0.0, fit=FitConfig(lam=1e-6, k_max=2),
                 reps=2)
    rep = exp.run_selection_experiment(s)
    assert rep.recovery == [1.0, 1.0, 1.0] and rep.passed


def test_monotone_within_se():
    assert exp.is_monotone_within_se([0.5, 0.48, 0.9], [0.03, 0.03, 0.02])
    assert not exp.is_monotone_within_se([0.9, 0.5], [0.02, 0.03])


def test_noiseless_normality_is_degenerate():
    rep = exp.normality_diagnostics(scenario(sigma=0.0), n=200)
    assert rep.status == "degenerate-noiseless" and not rep.passed
    assert all(z == 0.0 for *_, z in rep.records)


def test_normality_summary_shape():
    rep = exp.normality_diagnostics(scenario(kernel=Kernel.boxcar()), n=400)
    assert len(rep.parameters) == 3
    for p in rep.parameters:
        assert {"mean", "variance", "ks_distance", "ks_band"} <= set(p)


def test_write_report(tmp_path):
    rep = exp.run_rate_experiment(scenario(kernel=Kernel.boxcar()))
    j, c = exp.write_report(rep, tmp_path, "rates")
    doc = json.loads(j.read_text())
    assert doc["kind"] == "rates" and doc["metric"] == "tau_abs"
    with open(c) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "rep", "metric"]
    assert len(rows) == 1 + 3 * 50
    assert float(rows[1][2]) == rep.records[0][2]


def test_worker_env(monkeypatch):
    monkeypatch.setenv(exp.WORKERS_ENV, "3")
    assert exp.worker_count() == 3
    monkeypatch.setenv(exp.WORKERS_ENV, "many")
    with pytest.raises(ContractError):
        exp.worker_count()
