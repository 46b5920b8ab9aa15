import json
import math

import numpy as np
import pytest

from oracles import design_matrix, exhaustive_grid_fit, grid_rss_two_levels
from stepdeconv import estimator
from stepdeconv.errors import ContractError, DegenerateFitError
from stepdeconv.estimator import (FitConfig, FitResult, fit_known_k, fit_penalized,
                                  heights_given_jumps, jump_grid, select_lambda)
from stepdeconv.kernels import Kernel
from stepdeconv.model import Dataset, DesignSpec, forward_eval, simulate_dataset
from stepdeconv.signal import StepFunction

SMOOTH = [Kernel.gaussian(), Kernel.laplace(), Kernel.tent_power(2)]
JUMPY = [Kernel.boxcar(), Kernel.polynomial(1), Kernel.abel(0.75)]
kid = lambda k: f"{k.family}{k.p or k.alpha or ''}"  # noqa: E731


def noiseless(kernel, levels, jumps, n):
    return simulate_dataset(kernel, StepFunction(levels, jumps), DesignSpec(), n, 0.0, 0)


# -- heights ------------------------------------------------------------------

@pytest.mark.parametrize("kernel", [Kernel.gaussian(), Kernel.laplace(), Kernel.boxcar()],
                         ids=kid)
def test_no_jumps_gives_the_mean(kernel):
    rng = np.random.default_rng(0)
    data = Dataset(np.sort(rng.random(40)), rng.normal(size=40))
    hf = heights_given_jumps(data, kernel, [])
    assert hf.levels[0] == pytest.approx(data.y.mean(), abs=1e-14)


@pytest.mark.parametrize("kernel", SMOOTH + JUMPY, ids=kid)
def test_true_jumps_recover_true_levels(kernel):
    data = noiseless(kernel, (0.5, -1.0, 2.0), (0.3, 0.65), 200)
    hf = heights_given_jumps(data, kernel, [0.3, 0.65])
    np.testing.assert_allclose(hf.levels, [0.5, -1.0, 2.0], atol=1e-8)
    assert hf.rss < 1e-20


def test_heights_match_two_dimensional_grid_oracle():
    rng = np.random.default_rng(3)
    x = np.sort(rng.random(5))
    y = rng.normal(size=5)
    data = Dataset(x, y)
    kernel = Kernel.boxcar()
    hf = heights_given_jumps(data, kernel, [0.5])
    A = design_matrix(kernel, x, [0.5])
    ref, _ = grid_rss_two_levels(A, y, lo=-20, hi=20)
    assert hf.rss == pytest.approx(ref, abs=1e-4)
    assert hf.rss <= ref + 1e-12


def test_rank_deficient_design_is_degenerate():
    data = Dataset(np.linspace(0.1, 0.9, 5), np.arange(5.0))
    with pytest.raises(DegenerateFitError):
        heights_given_jumps(data, Kernel.boxcar(), [0.91, 0.95])


@pytest.mark.parametrize("taus", [[0.5, 0.5], [0.6, 0.4], [0.0], [1.0]])
def test_invalid_jump_vectors_rejected(taus):
    data = Dataset(np.linspace(0.1, 0.9, 5), np.arange(5.0))
    with pytest.raises(ContractError):
        heights_given_jumps(data, Kernel.boxcar(), taus)


def test_levels_respect_the_sup_norm_budget():
    kernel = Kernel.boxcar()
    data = noiseless(kernel, (0.0, 1.0), (0.5,), 60)
    hf = heights_given_jumps(data, kernel, [0.5], R=0.5)
    assert hf.clipped
    assert np.all(np.abs(hf.levels) < 0.5)
    A = design_matrix(kernel, data.x, [0.5])
    ref, _ = grid_rss_two_levels(A, data.y, lo=-0.5, hi=0.5, m=801, rounds=1)
    assert hf.rss <= ref + 1e-12
    assert hf.rss == pytest.approx(ref, abs=1e-5)


# -- known k ------------------------------------------------------------------

def test_noiseless_boxcar_single_jump():
    data = noiseless(Kernel.boxcar(), (0.0, 1.0), (0.5,), 100)
    fit = fit_known_k(data, Kernel.boxcar(), 1)
    assert abs(fit.jumps[0] - 0.5) <= FitConfig().refine_tol
    np.testing.assert_allclose(fit.levels, [0.0, 1.0], atol=1e-8)


@pytest.mark.parametrize("kernel", SMOOTH + JUMPY, ids=kid)
def test_noiseless_two_jump_recovery(kernel):
    data = noiseless(kernel, (0.0, 1.5, 0.5), (0.33, 0.71), 400)
    fit = fit_known_k(data, kernel, 2)
    np.testing.assert_allclose(fit.jumps, [0.33, 0.71], atol=1e-6)
    np.testing.assert_allclose(fit.levels, [0.0, 1.5, 0.5], atol=1e-5)


def test_constant_truth_gives_constant_fit():
    data = noiseless(Kernel.laplace(), (2.5,), (), 50)
    fit = fit_known_k(data, Kernel.laplace(), 0)
    assert fit.k_hat == 0 and fit.levels[0] == pytest.approx(2.5, abs=1e-12)


def test_too_many_jumps_for_n_rejected():
    data = noiseless(Kernel.boxcar(), (1.0,), (), 4)
    with pytest.raises(ContractError):
        fit_known_k(data, Kernel.boxcar(), 2)
    with pytest.raises(ContractError):
        fit_known_k(data, Kernel.boxcar(), -1)


def _oracle_columns(kernel, x):
    return lambda taus: design_matrix(kernel, x, taus)


@pytest.mark.parametrize("kk", [1, 2])
def test_grid_search_matches_exhaustive_enumeration(kk):
    kernel = Kernel.boxcar()
    rng = np.random.default_rng(kk)
    for _ in range(3):
        data = simulate_dataset(kernel, StepFunction((0.0, 1.0, -0.5)[:kk + 1],
                                                     (0.35, 0.7)[:kk]),
                                DesignSpec(), 20, 0.3, int(rng.integers(1 << 30)))
        cfg = FitConfig(refine=False)
        fit = fit_known_k(data, kernel, kk, cfg)
        grid = jump_grid(data, cfg.grid_size(data.n))
        combo, rss = exhaustive_grid_fit(data.x, data.y, _oracle_columns(kernel, data.x),
                                         grid, kk, R=cfg.R)
        np.testing.assert_array_equal(fit.jumps, grid[list(combo)])
        assert fit.objective == pytest.approx(rss, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("kernel", SMOOTH + JUMPY, ids=kid)
@pytest.mark.parametrize("seed", [1, 2])
def test_objective_never_worse_than_truth(kernel, seed):
    truth = StepFunction((0.0, 1.0, 0.3), (0.3, 0.6))
    data = simulate_dataset(kernel, truth, DesignSpec(), 300, 0.2, seed)
    at_truth = float(np.mean((forward_eval(kernel, truth, data.x) - data.y) ** 2))
    fit = fit_known_k(data, kernel, 2)
    assert fit.objective <= at_truth + 1e-9
    assert fit.objective >= 0 and np.all(np.abs(fit.levels) <= FitConfig().R)


@pytest.mark.parametrize("kernel", [Kernel.laplace(), Kernel.boxcar()], ids=kid)
def test_shift_equivariance(kernel):
    data = simulate_dataset(kernel, StepFunction((0.0, 1.0), (0.45,)), DesignSpec(), 200,
                            0.2, 4)
    shifted = Dataset(data.x, data.y + 3.0)
    a = fit_known_k(data, kernel, 1)
    b = fit_known_k(shifted, kernel, 1)
    np.testing.assert_allclose(b.jumps, a.jumps, atol=1e-9)
    np.testing.assert_allclose(b.levels, a.levels + 3.0, atol=1e-9)


@pytest.mark.parametrize("kernel", [Kernel.laplace(), Kernel.boxcar()], ids=kid)
def test_scale_equivariance(kernel):
    data = simulate_dataset(kernel, StepFunction((0.0, 1.0), (0.45,)), DesignSpec(), 200,
                            0.2, 5)
    scaled = Dataset(data.x, -2.5 * data.y)
    a = fit_known_k(data, kernel, 1)
    b = fit_known_k(scaled, kernel, 1)
    np.testing.assert_allclose(b.jumps, a.jumps, atol=1e-9)
    np.testing.assert_allclose(b.levels, -2.5 * a.levels, atol=1e-9)


def test_boundary_jump_is_clipped_and_flagged():
    # Boxcar and Laplace cannot tell such a jump from a level shift, the ramp can.
    data = noiseless(Kernel.polynomial(1), (0.0, 1.0), (0.002,), 100)
    fit = fit_known_k(data, Kernel.polynomial(1), 1)
    assert fit.diagnostics["boundary_clipped"]
    assert fit.jumps[0] == pytest.approx(data.x[0])


def test_fit_result_serializes():
    data = simulate_dataset(Kernel.laplace(), StepFunction((0.0, 1.0), (0.5,)), DesignSpec(),
                            100, 0.1, 2)
    fit = fit_known_k(data, Kernel.laplace(), 1)
    doc = json.loads(json.dumps(fit.to_dict()))
    assert doc["k_hat"] == 1 and len(doc["theta_hat"]) == 3
    for key in ("grid_optimum", "refine_iters", "boundary_clipped"):
        assert key in doc["diagnostics"]
    assert fit.sigma2_hat == pytest.approx(100 * fit.objective / 97)


# -- penalized ----------------------------------------------------------------

def test_huge_penalty_selects_no_jumps():
    data = simulate_dataset(Kernel.gaussian(), StepFunction((0.0, 1.0), (0.5,)), DesignSpec(),
                            300, 0.1, 1)
    lam = float(np.mean((data.y - data.y.mean()) ** 2)) * 1.01
    assert fit_penalized(data, Kernel.gaussian(), FitConfig(lam=lam)).k_hat == 0


@pytest.mark.parametrize("kernel", [Kernel.gaussian(), Kernel.laplace(), Kernel.boxcar(),
                                    Kernel.abel(0.75)], ids=kid)
def test_noiseless_penalized_finds_two_jumps(kernel):
    data = noiseless(kernel, (0.0, 1.0, 0.25), (0.3, 0.7), 400)
    fit = fit_penalized(data, kernel, FitConfig(lam=1e-6, k_max=4))
    assert fit.k_hat == 2
    np.testing.assert_allclose(fit.theta_hat, [0.0, 0.3, 1.0, 0.7, 0.25], atol=1e-5)


@pytest.mark.parametrize("kernel", [Kernel.gaussian(), Kernel.boxcar()], ids=kid)
def test_per_k_rss_is_nonincreasing(kernel):
    data = simulate_dataset(kernel, StepFunction((0.0, 1.0), (0.5,)), DesignSpec(), 500,
                            0.2, 8)
    fit = fit_penalized(data, kernel, FitConfig(k_max=4))
    rss = [fit.diagnostics["per_k"][k]["objective"] for k in range(5)]
    assert all(b <= a + 1e-12 for a, b in zip(rss[:-1], rss[1:])), rss


def test_ties_go_to_fewer_jumps(monkeypatch):
    def flat(data, kernel, kk, cfg=None, warm_start=None):
        theta = np.zeros(2 * kk + 1)
        theta[1::2] = np.linspace(0.2, 0.8, kk)
        return FitResult(theta, kk, 1.0, 1.0, 1.0, {})
    monkeypatch.setattr(estimator, "fit_known_k", flat)
    data = Dataset(np.linspace(0, 1, 20), np.zeros(20))
    assert fit_penalized(data, Kernel.boxcar(), FitConfig(lam=0.0, k_max=3)).k_hat == 0


def test_default_penalty_uses_difference_variance():
    data = simulate_dataset(Kernel.boxcar(), StepFunction((0.0, 1.0), (0.5,)), DesignSpec(),
                            400, 0.3, 1)
    fit = fit_penalized(data, Kernel.boxcar(), FitConfig(k_max=2))
    s0 = np.sum(np.diff(data.y) ** 2) / (2 * (data.n - 1))
    assert fit.diagnostics["lambda"] == pytest.approx(select_lambda(400, 0.5, 0.5 * s0))


def test_select_lambda_examples():
    # log(100) * 100^(-2/3) evaluates to 0.2137531
    assert select_lambda(100, 0.5, 1.0) == pytest.approx(0.2137531, abs=1e-7)
    assert select_lambda(100, 0.5, 2.0) == 2 * select_lambda(100, 0.5, 1.0)
    for n in (3, 10, 1000, 10 ** 6):
        assert select_lambda(10 * n, 0.5, 1.0) < select_lambda(n, 0.5, 1.0)
    n = 10 ** 6
    assert select_lambda(n, 0.5, 1.0) * n ** (1 / 1.5) == pytest.approx(math.log(n))


@pytest.mark.parametrize("args", [(1, 0.5, 1.0), (10, 0.0, 1.0), (10, 0.5, 0.0)])
def test_select_lambda_contract(args):
    with pytest.raises(ContractError):
        select_lambda(*args)


@pytest.mark.parametrize("kw", [dict(R=0), dict(epsilon=0), dict(lam=-1), dict(k=-1),
                                dict(k_max=-1), dict(k=3, grid_points=3)])
def test_fit_config_validation(kw):
    with pytest.raises(ContractError):
        FitConfig(**kw)


def test_grid_size_default():
    assert FitConfig().grid_size(100) == 40
    assert FitConfig().grid_size(4000) == math.ceil(4 * math.sqrt(4000))
    assert FitConfig(grid_points=7).grid_size(4000) == 7


@pytest.mark.slow
def test_penalized_selection_monte_carlo():
    kernel = Kernel.gaussian()
    truth = StepFunction((0.0, 1.0), (0.5,))
    n = 4000
    lam = select_lambda(n, 0.5, 0.5)
    hits = 0
    for rep in range(200):
        data = simulate_dataset(kernel, truth, DesignSpec(), n, 0.1, rep)
        hits += fit_penalized(data, kernel, FitConfig(lam=lam)).k_hat == 1
    assert hits / 200 >= 0.95
