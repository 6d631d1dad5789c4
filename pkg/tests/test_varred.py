import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import basket2_price, call_payoff_mean_lognormal, ols
from optquant.cubature import quantized_expectation, rate_study
from optquant.distrib import normal
from optquant.quantizer import QuantizerGrid, initial_grid
from optquant.varred import (
    BasketOption,
    BSModel,
    CVSpec,
    ExchangeSpread,
    PutOnCall,
    VanillaCall,
    basket_payoff,
    bs_call_price,
    build_control_variates,
    replication_streams,
    run_experiment,
    solve_lambda,
)

LEVELS = [50, 100, 200, 300, 400, 500]


# ---------------------------------------------------------------- pricing


def test_bs_call_examples():
    assert bs_call_price(100.0, 0.0, 0.05, 0.3, 2.0) == pytest.approx(100.0, rel=1e-15)
    assert bs_call_price(100.0, 80.0, 0.1, 0.5, 1.0) == pytest.approx(34.15007, abs=5e-6)
    assert bs_call_price(100.0, 80.0, 0.0, 1e-9, 1.0) == pytest.approx(20.0, abs=1e-9)


@given(
    st.floats(min_value=10, max_value=300),
    st.floats(min_value=1, max_value=300),
    st.floats(min_value=0.0, max_value=0.1),
    st.floats(min_value=0.05, max_value=1.0),
    st.floats(min_value=0.1, max_value=5.0),
)
def test_bs_call_matches_quadrature(s0, K, r, sigma, T):
    ref = math.exp(-r * T) * call_payoff_mean_lognormal(s0, K, r, sigma, T)
    assert bs_call_price(s0, K, r, sigma, T) == pytest.approx(ref, rel=1e-8, abs=1e-9)


def test_bs_call_vectorized():
    K = np.array([0.0, 50.0, 100.0])
    out = bs_call_price(100.0, K, 0.02, 0.3, 1.0)
    assert out.shape == (3,)
    assert out[1] == pytest.approx(bs_call_price(100.0, 50.0, 0.02, 0.3, 1.0), rel=1e-15)


def test_call_gaussian_and_lognormal_integrands_agree(store):
    c = VanillaCall()
    for basis in ("gaussian", "lognormal"):
        law, f = c.integrand(basis)
        assert quantized_expectation(store.get(law, 400), f) == pytest.approx(c.reference(), abs=2e-3)


def test_put_on_call(store):
    p = PutOnCall()
    assert p.reference() == pytest.approx(1.3945704, abs=5e-7)
    law, f = p.integrand("gaussian")
    assert abs(quantized_expectation(store.get(law, 1000), f) - 1.3945704) <= 5e-4
    assert PutOnCall(K1=0.0).gaussian_payoff(np.linspace(-3, 3, 7)).max() == 0.0
    r = rate_study(law, f, p.reference(), LEVELS, store=store)
    assert -2.3 <= r.fitted_slope <= -1.7


def test_put_on_call_lognormal_basis_consistent(store):
    p = PutOnCall()
    law, f = p.integrand("lognormal")
    assert quantized_expectation(store.get(law, 1000), f) == pytest.approx(p.reference(), abs=5e-4)


def test_exchange_spread(store):
    e = ExchangeSpread()
    ref = e.reference()
    assert ref == pytest.approx(53.552678, abs=1e-6)
    law, f = e.integrand()
    assert abs(quantized_expectation(store.get(law, 1000), f) - 53.552678) <= 5e-3
    assert -2.3 <= rate_study(law, f, ref, LEVELS, store=store).fitted_slope <= -1.7
    rr = rate_study(law, f, ref, [50, 100, 150, 200, 300, 400], method="rr", store=store)
    assert -3.5 <= rr.fitted_slope <= -2.6


def test_exchange_has_no_lognormal_basis():
    with pytest.raises(ValueError):
        ExchangeSpread().integrand("lognormal")


# ---------------------------------------------------------------- basket


def test_basket_payoff_examples():
    assert basket_payoff(np.array([[90.0, 90.0]]), [0.25, 0.75], 90.0)[0] == 0.0
    assert basket_payoff(np.array([[120.0, 80.0]]), [1 / 3, 2 / 3], 90.0)[0] == pytest.approx(10 / 3, rel=1e-14)
    with pytest.raises(ValueError):
        basket_payoff(np.ones((3, 2)), [1.0, 0.0, 0.0], 1.0)


@pytest.mark.parametrize("d", [2, 3, 5, 10])
def test_standard_weights_sum_to_one(d):
    assert math.fsum(BasketOption.standard(d).alphas) == pytest.approx(1.0, abs=1e-15)


def test_bsmodel_validation():
    with pytest.raises(ValueError):
        BSModel([100, 100], 0.0, [0.2, 0.2], [[1, 1.2], [1.2, 1]], 1.0)
    with pytest.raises(ValueError):
        BSModel([100, 100], 0.0, [0.2, 0.2], [[2, 0], [0, 1]], 1.0)
    with pytest.raises(ValueError):
        BSModel([100, 100], 0.0, [0.2, -0.2], [[1, 0], [0, 1]], 1.0)
    with pytest.raises(ValueError):
        BSModel([100, 100], 0.0, [0.2], [[1, 0], [0, 1]], 1.0)


def test_log_terminal_correlation():
    b = BasketOption.standard(3)
    m = b.model
    z = np.random.default_rng(17).standard_normal((10**6, 3))
    logs = np.log(m.terminals(z))
    cov = np.cov(logs, rowvar=False)
    target = m.corr * np.outer(m.sigmas, m.sigmas) * m.T
    # standard error of a sample covariance: sqrt((s_ii s_jj + s_ij^2) / M)
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target**2) / z.shape[0])
    assert np.all(np.abs(cov - target) <= 3 * se)


def test_reference_by_conditioning_matches_control_variate_mc():
    b = BasketOption.standard(2)
    exact = basket2_price(b.model, b.alphas, b.strike)
    res = run_experiment(b.model, b, CVSpec(exact_means=True), 20000, 32, 5)
    assert abs(res.controlled.mean - exact) <= 3 * res.controlled.std / math.sqrt(32)


def test_lognormal_control_means_two_routes():
    b = BasketOption.standard(3)
    cv = build_control_variates(b.model, b, CVSpec(basis="lognormal", grid_level=200))
    closed = b.lognormal_control_means()
    assert cv.exact_means() == pytest.approx(closed, rel=1e-9)
    assert np.all(np.isfinite(cv.quantized_means))
    assert cv.quantized_means == pytest.approx(closed, rel=1e-4)


@pytest.mark.parametrize("basis", ["lognormal", "gaussian"])
def test_control_bias_is_order_two(store, basis):
    b = BasketOption.standard(3)
    exact = build_control_variates(b.model, b, CVSpec(basis=basis, grid_level=20), store).exact_means()
    levels = [20, 50, 200]
    bias = []
    for n in levels:
        q = build_control_variates(b.model, b, CVSpec(basis=basis, grid_level=n), store).quantized_means
        bias.append(np.max(np.abs(q - exact)))
    # the kink cell makes N^2 * bias oscillate, so check the O(N^-2) envelope
    assert max(n * n * e for n, e in zip(levels, bias)) <= 100.0
    assert bias[-1] < bias[0]
    # negligible against the Monte Carlo variance at M = 1e4
    assert bias[-1] ** 2 < 1e-3 * 1400 / 1e4


# ---------------------------------------------------------------- control variates


def test_control_for_ignored_coordinate_has_zero_variance():
    m = BSModel([100, 100], 0.02, [0.3, 0.4], [[1, 0.5], [0.5, 1]], 1.0)
    payoff = lambda s: np.maximum(s[:, 0] - 100, 0.0)  # noqa: E731
    cv = build_control_variates(m, payoff, CVSpec(basis="lognormal", grid_level=50))
    x = cv.evaluate(np.random.default_rng(0).standard_normal((1000, 2)))
    assert np.var(x[:, 1]) == 0.0
    assert np.var(x[:, 0]) > 0.0


@pytest.mark.parametrize("basis", ["lognormal", "gaussian"])
def test_single_asset_control_is_perfect(basis):
    m = BSModel([100.0], 0.02, [0.3], [[1.0]], 1.0)
    payoff = lambda s: m.discount * np.maximum(s[:, 0] - 95.0, 0.0)  # noqa: E731
    res = run_experiment(m, payoff, CVSpec(basis=basis, grid_level=100), 2000, 16, 1)
    assert res.controlled.std < 1e-10
    assert np.allclose(res.lambdas, 1.0)


def test_non_stationary_grid_warns():
    class Raw:
        def get(self, law, n):
            return QuantizerGrid.from_points(law, np.asarray(initial_grid(law, n)))

    b = BasketOption.standard(2)
    with pytest.warns(RuntimeWarning, match="not stationary"):
        cv = build_control_variates(b.model, b, CVSpec(grid_level=10), Raw())
    assert len(cv.warnings) == 2


def test_solve_lambda_perfect_control():
    f1 = np.random.default_rng(1).standard_normal(500)
    assert solve_lambda(f1, f1[:, None])[0] == pytest.approx(1.0, abs=1e-12)


def test_solve_lambda_uncorrelated():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    f = np.array([1.0, 1.0, -1.0, -1.0])
    assert solve_lambda(f, x[:, None])[0] == pytest.approx(0.0, abs=1e-15)


def test_solve_lambda_recovers_coefficients():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((20000, 2))
    f = 2 * X[:, 0] + 3 * X[:, 1] + 0.1 * rng.standard_normal(20000)
    lam = solve_lambda(f, X)
    assert lam == pytest.approx(ols(f, X), rel=1e-10)
    assert lam == pytest.approx([2.0, 3.0], abs=0.01)
    # the shortcut ignores the sample cross-covariance, O(1/sqrt(M)) here
    assert solve_lambda(f, X, independent=True) == pytest.approx([2.0, 3.0], abs=0.05)


def test_solve_lambda_constant_and_collinear_controls():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(200)
    f = 2 * x
    assert solve_lambda(f, np.column_stack([x, np.ones(200)])) == pytest.approx([2.0, 0.0], abs=1e-10)
    lam = solve_lambda(f, np.column_stack([x, x]))
    assert lam.sum() == pytest.approx(2.0, rel=1e-6)


def test_solve_lambda_needs_enough_samples():
    with pytest.raises(ValueError):
        solve_lambda(np.ones(2), np.ones((2, 2)))


# ---------------------------------------------------------------- harness


def test_replication_streams_are_reproducible_and_distinct():
    a = [g.standard_normal(3) for g in replication_streams(9, 4)]
    b = [g.standard_normal(3) for g in replication_streams(9, 4)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], a[1])


def test_zero_lambda_equals_crude():
    b = BasketOption.standard(2)
    res = run_experiment(b.model, b, CVSpec(lambda_=[0.0, 0.0]), 500, 8, 3)
    assert np.array_equal(res.controlled.estimates, res.crude.estimates)


def test_run_experiment_is_deterministic():
    b = BasketOption.standard(2)
    r1 = run_experiment(b.model, b, CVSpec(), 1000, 8, 42, reference=20.7)
    r2 = run_experiment(b.model, b, CVSpec(), 1000, 8, 42, reference=20.7)
    assert r1.to_json() == r2.to_json()
    assert r1.to_csv() == r2.to_csv()


def test_report_fields():
    b = BasketOption.standard(2)
    res = run_experiment(b.model, b, CVSpec(), 1000, 16, 4, reference=20.7)
    for rep in (res.crude, res.controlled):
        assert rep.empirical_mse >= 0
        assert rep.half_width_95 == pytest.approx(1.96 * rep.std / 4, rel=1e-14)
        assert rep.n_replications == 16 and rep.samples_per_replication == 1000
    assert res.controlled.variance_ratio > 1
    assert run_experiment(b.model, b, None, 100, 2, 4).controlled is None


def test_pilot_mode():
    b = BasketOption.standard(2)
    same = run_experiment(b.model, b, CVSpec(), 2000, 16, 8)
    pilot = run_experiment(b.model, b, CVSpec(lambda_mode="pilot"), 2000, 16, 8)
    assert pilot.controlled.std < same.crude.std / 3
    assert not np.array_equal(pilot.controlled.estimates, same.controlled.estimates)


def test_bias_variance_accounting(store):
    # a coarse grid makes the quantization bias visible next to the noise
    b = BasketOption.standard(2)
    exact = basket2_price(b.model, b.alphas, b.strike)
    M, n = 5000, 128
    res = run_experiment(b.model, b, CVSpec(grid_level=4), M, n, 11, reference=exact, store=store)
    cv = build_control_variates(b.model, b, CVSpec(grid_level=4), store)
    lam = res.lambdas.mean(axis=0)
    bias = float(lam @ (cv.quantized_means - cv.exact_means()))
    predicted = bias**2 + res.controlled.std**2
    assert res.controlled.empirical_mse == pytest.approx(predicted, rel=0.4)
    assert bias**2 > 0.5 * res.controlled.std**2


@pytest.mark.parametrize("d", [2, 3])
def test_lognormal_basis_beats_gaussian_basis(store, d):
    b = BasketOption.standard(d)
    logn = run_experiment(b.model, b, CVSpec(basis="lognormal"), 10000, 32, 6, store=store)
    gaus = run_experiment(b.model, b, CVSpec(basis="gaussian"), 10000, 32, 6, store=store)
    assert logn.controlled.std <= gaus.controlled.std
