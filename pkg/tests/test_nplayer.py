import warnings

import numpy as np
import pytest

from fwdnash import (
    CaraForwardUtility,
    DegenerateEquilibrium,
    DimensionMismatch,
    IllConditionedWarning,
    NoConvergence,
    PopulationSpec,
    PreconditionError,
    aggregates_n,
    best_response,
    best_response_iteration,
    equilibrium_n,
    eval_utility,
    lambda_equilibrium,
    lambda_from_others,
    nash_residual,
    single_stock_equilibrium_n,
    validate_type,
)
from fwdnash.market import others_averages

from conftest import HOMOGENEOUS, random_population


def linear_system_solution(pop):
    """Dense solve of pi_i s2_i - theta_i sigma_i/(n-1) sum_{k!=i} pi_k sigma_k = mu_i delta_i."""
    n = pop.n
    a = -np.outer(pop.theta * pop.sigma, pop.sigma) / (n - 1)
    np.fill_diagonal(a, pop.nu**2 + pop.sigma**2)
    return np.linalg.solve(a, pop.mu * pop.delta)


@pytest.fixture
def pair(homogeneous_agent):
    return PopulationSpec.homogeneous(homogeneous_agent, 2)


def test_aggregates_homogeneous_pair(pair):
    agg = aggregates_n(pair)
    assert agg.phi_sigma == pytest.approx(2 / 3, rel=1e-15)
    assert agg.psi_sigma == pytest.approx(2 / 3, rel=1e-15)


def test_aggregates_without_competition():
    rng = np.random.default_rng(0)
    pop = random_population(rng, 0.95, (4, 9))
    params = np.array(pop.params())
    params[:, 2] = 0.0
    pop = PopulationSpec(params)
    agg = aggregates_n(pop)
    assert agg.psi_sigma == 0.0
    assert agg.psi_mu == 0.0
    assert agg.phi_sigma == pytest.approx(np.mean(pop.delta * pop.mu * pop.sigma / (pop.nu**2 + pop.sigma**2)), rel=1e-14)


def test_aggregates_no_common_noise():
    pop = PopulationSpec([validate_type(0, 1, 0.5, 1, 1, 0), validate_type(0, 2, 0.9, 0.3, 0.5, 0)])
    agg = aggregates_n(pop)
    assert agg.phi_sigma == 0.0 and agg.psi_sigma == 0.0


def test_equilibrium_homogeneous_pair(pair):
    eq = equilibrium_n(pair)
    np.testing.assert_allclose(eq.strategies, [2.0, 2.0], rtol=1e-15)
    np.testing.assert_allclose(eq.lambdas, [0.5, 0.5], rtol=1e-14)
    np.testing.assert_array_equal(nash_residual(eq.strategies, pair), [0.0, 0.0])


def test_equilibrium_without_competition():
    pop = PopulationSpec([validate_type(0, 1.5, 0, 0.4, 0.3, 0.2), validate_type(0, 1, 0, 0.2, 0.1, 0.5), validate_type(0, 3, 0, 0.1, 0.0, 0.3)])
    eq = equilibrium_n(pop)
    np.testing.assert_allclose(eq.strategies, pop.mu * pop.delta / (pop.nu**2 + pop.sigma**2), rtol=1e-14)
    np.testing.assert_allclose(eq.lambdas, pop.mu**2 / (2 * (pop.nu**2 + pop.sigma**2)), rtol=1e-14)


def test_equilibrium_degenerate():
    pop = PopulationSpec.homogeneous(validate_type(0, 1, 1, 1, 0, 1), 2)
    assert aggregates_n(pop).psi_sigma == pytest.approx(1.0)
    with pytest.raises(DegenerateEquilibrium, match="psi_sigma = 1"):
        equilibrium_n(pop)


def test_equilibrium_ill_conditioned_warns():
    # homogeneous single stock: psi = n theta / (n - 1 + theta); pick theta just below 1
    theta = 1 - 1e-4
    pop = PopulationSpec.homogeneous(validate_type(0, 1, theta, 1, 0, 1), 2)
    with pytest.warns(IllConditionedWarning):
        eq = equilibrium_n(pop)
    assert np.all(np.isfinite(eq.strategies))


def test_equilibrium_matches_linear_solve():
    rng = np.random.default_rng(11)
    for _ in range(200):
        pop = random_population(rng, 0.95)
        eq = equilibrium_n(pop)
        np.testing.assert_allclose(eq.strategies, linear_system_solution(pop), rtol=1e-9, atol=1e-9)


def test_best_response_examples(pair):
    assert best_response(0, [2.0], pair) == pytest.approx(2.0, rel=1e-15)
    assert best_response(1, [0.0], pair) == pytest.approx(1.0, rel=1e-15)
    pop = PopulationSpec([validate_type(0, 2, 0, 0.3, 0.2, 0.4), validate_type(0, 1, 0.5, 1, 0, 1), validate_type(0, 1, 0.5, 1, 0, 1)])
    expected = 0.3 * 2 / (0.2**2 + 0.4**2)
    for others in ([0, 0], [5, -3], [100, 1]):
        assert best_response(0, others, pop) == pytest.approx(expected, rel=1e-15)


def test_best_response_dimension(pair):
    with pytest.raises(DimensionMismatch):
        best_response(0, [1.0, 2.0], pair)
    with pytest.raises(DimensionMismatch):
        lambda_from_others(0, [], pair)


def test_best_response_is_root_of_residual():
    rng = np.random.default_rng(5)
    pop = random_population(rng, 0.9, (3, 10))
    pi = rng.normal(size=pop.n)
    for i in range(pop.n):
        trial = pi.copy()
        trial[i] = best_response(i, np.delete(pi, i), pop)
        assert abs(nash_residual(trial, pop)[i]) <= 1e-12 * (1 + abs(trial[i]))


def test_iteration_homogeneous_pair(pair):
    res = best_response_iteration(pair, [0.0, 0.0], damping=1.0, tol=1e-13)
    assert res.converged
    np.testing.assert_allclose(res.strategies, [2.0, 2.0], atol=1e-12)
    # contraction factor 0.5 per sweep
    ratios = np.array(res.log[1:6]) / np.array(res.log[:5])
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-12)


def test_iteration_without_competition_single_sweep():
    pop = PopulationSpec([validate_type(0, 1.5, 0, 0.4, 0.3, 0.2), validate_type(0, 1, 0, 0.2, 0.1, 0.5)])
    res = best_response_iteration(pop, [7.0, -3.0], damping=1.0)
    assert res.converged and res.n_iter == 1


def test_iteration_degenerate_diverges():
    pop = PopulationSpec.homogeneous(validate_type(0, 1, 1, 1, 0, 1), 2)
    res = best_response_iteration(pop, [0.0, 0.0], damping=1.0, max_iter=200)
    assert not res.converged
    assert res.strategies[0] == pytest.approx(200.0)
    with pytest.raises(NoConvergence) as info:
        best_response_iteration(pop, [0.0, 0.0], damping=1.0, max_iter=50, raise_on_failure=True)
    assert len(info.value.log) == 51


def test_iteration_argument_checks(pair):
    with pytest.raises(ValueError):
        best_response_iteration(pair, damping=0.0)
    with pytest.raises(DimensionMismatch):
        best_response_iteration(pair, start=[1.0])


def test_lambda_examples(pair):
    assert lambda_from_others(0, [2.0], pair) == pytest.approx(0.5, rel=1e-15)
    pop = PopulationSpec([validate_type(0, 2, 0, 0.3, 0.2, 0.4), validate_type(0, 1, 0.5, 1, 0, 1)])
    assert lambda_from_others(0, [3.0], pop) == pytest.approx(0.09 / (2 * 0.2), rel=1e-14)


def test_lambda_vanishes_without_drift_and_competition():
    # mu > 0 is required by the type space; approach mu -> 0 linearly in mu**2
    for mu in (1e-3, 1e-6):
        pop = PopulationSpec([validate_type(0, 1, 0, mu, 0.2, 0.4), validate_type(0, 1, 0.5, 1, 0, 1)])
        assert lambda_from_others(0, [4.0], pop) == pytest.approx(mu**2 / 0.4, rel=1e-12)


def test_lambda_equilibrium_agrees_with_others_formula():
    rng = np.random.default_rng(2)
    for _ in range(200):
        pop = random_population(rng, 0.95)
        eq = equilibrium_n(pop)
        lam_all = lambda_equilibrium(pop, eq)
        for i in range(pop.n):
            oracle = lambda_from_others(i, np.delete(eq.strategies, i), pop)
            assert abs(lam_all[i] - oracle) <= 1e-10 * (1 + abs(oracle))
            assert lambda_equilibrium(pop, eq, i) == lam_all[i]


def test_averages_identity_at_equilibrium():
    rng = np.random.default_rng(8)
    pop = random_population(rng, 0.9, (6, 20))
    eq = equilibrium_n(pop)
    n = pop.n
    assert eq.averages.pi_sigma == pytest.approx(np.mean(eq.strategies * pop.sigma), rel=1e-12)
    assert eq.averages.pi_mu == pytest.approx(np.mean(eq.strategies * pop.mu), rel=1e-12)
    assert eq.averages.pi_nu_sq == pytest.approx(np.mean((eq.strategies * pop.nu) ** 2), rel=1e-12)
    for i in range(n):
        avg = others_averages(i, pop, eq.strategies)
        assert avg.pi_sigma == pytest.approx(n / (n - 1) * eq.averages.pi_sigma - eq.strategies[i] * pop.sigma[i] / (n - 1), rel=1e-12, abs=1e-14)


def test_nash_residual_examples(pair):
    np.testing.assert_array_equal(nash_residual([2.0, 2.0], pair), [0.0, 0.0])
    rng = np.random.default_rng(4)
    pop = random_population(rng, 0.9)
    np.testing.assert_allclose(nash_residual(np.zeros(pop.n), pop), -pop.mu * pop.delta)
    with pytest.raises(DimensionMismatch):
        nash_residual([1.0], pair)


def test_fixed_point_property_random_populations():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        pop = random_population(rng, 0.95)
        eq = equilibrium_n(pop)
        bound = 1e-10 * (1 + np.max(np.abs(eq.strategies)))
        assert np.max(np.abs(nash_residual(eq.strategies, pop))) <= bound
        assert eq.max_nash_residual <= bound


def test_single_stock_matches_general():
    rng = np.random.default_rng(9)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        params = np.column_stack([
            rng.uniform(-1, 1, n), rng.uniform(0.1, 2, n), rng.uniform(0, 0.9, n),
            np.full(n, 0.3), np.zeros(n), np.full(n, 0.4),
        ])
        pop = PopulationSpec(params)
        try:
            general = equilibrium_n(pop)
        except DegenerateEquilibrium:
            continue
        special = single_stock_equilibrium_n(pop)
        np.testing.assert_allclose(special.strategies, general.strategies, rtol=1e-12)
        np.testing.assert_allclose(special.lambdas, general.lambdas, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(special.aggregates, general.aggregates, rtol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 10, 100])
def test_single_stock_homogeneous_closed_form(n, homogeneous_agent):
    pop = PopulationSpec.homogeneous(homogeneous_agent, n)
    eq = single_stock_equilibrium_n(pop)
    np.testing.assert_allclose(eq.strategies, 2.0, rtol=1e-12)


def test_single_stock_no_competition():
    pop = PopulationSpec([validate_type(0, d, 0, 0.5, 0, 2) for d in (1, 2, 3)])
    np.testing.assert_allclose(single_stock_equilibrium_n(pop).strategies, [0.125, 0.25, 0.375], rtol=1e-15)


def test_single_stock_preconditions(homogeneous_agent):
    with pytest.raises(PreconditionError):
        single_stock_equilibrium_n(PopulationSpec([homogeneous_agent, validate_type(0, 1, 0.5, 2, 0, 1)]))
    with pytest.raises(PreconditionError):
        single_stock_equilibrium_n(PopulationSpec([homogeneous_agent, validate_type(0, 1, 0.5, 1, 0.1, 1)]))
    with pytest.raises(DegenerateEquilibrium):
        single_stock_equilibrium_n(PopulationSpec.homogeneous(validate_type(0, 1, 1, 1, 0, 1), 2))


def test_classical_problem_recovered():
    # start from u0(x) = -exp(-x/delta - T lam): the map at t = T is the static exponential utility
    delta, lam, T = 1.3, 0.37, 2.5
    u = CaraForwardUtility(delta, lam)
    for x in (-1.0, 0.0, 2.0):
        shifted = x + delta * T * lam
        assert eval_utility(u, shifted, 0) == pytest.approx(-np.exp(-x / delta - T * lam), rel=1e-14)
        assert eval_utility(u, shifted, T) == pytest.approx(-np.exp(-x / delta), rel=1e-14)


def test_no_warning_for_well_conditioned(pair):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        equilibrium_n(pair)
