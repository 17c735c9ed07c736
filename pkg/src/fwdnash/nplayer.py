"""Constant forward Nash equilibrium of the n-player CARA game.

Agent ``i`` maximises the forward utility of ``X^i - theta_i * mean_{k != i} X^k``.
With exponential initial data every best response is constant and the
equilibrium reduces to a linear system in the strategies, solved here in
closed form through the aggregates ``phi_sigma`` and ``psi_sigma``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import (
    DegenerateEquilibrium,
    DimensionMismatch,
    IllConditionedWarning,
    NoConvergence,
    PreconditionError,
)
from .market import PopulationSpec, full_strategy, others_averages

DEGENERACY_TOL = 1e-10
ILL_CONDITIONED_TOL = 1e-3


class AggregatesN(NamedTuple):
    phi_sigma: float
    psi_sigma: float
    phi_mu: float
    psi_mu: float


class PopulationAverages(NamedTuple):
    """Whole-population averages of ``pi*sigma``, ``pi*mu`` and ``(pi*nu)^2``."""

    pi_sigma: float
    pi_mu: float
    pi_nu_sq: float


@dataclass(frozen=True)
class EquilibriumN:
    strategies: NDArray[np.float64]
    lambdas: NDArray[np.float64]
    aggregates: AggregatesN
    averages: PopulationAverages
    max_nash_residual: float

    @property
    def n(self) -> int:
        return self.strategies.size


def _effective_variance(pop: PopulationSpec) -> NDArray[np.float64]:
    return pop.nu**2 + pop.sigma**2 * (1 + pop.theta / (pop.n - 1))


def aggregates_n(pop: PopulationSpec) -> AggregatesN:
    """The four population aggregates entering the n-player equilibrium."""
    n = pop.n
    d = _effective_variance(pop)
    return AggregatesN(
        phi_sigma=float(np.sum(pop.delta * pop.mu * pop.sigma / d) / n),
        psi_sigma=float(np.sum(pop.theta * pop.sigma**2 / d) / (n - 1)),
        phi_mu=float(np.sum(pop.delta * pop.mu**2 / d) / n),
        psi_mu=float(np.sum(pop.theta * pop.mu * pop.sigma / d) / n),
    )


def check_solvable(psi_sigma: float, error=DegenerateEquilibrium, what="constant forward Nash equilibrium"):
    """Raise ``error`` when ``psi_sigma`` is numerically one; warn when it is close."""
    gap = abs(1.0 - psi_sigma)
    if not gap > DEGENERACY_TOL:
        raise error(f"no {what} (psi_sigma = 1)")
    if gap <= ILL_CONDITIONED_TOL:
        warnings.warn(
            f"psi_sigma = {psi_sigma!r} is within {ILL_CONDITIONED_TOL} of 1; the equilibrium is ill-conditioned",
            IllConditionedWarning,
            stacklevel=3,
        )


def _assemble(pop: PopulationSpec, agg: AggregatesN, strategies: NDArray[np.float64]) -> EquilibriumN:
    n = pop.n
    d = _effective_variance(pop)
    pi_sigma = agg.phi_sigma / (1 - agg.psi_sigma)
    pi_mu = n / (n - 1) * pi_sigma * agg.psi_mu + agg.phi_mu
    pi_nu = pop.nu * (pop.theta * pop.sigma * n / (n - 1) * pi_sigma + pop.mu * pop.delta) / d
    averages = PopulationAverages(pi_sigma, pi_mu, float(np.mean(pi_nu**2)))
    residual = nash_residual(strategies, pop)
    strategies.setflags(write=False)
    eq = EquilibriumN(
        strategies=strategies,
        lambdas=np.empty(0),
        aggregates=agg,
        averages=averages,
        max_nash_residual=float(np.max(np.abs(residual))),
    )
    lambdas = lambda_equilibrium(pop, eq)
    lambdas.setflags(write=False)
    return EquilibriumN(strategies, lambdas, agg, averages, eq.max_nash_residual)


def equilibrium_n(pop: PopulationSpec) -> EquilibriumN:
    """Closed-form constant forward Nash equilibrium.

    Raises
    ------
    DegenerateEquilibrium
        if ``|1 - psi_sigma| <= 1e-10``.
    """
    agg = aggregates_n(pop)
    check_solvable(agg.psi_sigma)
    n = pop.n
    pi_sigma = agg.phi_sigma / (1 - agg.psi_sigma)
    strategies = (pop.theta * pop.sigma * (1 + 1 / (n - 1)) * pi_sigma + pop.mu * pop.delta) / _effective_variance(pop)
    return _assemble(pop, agg, strategies)


def is_single_stock(pop) -> bool:
    return bool(
        np.all(pop.nu == 0)
        and np.all(pop.sigma > 0)
        and np.all(pop.mu == pop.mu[0])
        and np.all(pop.sigma == pop.sigma[0])
    )


def single_stock_equilibrium_n(pop: PopulationSpec) -> EquilibriumN:
    """Equilibrium when every agent trades the same stock (``nu = 0``)."""
    if not is_single_stock(pop):
        raise PreconditionError("population is not single-stock: need common (mu, sigma), sigma > 0 and nu = 0")
    n = pop.n
    mu, sigma = pop.mu[0], pop.sigma[0]
    scale = 1 + pop.theta / (n - 1)
    phi = float(np.sum(pop.delta / scale) / n)
    psi = float(np.sum(pop.theta / scale) / (n - 1))
    check_solvable(psi)
    strategies = mu / (sigma**2 * scale) * (pop.theta * (1 + 1 / (n - 1)) * phi / (1 - psi) + pop.delta)
    agg = AggregatesN(
        phi_sigma=phi * mu / sigma,
        psi_sigma=psi,
        phi_mu=phi * mu**2 / sigma**2,
        psi_mu=float(np.sum(pop.theta / scale) / n) * mu / sigma,
    )
    return _assemble(pop, agg, strategies)


def _check_others(others, pop: PopulationSpec) -> NDArray[np.float64]:
    others = np.asarray(others, dtype=np.float64).ravel()
    if others.size != pop.n - 1:
        raise DimensionMismatch(f"expected {pop.n - 1} strategies for the other agents, got {others.size}")
    return others


def best_response(i: int, others: ArrayLike, pop: PopulationSpec) -> float:
    """Optimal constant strategy of agent ``i`` against fixed strategies of the others."""
    others = _check_others(others, pop)
    avg = others_averages(i, pop, full_strategy(i, others, pop.n))
    s2 = pop.nu[i] ** 2 + pop.sigma[i] ** 2
    return float((pop.theta[i] * pop.sigma[i] * avg.pi_sigma + pop.mu[i] * pop.delta[i]) / s2)


def simultaneous_best_response(strategies: ArrayLike, pop: PopulationSpec) -> NDArray[np.float64]:
    """Every agent's best response to the current profile (Jacobi sweep)."""
    pi = np.asarray(strategies, dtype=np.float64)
    exposure = pi * pop.sigma
    others_sigma = (np.sum(exposure) - exposure) / (pop.n - 1)
    return (pop.theta * pop.sigma * others_sigma + pop.mu * pop.delta) / pop.total_variance


@dataclass
class IterationResult:
    strategies: NDArray[np.float64]
    converged: bool
    n_iter: int
    log: list[float] = field(default_factory=list)


def best_response_iteration(
    pop: PopulationSpec,
    start: ArrayLike | None = None,
    damping: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    raise_on_failure: bool = False,
) -> IterationResult:
    """Damped simultaneous best-response dynamics.

    ``pi <- (1 - damping) * pi + damping * BR(pi)`` is repeated; the run is
    declared converged once the update about to be applied has max-norm at
    most ``tol``.  ``log`` holds that max-norm for every sweep.

    Non-convergence is reported through ``converged=False`` (the iterates
    blow up when ``psi_sigma >= 1``); pass ``raise_on_failure=True`` to get
    :class:`NoConvergence` instead.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    pi = np.zeros(pop.n) if start is None else np.array(start, dtype=np.float64).ravel()
    if pi.size != pop.n:
        raise DimensionMismatch(f"expected {pop.n} starting strategies, got {pi.size}")
    log: list[float] = []
    for k in range(max_iter + 1):
        step = damping * (simultaneous_best_response(pi, pop) - pi)
        size = float(np.max(np.abs(step)))
        log.append(size)
        if size <= tol:
            return IterationResult(pi, True, k, log)
        if not np.isfinite(size) or k == max_iter:
            break
        pi = pi + step
    result = IterationResult(pi, False, len(log) - 1, log)
    if raise_on_failure:
        raise NoConvergence(f"best-response iteration did not converge after {result.n_iter} sweeps", pi, log)
    return result


def lambda_from_others(i: int, others: ArrayLike, pop: PopulationSpec) -> float:
    """Time slope of agent ``i``'s exponential forward utility given the others' strategies.

    Uses (n-1)-averages over the other agents, including for ``(pi*nu)^2``,
    which is the normalisation produced by the quadratic variation of the
    relative wealth.
    """
    others = _check_others(others, pop)
    avg = others_averages(i, pop, full_strategy(i, others, pop.n))
    delta, theta, mu = pop.delta[i], pop.theta[i], pop.mu[i]
    s2 = pop.nu[i] ** 2 + pop.sigma[i] ** 2
    k = theta / delta
    return float(
        -k * avg.pi_mu
        + (mu + k * pop.sigma[i] * avg.pi_sigma) ** 2 / (2 * s2)
        - 0.5 * k**2 * (avg.pi_sigma**2 + avg.pi_nu_sq / (pop.n - 1))
    )


def _others_from_population(pop: PopulationSpec, eq: EquilibriumN):
    n = pop.n
    pi = np.asarray(eq.strategies)
    avg = eq.averages
    pi_sigma = n / (n - 1) * avg.pi_sigma - pi * pop.sigma / (n - 1)
    pi_mu = n / (n - 1) * avg.pi_mu - pi * pop.mu / (n - 1)
    pi_nu_term = n / (n - 1) ** 2 * avg.pi_nu_sq - (pi * pop.nu) ** 2 / (n - 1) ** 2
    return pi_sigma, pi_mu, pi_nu_term


def lambda_equilibrium(pop: PopulationSpec, eq: EquilibriumN, i: int | None = None):
    """Equilibrium time slopes from whole-population averages.

    Returns the value for agent ``i``, or the full vector when ``i`` is None.
    """
    pi_sigma, pi_mu, pi_nu_term = _others_from_population(pop, eq)
    s2 = pop.total_variance
    ratio = pop.theta / pop.delta
    lam = (
        -ratio * (pi_mu - pop.mu * pop.sigma / s2 * pi_sigma)
        + pop.mu**2 / (2 * s2)
        + 0.5 * ratio**2 * (pi_sigma**2 * (pop.sigma**2 / s2 - 1) - pi_nu_term)
    )
    return lam if i is None else float(lam[i])


def idiosyncratic_lambda_term(pop: PopulationSpec, eq: EquilibriumN) -> NDArray[np.float64]:
    """Per-agent contribution of the other agents' private noise to ``lambda_i``.

    This is ``theta_i^2 / (2 delta_i^2)`` times the ``(pi*nu)^2`` term, which
    is O(1/n) and absent from the mean-field limit.
    """
    _, _, pi_nu_term = _others_from_population(pop, eq)
    return 0.5 * (pop.theta / pop.delta) ** 2 * pi_nu_term


def nash_residual(strategies: ArrayLike, pop: PopulationSpec) -> NDArray[np.float64]:
    """Per-agent residual of the equilibrium linear system."""
    pi = np.asarray(strategies, dtype=np.float64).ravel()
    if pi.size != pop.n:
        raise DimensionMismatch(f"expected {pop.n} strategies, got {pi.size}")
    exposure = pi * pop.sigma
    others_sigma = (np.sum(exposure) - exposure) / (pop.n - 1)
    return pi * pop.total_variance - pop.theta * pop.sigma * others_sigma - pop.mu * pop.delta
