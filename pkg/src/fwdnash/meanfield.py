"""Constant MF-equilibrium of the CARA forward relative-performance game.

The generic agent interacts with the continuum only through the common
noise: the population's exposure ``E[sigma*pi]`` and drift ``E[mu*pi]``.
Expectations over types are exact sums over the atoms of a
:class:`~fwdnash.market.TypeDistribution`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .exceptions import NoConstantEquilibrium, PreconditionError
from .market import AgentType, CaraForwardUtility, TypeDistribution
from .nplayer import check_solvable, is_single_stock


class AggregatesMF(NamedTuple):
    psi_sigma: float
    phi_sigma: float
    psi_mu: float
    phi_mu: float


@dataclass(frozen=True)
class EquilibriumMF:
    aggregates: AggregatesMF
    sigma_pi_bar: float
    mu_pi_bar: float
    xi_bar: float
    strategies: NDArray[np.float64]  # one per atom
    lambdas: NDArray[np.float64]  # one per atom

    def strategy(self, zeta: AgentType) -> float:
        """Equilibrium strategy of an arbitrary type against this population."""
        s2 = zeta.nu**2 + zeta.sigma**2
        return (zeta.theta * zeta.sigma * self.sigma_pi_bar + zeta.mu * zeta.delta) / s2


def mf_aggregates(dist: TypeDistribution) -> AggregatesMF:
    s2 = dist.total_variance
    return AggregatesMF(
        psi_sigma=dist.expect(dist.theta * dist.sigma**2 / s2),
        phi_sigma=dist.expect(dist.delta * dist.mu * dist.sigma / s2),
        psi_mu=dist.expect(dist.theta * dist.mu * dist.sigma / s2),
        phi_mu=dist.expect(dist.delta * dist.mu**2 / s2),
    )


def _lambda(delta, theta, mu, nu, sigma, sigma_pi_bar, mu_pi_bar):
    k = theta / delta
    s2 = nu**2 + sigma**2
    return -k * mu_pi_bar + (mu + k * sigma * sigma_pi_bar) ** 2 / (2 * s2) - 0.5 * k**2 * sigma_pi_bar**2


def _build(dist: TypeDistribution, agg: AggregatesMF, strategies: NDArray[np.float64]) -> EquilibriumMF:
    sigma_pi_bar = agg.phi_sigma / (1 - agg.psi_sigma)
    mu_pi_bar = sigma_pi_bar * agg.psi_mu + agg.phi_mu
    lambdas = _lambda(dist.delta, dist.theta, dist.mu, dist.nu, dist.sigma, sigma_pi_bar, mu_pi_bar)
    strategies.setflags(write=False)
    lambdas.setflags(write=False)
    return EquilibriumMF(
        aggregates=agg,
        sigma_pi_bar=sigma_pi_bar,
        mu_pi_bar=mu_pi_bar,
        xi_bar=dist.expect(dist.x0),
        strategies=strategies,
        lambdas=lambdas,
    )


def mf_equilibrium(dist: TypeDistribution) -> EquilibriumMF:
    """Unique constant MF-equilibrium; raises :class:`NoConstantEquilibrium` if ``psi_sigma = 1``."""
    agg = mf_aggregates(dist)
    check_solvable(agg.psi_sigma, NoConstantEquilibrium, "constant MF-equilibrium")
    sigma_pi_bar = agg.phi_sigma / (1 - agg.psi_sigma)
    strategies = (dist.theta * dist.sigma * sigma_pi_bar + dist.mu * dist.delta) / dist.total_variance
    return _build(dist, agg, strategies)


def mf_lambda(zeta: AgentType, eq: EquilibriumMF) -> float:
    """Time slope of the generic agent's forward utility."""
    return float(_lambda(zeta.delta, zeta.theta, zeta.mu, zeta.nu, zeta.sigma, eq.sigma_pi_bar, eq.mu_pi_bar))


def mf_lambda_expanded(zeta: AgentType, eq: EquilibriumMF) -> float:
    """Same slope written through the aggregates instead of the population averages."""
    a = eq.aggregates
    ratio = a.phi_sigma / (1 - a.psi_sigma)
    s2 = zeta.nu**2 + zeta.sigma**2
    k = zeta.theta / zeta.delta
    return float(
        -k * (ratio * a.psi_mu + a.phi_mu - zeta.mu * zeta.sigma / s2 * ratio)
        + zeta.mu**2 / (2 * s2)
        + 0.5 * k**2 * ratio**2 * (zeta.sigma**2 / s2 - 1)
    )


def mf_spde_residual(zeta: AgentType, eq: EquilibriumMF, x, t, lam: float | None = None):
    """``RHS(U) - U_t`` of the generic agent's consistency PDE.

    ``U`` is the exponential forward utility with slope ``lam`` (defaults
    to :func:`mf_lambda`).  The coefficients are written through the
    aggregates, independently of the compact slope formula.
    """
    if lam is None:
        lam = mf_lambda(zeta, eq)
    d = CaraForwardUtility(zeta.delta, lam).derivatives(x, t)
    a = eq.aggregates
    ratio = a.phi_sigma / (1 - a.psi_sigma)
    s2 = zeta.nu**2 + zeta.sigma**2
    drift_coef = zeta.theta * (ratio * a.psi_mu + a.phi_mu - zeta.mu * zeta.sigma / s2 * ratio)
    rhs = (
        drift_coef * d.u_x
        + zeta.mu**2 / (2 * s2) * d.u_x**2 / d.u_xx
        + 0.5 * d.u_xx * zeta.theta**2 * ratio**2 * (zeta.sigma**2 / s2 - 1)
    )
    return rhs - d.u_t


def single_stock_equilibrium_mf(dist: TypeDistribution) -> EquilibriumMF:
    """MF-equilibrium when all atoms share ``(mu, sigma)`` and ``nu = 0``."""
    if not is_single_stock(dist):
        raise PreconditionError("distribution is not single-stock: need common (mu, sigma), sigma > 0 and nu = 0")
    mu, sigma = dist.mu[0], dist.sigma[0]
    phi = dist.expect(dist.delta)
    psi = dist.expect(dist.theta)
    check_solvable(psi, NoConstantEquilibrium, "constant MF-equilibrium")
    strategies = mu / sigma**2 * (dist.theta * phi / (1 - psi) + dist.delta)
    agg = AggregatesMF(
        psi_sigma=psi,
        phi_sigma=phi * mu / sigma,
        psi_mu=psi * mu / sigma,
        phi_mu=phi * mu**2 / sigma**2,
    )
    return _build(dist, agg, strategies)
