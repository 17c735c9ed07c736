"""Finite-population equilibria against their mean-field limit.

Populations are drawn i.i.d. from a type distribution.  Sampling is nested:
for a given seed the first ``n`` agents of every population are the same,
so gaps for different ``n`` are directly comparable.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import DegenerateEquilibrium, DomainError
from .market import PopulationSpec, TypeDistribution
from .meanfield import EquilibriumMF, mf_equilibrium
from .nplayer import aggregates_n, equilibrium_n, idiosyncratic_lambda_term


def _atom_draws(dist: TypeDistribution, n: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    # inverse-CDF on a uniform stream keeps draws nested in n
    u = rng.random(n)
    cdf = np.cumsum(dist.weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, u, side="right")


def sample_population(dist: TypeDistribution, n: int, seed: int) -> PopulationSpec:
    """``n`` i.i.d. agents drawn from ``dist``; a prefix of any larger draw with the same seed."""
    if n < 2:
        raise DomainError("a population needs at least 2 agents")
    idx = _atom_draws(dist, n, seed)
    return PopulationSpec(dist.params()[idx])


@dataclass(frozen=True)
class ConvergenceRow:
    n: int
    strategy_gap: float
    phi_sigma_gap: float
    psi_sigma_gap: float
    lambda_gap: float
    idiosyncratic_term: float
    degenerate: bool = False


@dataclass(frozen=True)
class ConvergenceReport:
    seed: int
    rows: tuple[ConvergenceRow, ...]

    def fitted_constant(self) -> float:
        """``K = max_n n * (max_i idiosyncratic lambda term)``."""
        vals = [r.n * r.idiosyncratic_term for r in self.rows if not r.degenerate]
        return max(vals) if vals else math.nan

    def write_csv(self, path) -> None:
        cols = ["n", "strategy_gap", "phi_sigma_gap", "psi_sigma_gap", "lambda_gap", "idiosyncratic_term", "degenerate"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([r.n] + [format(getattr(r, c), ".17g") for c in cols[1:-1]] + [int(r.degenerate)])


def _row(dist: TypeDistribution, mf: EquilibriumMF, atoms: np.ndarray, n: int) -> ConvergenceRow:
    pop = PopulationSpec(dist.params()[atoms])
    agg_mf = mf.aggregates
    agg_n = aggregates_n(pop)
    try:
        eq = equilibrium_n(pop)
    except DegenerateEquilibrium:
        nan = math.nan
        return ConvergenceRow(n, nan, abs(agg_n.phi_sigma - agg_mf.phi_sigma), abs(agg_n.psi_sigma - agg_mf.psi_sigma), nan, nan, True)
    return ConvergenceRow(
        n=n,
        strategy_gap=float(np.max(np.abs(eq.strategies - mf.strategies[atoms]))),
        phi_sigma_gap=abs(agg_n.phi_sigma - agg_mf.phi_sigma),
        psi_sigma_gap=abs(agg_n.psi_sigma - agg_mf.psi_sigma),
        lambda_gap=float(np.max(np.abs(eq.lambdas - mf.lambdas[atoms]))),
        idiosyncratic_term=float(np.max(np.abs(idiosyncratic_lambda_term(pop, eq)))),
    )


def convergence_sweep(dist: TypeDistribution, n_list: Sequence[int], seed: int, n_jobs: int = 1) -> ConvergenceReport:
    """Gaps between the n-player and mean-field equilibria for each ``n``.

    Rows are independent; ``n_jobs > 1`` computes them on a thread pool
    without changing the result.
    """
    ns = sorted(int(n) for n in n_list)
    if not ns or ns[0] < 2:
        raise DomainError("every n in the sweep must be >= 2")
    mf = mf_equilibrium(dist)
    atoms = _atom_draws(dist, ns[-1], seed)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            rows = tuple(pool.map(lambda n: _row(dist, mf, atoms[:n], n), ns))
    else:
        rows = tuple(_row(dist, mf, atoms[:n], n) for n in ns)
    return ConvergenceReport(seed, rows)
