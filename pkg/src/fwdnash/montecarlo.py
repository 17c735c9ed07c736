"""Monte-Carlo checks of the martingale characterisation.

With constant strategies and constant coefficients wealth is an affine
function of the Brownian motions, so paths are generated exactly from
Gaussian increments on the grid; there is no discretisation bias.

Random numbers come from Philox streams keyed by ``(seed, block)`` where
a block is :data:`BLOCK_PATHS` consecutive paths.  A block is always drawn
whole, so path ``p`` sees the same noise regardless of ``n_paths`` or of
how blocks are scheduled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatch, DomainError
from .market import CaraForwardUtility, PopulationSpec, TypeDistribution, others_averages
from .meanfield import EquilibriumMF
from .nplayer import lambda_from_others

BLOCK_PATHS = 4096
MAX_TEST_POINTS = 32
DEVIATION_FACTORS = (-1.0, -0.5, -0.25, 0.25, 0.5, 1.0)


@dataclass(frozen=True)
class SimGrid:
    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise DomainError("n_steps must be an integer >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> NDArray[np.float64]:
        return np.arange(self.n_steps + 1) * self.dt


def block_generator(seed: int, block: int, stream: int = 0) -> np.random.Generator:
    """Independent counter-based generator for one block of paths."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, block))
    return np.random.Generator(np.random.Philox(ss))


def brownian_paths(seed: int, n_paths: int, n_dims: int, grid: SimGrid, stream: int = 0) -> NDArray[np.float64]:
    """Brownian paths of shape ``(n_paths, n_dims, n_steps + 1)`` starting at 0."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    out = np.zeros((n_paths, n_dims, grid.n_steps + 1))
    scale = math.sqrt(grid.dt)
    for b in range(-(-n_paths // BLOCK_PATHS)):
        lo = b * BLOCK_PATHS
        hi = min(lo + BLOCK_PATHS, n_paths)
        z = block_generator(seed, b, stream).standard_normal((BLOCK_PATHS, n_dims, grid.n_steps))
        np.cumsum(z[: hi - lo] * scale, axis=2, out=out[lo:hi, :, 1:])
    return out


@dataclass(frozen=True)
class PathBundle:
    """Simulated paths; arrays are indexed ``[path, agent, time]``."""

    seed: int
    grid: SimGrid
    wealth: NDArray[np.float64]
    common_noise: NDArray[np.float64]  # [path, time]
    idiosyncratic: NDArray[np.float64]
    strategies: NDArray[np.float64]

    @property
    def n_paths(self) -> int:
        return self.wealth.shape[0]

    def average_wealth(self) -> NDArray[np.float64]:
        return self.wealth.mean(axis=1)

    def summary_rows(self):
        """Rows ``(t, mean_1, se_1, ..., mean_n, se_n)`` of wealth statistics."""
        mean = self.wealth.mean(axis=0)
        if self.n_paths > 1:
            se = self.wealth.std(axis=0, ddof=1) / math.sqrt(self.n_paths)
        else:
            se = np.zeros_like(mean)
        for k, t in enumerate(self.grid.times):
            row = [t]
            for i in range(self.wealth.shape[1]):
                row += [mean[i, k], se[i, k]]
            yield row

    def write_summary_csv(self, path) -> None:
        n = self.wealth.shape[1]
        header = ["t"] + [c for i in range(1, n + 1) for c in (f"mean_{i}", f"se_{i}")]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.summary_rows():
                w.writerow([format(v, ".17g") for v in row])


def simulate_wealth(
    pop: PopulationSpec,
    strategies: ArrayLike,
    grid: SimGrid,
    n_paths: int,
    seed: int,
) -> PathBundle:
    """Exact simulation of ``dX^i = pi^i (mu_i dt + nu_i dW^i + sigma_i dB)``."""
    pi = np.asarray(strategies, dtype=np.float64).ravel()
    if pi.size != pop.n:
        raise DimensionMismatch(f"expected {pop.n} strategies, got {pi.size}")
    noise = brownian_paths(seed, n_paths, pop.n + 1, grid)
    common = noise[:, 0, :]
    idio = noise[:, 1:, :]
    t = grid.times
    c = pi[:, None]
    wealth = (
        pop.x0[:, None]
        + c * pop.mu[:, None] * t
        + (c * pop.nu[:, None]) * idio
        + (c * pop.sigma[:, None]) * common[:, None, :]
    )
    wealth[:, :, 0] = pop.x0
    return PathBundle(seed, grid, wealth, common, idio, pi.copy())


def relative_metric_paths(bundle: PathBundle, pop: PopulationSpec) -> NDArray[np.float64]:
    """``X^i - theta_i * mean_{k != i} X^k`` for every agent, shape ``[path, agent, time]``."""
    n = pop.n
    total = bundle.wealth.sum(axis=1, keepdims=True)
    others = (total - bundle.wealth) / (n - 1)
    return bundle.wealth - pop.theta[None, :, None] * others


def agent_utility(i: int, pop: PopulationSpec, strategies: ArrayLike) -> CaraForwardUtility:
    """Agent ``i``'s exponential forward utility consistent with the others' strategies."""
    pi = np.asarray(strategies, dtype=np.float64).ravel()
    others = np.delete(pi, i)
    return CaraForwardUtility(float(pop.delta[i]), lambda_from_others(i, others, pop))


def utility_paths(relative: ArrayLike, u: CaraForwardUtility, times: ArrayLike, log: bool = False):
    """Evaluate ``U(Xhat_t, t)`` pathwise; ``relative`` has shape ``[path, time]``.

    With ``log=True`` the log-magnitude ``log|U|`` is returned instead.
    """
    rel = np.asarray(relative, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if rel.shape[-1] != t.size:
        raise DimensionMismatch("time axis of the relative paths does not match the grid")
    return u.log_abs(rel, t) if log else u(rel, t)


@dataclass(frozen=True)
class MartingaleReport:
    """Per-gridpoint comparison of ``E[U_t]`` with ``U_0``.

    Statistics are computed from the pathwise increments ``U_t - U_0``; for
    a deterministic starting point this is the same as comparing
    ``mean(U_t)`` with ``U_0`` using the standard error of ``U_t``.
    """

    kind: str
    times: NDArray[np.float64]
    mean: NDArray[np.float64]
    se: NDArray[np.float64]
    initial: float
    z: NDArray[np.float64]
    z_crit: float
    max_z: float
    verdict: str

    @property
    def passed(self) -> bool:
        return self.verdict == "PASS"

    @property
    def terminal_z(self) -> float:
        return float(self.z[-1])

    def rows(self):
        for k in range(self.times.size):
            yield (self.times[k], self.mean[k], self.se[k], self.initial, self.z[k])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mean_u", "se_u", "u0", "z"])
            for row in self.rows():
                w.writerow([format(float(v), ".17g") for v in row])


def _test_columns(n_cols: int, max_points: int) -> NDArray[np.int64]:
    cols = np.arange(1, n_cols)
    if cols.size > max_points:
        cols = np.unique(np.round(np.linspace(1, n_cols - 1, max_points)).astype(int))
    return cols


def _increment_stats(paths: ArrayLike, times, max_points: int):
    u = np.asarray(paths, dtype=np.float64)
    if u.ndim != 2:
        raise DimensionMismatch("utility paths must have shape [path, time]")
    n_paths = u.shape[0]
    cols = _test_columns(u.shape[1], max_points)
    inc = u[:, cols] - u[:, [0]]
    mean_inc = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.zeros(cols.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean_inc / se, np.where(mean_inc == 0, 0.0, np.sign(mean_inc) * np.inf))
    t = np.asarray(times, dtype=np.float64)[cols] if times is not None else cols.astype(np.float64)
    initial = float(u[:, 0].mean())
    return t, u[:, cols].mean(axis=0), se, initial, z


def martingale_test(paths: ArrayLike, z_crit: float = 3.0, times=None, max_points: int = MAX_TEST_POINTS) -> MartingaleReport:
    """PASS iff ``|mean(U_t) - U_0| <= z_crit * SE`` at every tested grid point."""
    t, mean, se, initial, z = _increment_stats(paths, times, max_points)
    max_z = float(np.max(np.abs(z)))
    return MartingaleReport("martingale", t, mean, se, initial, z, z_crit, max_z, "PASS" if max_z <= z_crit else "FAIL")


def supermartingale_test(paths: ArrayLike, z_crit: float = 3.0, times=None, max_points: int = MAX_TEST_POINTS) -> MartingaleReport:
    """PASS iff ``mean(U_t) <= U_0 + z_crit * SE`` at every tested grid point."""
    t, mean, se, initial, z = _increment_stats(paths, times, max_points)
    max_z = float(np.max(z))
    return MartingaleReport("supermartingale", t, mean, se, initial, z, z_crit, max_z, "PASS" if max_z <= z_crit else "FAIL")


def deviation_strategies(pi_star: float) -> list[float]:
    """Constant deviations ``pi* + f * (1 + |pi*|)`` for the prescribed factors."""
    return [pi_star + f * (1 + abs(pi_star)) for f in DEVIATION_FACTORS]


def agent_martingale_check(
    i: int,
    pop: PopulationSpec,
    strategies: ArrayLike,
    grid: SimGrid,
    n_paths: int,
    seed: int,
    z_crit: float = 3.0,
    supermartingale: bool = False,
) -> MartingaleReport:
    """Simulate the profile and test agent ``i``'s utility process.

    The utility's slope is fixed by the other agents' strategies, so the
    same utility is used whether or not agent ``i`` plays its best response.
    """
    bundle = simulate_wealth(pop, strategies, grid, n_paths, seed)
    rel = relative_metric_paths(bundle, pop)[:, i, :]
    u = agent_utility(i, pop, strategies)
    paths = utility_paths(rel, u, grid.times)
    test = supermartingale_test if supermartingale else martingale_test
    return test(paths, z_crit=z_crit, times=grid.times)


def drift_residual_n(i: int, pop: PopulationSpec, strategies: ArrayLike, u: CaraForwardUtility, x, t):
    """Drift of ``dU^i(Xhat^i_t, t)`` once ``U^i`` solves its consistency PDE.

    Equals ``U_xx / (2 s2) * (pi_i s2 - (theta_i sigma_i m_sigma - mu_i U_x/U_xx))^2``
    with ``s2 = nu_i^2 + sigma_i^2``; it is never positive and vanishes only
    at the best response.
    """
    pi = np.asarray(strategies, dtype=np.float64).ravel()
    avg = others_averages(i, pop, pi)
    d = u.derivatives(x, t)
    s2 = pop.nu[i] ** 2 + pop.sigma[i] ** 2
    target = pop.theta[i] * pop.sigma[i] * avg.pi_sigma - pop.mu[i] * d.u_x / d.u_xx
    return 0.5 * d.u_xx / s2 * (pi[i] * s2 - target) ** 2


def brute_force_drift_n(i: int, pop: PopulationSpec, strategies: ArrayLike, u: CaraForwardUtility, x, t, time_derivative: str = "pde"):
    """Ito drift of ``U^i(Xhat^i_t, t)`` assembled term by term.

    ``U_t + U_x * drift(Xhat) + U_xx/2 * d<Xhat>/dt``.  With
    ``time_derivative="pde"`` ``U_t`` is taken from the right-hand side of the
    consistency PDE; with ``"utility"`` it is ``lam * U`` from ``u`` itself.
    """
    from .market import spde_residual_n

    pi = np.asarray(strategies, dtype=np.float64).ravel()
    avg = others_averages(i, pop, pi)
    d = u.derivatives(x, t)
    theta, mu, nu, sigma = pop.theta[i], pop.mu[i], pop.nu[i], pop.sigma[i]
    if time_derivative == "pde":
        u_t = spde_residual_n(i, pop, pi, u, x, t) + d.u_t
    elif time_derivative == "utility":
        u_t = d.u_t
    else:
        raise ValueError("time_derivative must be 'pde' or 'utility'")
    drift = pi[i] * mu - theta * avg.pi_mu
    quad_var = (
        (pi[i] * nu) ** 2
        + theta**2 / (pop.n - 1) * avg.pi_nu_sq
        + (pi[i] * sigma - theta * avg.pi_sigma) ** 2
    )
    return u_t + d.u_x * drift + 0.5 * d.u_xx * quad_var


class CohortPath(NamedTuple):
    max_abs_deviation: float
    max_z: float
    passed: bool


@dataclass(frozen=True)
class CohortReport:
    """Cohort average against the conditional-mean prediction, per common path."""

    seed: int
    cohort_size: int
    band: float
    times: NDArray[np.float64]
    paths: tuple[CohortPath, ...]

    @property
    def n_passed(self) -> int:
        return sum(p.passed for p in self.paths)


def mf_cohort_simulate(
    dist: TypeDistribution,
    eq: EquilibriumMF,
    cohort_size: int,
    grid: SimGrid,
    n_common_paths: int,
    seed: int,
    band: float = 4.0,
) -> CohortReport:
    """Check ``E[X*_t | B] = xi_bar + E[mu pi*] t + E[sigma pi*] B_t`` by simulation.

    For every common-noise path, ``cohort_size`` agents with i.i.d. types and
    private noises play their equilibrium strategies.  The gap between the
    cohort mean and the prediction is scaled by ``SD_t / sqrt(M)`` where
    ``SD_t`` is the exact conditional standard deviation of a single
    agent's wealth given ``B``.
    """
    times = grid.times
    scale = math.sqrt(grid.dt)
    pi = np.asarray(eq.strategies)
    w = dist.weights
    drift_a = pi * dist.mu
    vol_a = pi * dist.sigma
    idio_var = float(np.dot(w, (pi * dist.nu) ** 2))
    rows = []
    for c in range(n_common_paths):
        rng = block_generator(seed, c, stream=1)
        b = np.concatenate([[0.0], np.cumsum(rng.standard_normal(grid.n_steps) * scale)])
        atoms = rng.choice(dist.n_atoms, size=cohort_size, p=w)
        dw = rng.standard_normal((cohort_size, grid.n_steps)) * scale
        wpaths = np.concatenate([np.zeros((cohort_size, 1)), np.cumsum(dw, axis=1)], axis=1)
        x = (
            dist.x0[atoms, None]
            + (drift_a[atoms, None] * times)
            + (pi * dist.nu)[atoms, None] * wpaths
            + vol_a[atoms, None] * b
        )
        cohort_mean = x.mean(axis=0)
        predicted = eq.xi_bar + eq.mu_pi_bar * times + eq.sigma_pi_bar * b
        # exact per-agent conditional law given B
        atom_means = dist.x0[:, None] + drift_a[:, None] * times + vol_a[:, None] * b
        var = np.dot(w, (atom_means - predicted) ** 2) + idio_var * times
        sd = np.sqrt(np.maximum(var, 0.0))
        dev = np.abs(cohort_mean - predicted)
        mask = sd > 0
        z = dev[mask] / (sd[mask] / math.sqrt(cohort_size))
        max_z = float(z.max()) if z.size else 0.0
        rows.append(CohortPath(float(dev.max()), max_z, max_z <= band and bool(np.all(dev[~mask] < 1e-12 * (1 + np.abs(predicted[~mask]))))))
    return CohortReport(seed, cohort_size, band, times, tuple(rows))
