"""Agent types, populations, type distributions and CARA forward utilities.

Every agent trades its own stock ``dS/S = mu dt + nu dW + sigma dB`` where
``W`` is private to the agent and ``B`` is shared by everybody.  An agent is
fully described by the six-vector ``(x0, delta, theta, mu, nu, sigma)``.

Populations and distributions keep their parameters as numpy columns so the
solvers can work vectorised; :class:`AgentType` objects are materialised on
demand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .exceptions import DimensionMismatch, DomainError

FIELDS = ("x0", "delta", "theta", "mu", "nu", "sigma")

_WEIGHT_TOL = 1e-12


def _check_columns(x0, delta, theta, mu, nu, sigma, where=""):
    cols = {"x0": x0, "delta": delta, "theta": theta, "mu": mu, "nu": nu, "sigma": sigma}
    for name, col in cols.items():
        if not np.all(np.isfinite(col)):
            raise DomainError(f"{where}{name} must be finite")
    if np.any(delta <= 0):
        raise DomainError(f"{where}delta must be positive")
    if np.any((theta < 0) | (theta > 1)):
        raise DomainError(f"{where}theta must lie in [0,1]")
    if np.any(mu <= 0):
        raise DomainError(f"{where}mu must be positive")
    if np.any(nu < 0):
        raise DomainError(f"{where}nu must be nonnegative")
    if np.any(sigma < 0):
        raise DomainError(f"{where}sigma must be nonnegative")
    if np.any(nu * nu + sigma * sigma <= 0):
        raise DomainError(f"{where}degenerate volatility: nu²+sigma²=0")


@dataclass(frozen=True)
class AgentType:
    """Type vector of a single agent.

    Attributes
    ----------
    x0 : initial wealth
    delta : personal risk tolerance, > 0
    theta : competition weight in [0, 1]
    mu : drift of the agent's stock, > 0
    nu : idiosyncratic volatility, >= 0
    sigma : common-noise volatility, >= 0
    """

    x0: float
    delta: float
    theta: float
    mu: float
    nu: float
    sigma: float

    def __post_init__(self):
        _check_columns(*(np.float64(getattr(self, f)) for f in FIELDS))

    @property
    def total_variance(self) -> float:
        return self.nu**2 + self.sigma**2

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in FIELDS)

    def as_dict(self) -> dict[str, float]:
        return {f: getattr(self, f) for f in FIELDS}


def validate_type(*raw: float) -> AgentType:
    """Build an :class:`AgentType` from six numbers ``(x0, delta, theta, mu, nu, sigma)``.

    Also accepts a single sequence of six numbers.  Raises :class:`DomainError`
    naming the first violated constraint.
    """
    if len(raw) == 1 and not isinstance(raw[0], (int, float)):
        raw = tuple(raw[0])
    if len(raw) != 6:
        raise DimensionMismatch(f"an agent type has 6 parameters, got {len(raw)}")
    return AgentType(*(float(v) for v in raw))


class _TypeColumns:
    """Shared column accessors for populations and distributions."""

    _params: NDArray[np.float64]  # shape (k, 6)

    @property
    def x0(self) -> NDArray[np.float64]:
        return self._params[:, 0]

    @property
    def delta(self) -> NDArray[np.float64]:
        return self._params[:, 1]

    @property
    def theta(self) -> NDArray[np.float64]:
        return self._params[:, 2]

    @property
    def mu(self) -> NDArray[np.float64]:
        return self._params[:, 3]

    @property
    def nu(self) -> NDArray[np.float64]:
        return self._params[:, 4]

    @property
    def sigma(self) -> NDArray[np.float64]:
        return self._params[:, 5]

    @property
    def total_variance(self) -> NDArray[np.float64]:
        return self.nu**2 + self.sigma**2

    def params(self) -> NDArray[np.float64]:
        """Read-only ``(k, 6)`` parameter matrix in :data:`FIELDS` order."""
        return self._params


def _as_param_matrix(params: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(params, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise DimensionMismatch(f"expected an array of shape (k, 6), got {arr.shape}")
    _check_columns(*arr.T)
    arr.setflags(write=False)
    return arr


class PopulationSpec(_TypeColumns):
    """Ordered population of ``n >= 2`` agents for the finite game."""

    def __init__(self, agents: Iterable[AgentType] | ArrayLike):
        agents = list(agents) if not isinstance(agents, np.ndarray) else agents
        if len(agents) and isinstance(agents[0], AgentType):
            agents = [a.as_tuple() for a in agents]
        self._params = _as_param_matrix(agents)
        if self.n < 2:
            raise DomainError(f"a population needs at least 2 agents, got {self.n}")

    @classmethod
    def homogeneous(cls, agent: AgentType, n: int) -> "PopulationSpec":
        return cls(np.tile(np.array(agent.as_tuple()), (n, 1)))

    @property
    def n(self) -> int:
        return self._params.shape[0]

    @property
    def agents(self) -> tuple[AgentType, ...]:
        return tuple(AgentType(*row) for row in self._params.tolist())

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> AgentType:
        return AgentType(*self._params[i].tolist())

    def __repr__(self) -> str:
        return f"PopulationSpec(n={self.n})"


class TypeDistribution(_TypeColumns):
    """Finite-support law over agent types.

    Parameters
    ----------
    atoms : sequence of AgentType or ``(k, 6)`` array
    weights : probabilities, strictly positive, summing to one within 1e-12
    """

    def __init__(self, atoms: Sequence[AgentType] | ArrayLike, weights: ArrayLike | None = None):
        atoms = list(atoms) if not isinstance(atoms, np.ndarray) else atoms
        if len(atoms) and isinstance(atoms[0], AgentType):
            atoms = [a.as_tuple() for a in atoms]
        self._params = _as_param_matrix(atoms)
        k = self._params.shape[0]
        if k == 0:
            raise DomainError("a type distribution needs at least one atom")
        w = np.full(k, 1.0 / k) if weights is None else np.array(weights, dtype=np.float64)
        if w.shape != (k,):
            raise DimensionMismatch(f"{k} atoms but {w.size} weights")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DomainError("all weights must be positive")
        if abs(math.fsum(w) - 1.0) > _WEIGHT_TOL:
            raise DomainError(f"weights must sum to 1, got {math.fsum(w)!r}")
        w.setflags(write=False)
        self.weights = w

    @classmethod
    def single(cls, agent: AgentType) -> "TypeDistribution":
        return cls([agent], [1.0])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[AgentType, float]]) -> "TypeDistribution":
        pairs = list(pairs)
        return cls([a for a, _ in pairs], [w for _, w in pairs])

    @property
    def n_atoms(self) -> int:
        return self._params.shape[0]

    @property
    def atoms(self) -> tuple[AgentType, ...]:
        return tuple(AgentType(*row) for row in self._params.tolist())

    def expect(self, values: ArrayLike) -> float:
        """Exact expectation of a per-atom quantity."""
        return float(np.dot(self.weights, np.asarray(values, dtype=np.float64)))

    def __len__(self) -> int:
        return self.n_atoms

    def __repr__(self) -> str:
        return f"TypeDistribution(n_atoms={self.n_atoms})"


class UtilityDerivatives(NamedTuple):
    value: NDArray[np.float64] | float
    log_abs: NDArray[np.float64] | float
    u_x: NDArray[np.float64] | float
    u_xx: NDArray[np.float64] | float
    u_t: NDArray[np.float64] | float


@dataclass(frozen=True)
class CaraForwardUtility:
    """Time-monotone exponential forward utility ``U(x,t) = -exp(-x/delta + lam*t)``.

    The utility is stored through its log-magnitude so that large ``lam*t``
    or ``|x|`` can be handled by :meth:`log_abs` without overflow.
    """

    delta: float
    lam: float = 0.0

    def __post_init__(self):
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise DomainError("delta must be positive")
        if not math.isfinite(self.lam):
            raise DomainError("lambda must be finite")

    def log_abs(self, x, t):
        """``log|U(x,t)| = -x/delta + lam*t``; the sign of ``U`` is always -1."""
        return -np.asarray(x, dtype=np.float64) / self.delta + self.lam * np.asarray(t, dtype=np.float64)

    def __call__(self, x, t):
        return -np.exp(self.log_abs(x, t))

    def derivatives(self, x, t) -> UtilityDerivatives:
        log_abs = self.log_abs(x, t)
        mag = np.exp(log_abs)
        return UtilityDerivatives(
            value=-mag,
            log_abs=log_abs,
            u_x=mag / self.delta,
            u_xx=-mag / self.delta**2,
            u_t=-self.lam * mag,
        )

    def with_lambda(self, lam: float) -> "CaraForwardUtility":
        return CaraForwardUtility(self.delta, lam)


def eval_utility(u: CaraForwardUtility, x, t, derivatives: bool = False):
    """Evaluate ``u`` at wealth ``x`` and time ``t >= 0``.

    With ``derivatives=True`` a :class:`UtilityDerivatives` tuple is returned
    holding the value, its log-magnitude and ``U_x``, ``U_xx``, ``U_t``.
    """
    if np.any(np.asarray(t) < 0):
        raise DomainError("t must be nonnegative")
    if derivatives:
        return u.derivatives(x, t)
    return u(x, t)


def risk_tolerance_check(u: CaraForwardUtility, x: float, t: float, h: float | None = None) -> float:
    """Relative error of the finite-difference local risk tolerance.

    Central differences of :func:`eval_utility` in ``x`` give ``U_x`` and
    ``U_xx``; the returned value is ``|-U_x/U_xx - delta| / delta``.
    The default step is ``1e-4 * max(1, |x|)``.
    """
    if h is None:
        h = 1e-4 * max(1.0, abs(x))
    if not h > 0:
        raise DomainError("finite-difference step must be positive")
    up = float(eval_utility(u, x + h, t))
    mid = float(eval_utility(u, x, t))
    down = float(eval_utility(u, x - h, t))
    u_x = (up - down) / (2 * h)
    u_xx = (up - 2 * mid + down) / h**2
    r = -u_x / u_xx
    return abs(r - u.delta) / u.delta


class OthersAverages(NamedTuple):
    """Averages over all agents other than ``i``.

    ``pi_sigma`` and ``pi_mu`` are the (n-1)-averages of ``pi_k sigma_k`` and
    ``pi_k mu_k``; ``pi_nu_sq`` is the (n-1)-average of ``(pi_k nu_k)^2``.
    """

    pi_sigma: float
    pi_mu: float
    pi_nu_sq: float


def _others_mask(n: int, i: int) -> NDArray[np.bool_]:
    if not 0 <= i < n:
        raise IndexError(f"agent index {i} out of range for n={n}")
    mask = np.ones(n, dtype=bool)
    mask[i] = False
    return mask


def full_strategy(i: int, others: ArrayLike, n: int) -> NDArray[np.float64]:
    """Insert a placeholder 0 for agent ``i`` into the strategies of the others."""
    others = np.asarray(others, dtype=np.float64).ravel()
    if others.size != n - 1:
        raise DimensionMismatch(f"expected {n - 1} strategies for the other agents, got {others.size}")
    out = np.zeros(n)
    out[_others_mask(n, i)] = others
    return out


def others_averages(i: int, pop: PopulationSpec, strategies: ArrayLike) -> OthersAverages:
    """(n-1)-averages seen by agent ``i`` from a full strategy vector."""
    pi = np.asarray(strategies, dtype=np.float64).ravel()
    if pi.size != pop.n:
        raise DimensionMismatch(f"expected {pop.n} strategies, got {pi.size}")
    mask = _others_mask(pop.n, i)
    m = pop.n - 1
    p = pi[mask]
    return OthersAverages(
        pi_sigma=float(np.dot(p, pop.sigma[mask]) / m),
        pi_mu=float(np.dot(p, pop.mu[mask]) / m),
        pi_nu_sq=float(np.dot((p * pop.nu[mask]), (p * pop.nu[mask])) / m),
    )


def spde_residual_n(i: int, pop: PopulationSpec, strategies: ArrayLike, u: CaraForwardUtility, x, t):
    """Residual ``RHS(U) - U_t`` of agent ``i``'s best-response consistency PDE.

    The PDE coefficients depend on the other agents' (constant) strategies
    only; the entry ``strategies[i]`` is ignored.  For the exponential
    utility the residual vanishes identically when ``u.lam`` is the value
    returned by :func:`fwdnash.nplayer.lambda_from_others`.
    """
    avg = others_averages(i, pop, strategies)
    d = u.derivatives(x, t)
    theta, mu, nu, sigma = pop.theta[i], pop.mu[i], pop.nu[i], pop.sigma[i]
    s2 = nu * nu + sigma * sigma
    drift_coef = theta * avg.pi_mu - mu * theta * sigma * avg.pi_sigma / s2
    diffusion = (theta * avg.pi_sigma) ** 2 * (sigma * sigma / s2 - 1) - theta**2 / (pop.n - 1) * avg.pi_nu_sq
    rhs = drift_coef * d.u_x + mu * mu / (2 * s2) * d.u_x**2 / d.u_xx + 0.5 * d.u_xx * diffusion
    return rhs - d.u_t
