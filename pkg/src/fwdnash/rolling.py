"""Mean-field model re-specification on a sequence of horizons.

At each re-specification time ``T_j`` the generic agent picks a new type
(and population law); the forward utility keeps running from its value at
``T_j`` with the new slope ``lambda_j``.  On ``[T_j, T_{j+1})``

    U(x, t) = u0(x) * exp(c_j + (t - T_j) * lambda_j),
    c_j = sum_{k=1..j} (T_k - T_{k-1}) * lambda_{k-1},

with ``u0(x) = -exp(-x / delta_0)``.  Everything is kept in log-space.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .exceptions import DomainError, NoConstantEquilibrium
from .market import AgentType, TypeDistribution
from .meanfield import EquilibriumMF, mf_equilibrium, mf_lambda
from .montecarlo import MartingaleReport, SimGrid, brownian_paths, martingale_test

FORM_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    """Model in force from ``start`` on: the generic agent and its population."""

    start: float
    agent: AgentType
    dist: TypeDistribution | None = None

    @property
    def population(self) -> TypeDistribution:
        return self.dist if self.dist is not None else TypeDistribution.single(self.agent)


class HorizonSchedule:
    def __init__(self, segments: Sequence[Segment]):
        segments = list(segments)
        if not segments:
            raise DomainError("a schedule needs at least one segment")
        if segments[0].start != 0:
            raise DomainError("the first segment must start at T_0 = 0")
        starts = [s.start for s in segments]
        if any(not math.isfinite(b) or b <= a for a, b in zip(starts, starts[1:])):
            raise DomainError("segment start times must be strictly increasing")
        self.segments = tuple(segments)

    @property
    def starts(self) -> tuple[float, ...]:
        return tuple(s.start for s in self.segments)

    def __len__(self) -> int:
        return len(self.segments)


@dataclass(frozen=True)
class RolledUtility:
    delta: float
    starts: tuple[float, ...]
    lambdas: tuple[float, ...]
    offsets: tuple[float, ...]

    @classmethod
    def from_lambdas(cls, delta: float, starts: Sequence[float], lambdas: Sequence[float]) -> "RolledUtility":
        if len(starts) != len(lambdas) or len(starts) == 0:
            raise DomainError("need one lambda per segment")
        if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise DomainError("segment start times must begin at 0 and increase strictly")
        if not delta > 0:
            raise DomainError("delta must be positive")
        offsets = [0.0]
        for j in range(1, len(starts)):
            offsets.append(offsets[-1] + (starts[j] - starts[j - 1]) * lambdas[j - 1])
        return cls(float(delta), tuple(map(float, starts)), tuple(map(float, lambdas)), tuple(offsets))

    def segment_index(self, t: float) -> int:
        if t < 0:
            raise DomainError("t must be nonnegative")
        return bisect.bisect_right(self.starts, t) - 1

    def log_offset(self, t: float, segment: int | None = None) -> float:
        """``c_j + (t - T_j) lambda_j``; ``segment`` forces a particular formula."""
        j = self.segment_index(t) if segment is None else segment
        return self.offsets[j] + (t - self.starts[j]) * self.lambdas[j]

    def telescoped_log_offset(self, t: float) -> float:
        """``sum_k T_k (lambda_{k-1} - lambda_k) + t lambda_j``."""
        j = self.segment_index(t)
        acc = math.fsum(self.starts[k] * (self.lambdas[k - 1] - self.lambdas[k]) for k in range(1, j + 1))
        return acc + t * self.lambdas[j]

    def log_abs(self, x, t: float, anchor: float = 0.0):
        return -(np.asarray(x, dtype=np.float64) - anchor) / self.delta + self.log_offset(t)

    def table(self):
        """Rows ``(T_j, j, lambda_j, c_j)``."""
        return [(T, j, lam, c) for j, (T, lam, c) in enumerate(zip(self.starts, self.lambdas, self.offsets))]


def roll_schedule(schedule: HorizonSchedule) -> RolledUtility:
    """Per-segment mean-field slopes concatenated into one forward utility.

    ``delta`` of the initial datum is the first segment's; later changes of
    ``delta`` enter only through the slopes.
    """
    lambdas = []
    for j, seg in enumerate(schedule.segments):
        try:
            eq = mf_equilibrium(seg.population)
        except NoConstantEquilibrium as exc:
            raise NoConstantEquilibrium(f"segment {j} (T={seg.start}): {exc}") from exc
        lambdas.append(mf_lambda(seg.agent, eq))
    rolled = RolledUtility.from_lambdas(schedule.segments[0].agent.delta, schedule.starts, lambdas)
    for j in range(len(rolled.starts)):
        for t in (rolled.starts[j], rolled.starts[j] + 0.5 * (rolled.starts[j + 1] - rolled.starts[j]) if j + 1 < len(rolled.starts) else rolled.starts[j] + 1.0):
            a, b = rolled.log_offset(t), rolled.telescoped_log_offset(t)
            if abs(a - b) > FORM_TOL * (1 + abs(a)):
                raise ArithmeticError(f"product and telescoped forms disagree at t={t}: {a!r} vs {b!r}")
    return rolled


def eval_rolled(u: RolledUtility, x, t: float, anchor: float = 0.0):
    """Rolled forward utility at ``(x, t)``; segments are ``[T_j, T_{j+1})``.

    ``anchor`` re-centres the wealth argument (``x - anchor``); the default
    evaluates the displayed formula at ``x`` itself.
    """
    return -np.exp(u.log_abs(x, t, anchor))


def simulate_rolling(
    schedule: HorizonSchedule,
    rolled: RolledUtility,
    n_steps: int,
    n_paths: int,
    seed: int,
    final_horizon: float = 1.0,
    z_crit: float = 3.0,
) -> list[MartingaleReport]:
    """Martingale test of ``U(X - theta Xbar, t)`` on every segment.

    Wealth and the population mean are threaded across segments: each
    segment starts from the previous segment's terminal values.  The last
    segment is simulated over ``final_horizon``.
    """
    segs = schedule.segments
    first = segs[0]
    eq0 = mf_equilibrium(first.population)
    x = np.full(n_paths, first.agent.x0)
    xbar = np.full(n_paths, eq0.xi_bar)
    reports = []
    for j, seg in enumerate(segs):
        length = segs[j + 1].start - seg.start if j + 1 < len(segs) else final_horizon
        grid = SimGrid(length, n_steps)
        eq: EquilibriumMF = mf_equilibrium(seg.population)
        a = seg.agent
        pi = eq.strategy(a)
        noise = brownian_paths(seed, n_paths, 2, grid, stream=100 + j)
        w, b = noise[:, 0, :], noise[:, 1, :]
        s = grid.times
        xs = x[:, None] + pi * (a.mu * s + a.nu * w + a.sigma * b)
        xbars = xbar[:, None] + eq.mu_pi_bar * s + eq.sigma_pi_bar * b
        t = seg.start + s
        z = xs - a.theta * xbars
        u = -np.exp(-z / rolled.delta + np.array([rolled.log_offset(tk, segment=j) for tk in t]))
        reports.append(martingale_test(u, z_crit=z_crit, times=t))
        x, xbar = xs[:, -1], xbars[:, -1]
    return reports
