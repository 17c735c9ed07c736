import math

import numpy as np
import pytest

from fwdnash import AgentType, PopulationSpec, TypeDistribution, aggregates_n, mf_aggregates, validate_type


HOMOGENEOUS = (0.0, 1.0, 0.5, 1.0, 0.0, 1.0)

# Two-atom law used throughout: A trades only idiosyncratic risk, B only common risk.
ATOM_A = (0.0, 1.0, 0.0, 1.0, 1.0, 0.0)
ATOM_B = (0.0, 1.0, 0.5, 1.0, 0.0, 1.0)

# n = 3 heterogeneous population for the Monte-Carlo checks
MC_POPULATION = [
    (0.0, 1.0, 0.3, 0.10, 0.15, 0.20),
    (0.5, 2.0, 0.6, 0.08, 0.10, 0.25),
    (-0.2, 0.5, 0.8, 0.12, 0.20, 0.15),
]


def random_types(rng: np.random.Generator, k: int) -> np.ndarray:
    """Random admissible type rows; half the draws lean towards strong competition."""
    rows = np.empty((k, 6))
    rows[:, 0] = rng.uniform(-1, 1, k)
    rows[:, 1] = rng.uniform(0.1, 2.0, k)
    competitive = rng.random(k) < 0.5
    rows[:, 2] = np.where(competitive, rng.uniform(0.7, 1.0, k), rng.uniform(0.0, 1.0, k))
    rows[:, 3] = rng.uniform(0.02, 0.5, k)
    rows[:, 4] = np.where(competitive, rng.uniform(0.0, 0.1, k), rng.uniform(0.0, 0.5, k))
    rows[:, 5] = rng.uniform(0.0, 0.5, k)
    # keep total volatility away from zero so strategies stay O(100)
    low = rows[:, 4] ** 2 + rows[:, 5] ** 2 < 0.04
    rows[low, 5] = 0.2 + rows[low, 5]
    return rows


def random_population(rng: np.random.Generator, psi_max: float, n_range=(2, 50)) -> PopulationSpec:
    while True:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        pop = PopulationSpec(random_types(rng, n))
        if aggregates_n(pop).psi_sigma <= psi_max:
            return pop


def random_distribution(rng: np.random.Generator, psi_max: float, max_atoms: int = 8) -> TypeDistribution:
    while True:
        k = int(rng.integers(1, max_atoms + 1))
        w = rng.dirichlet(np.ones(k))
        w[-1] = 1.0 - math.fsum(w[:-1])
        if np.any(w <= 0):
            continue
        dist = TypeDistribution(random_types(rng, k), w)
        if mf_aggregates(dist).psi_sigma <= psi_max:
            return dist


@pytest.fixture
def homogeneous_agent() -> AgentType:
    return validate_type(*HOMOGENEOUS)


@pytest.fixture
def two_atom() -> TypeDistribution:
    return TypeDistribution([validate_type(*ATOM_A), validate_type(*ATOM_B)], [0.5, 0.5])


@pytest.fixture
def mc_population() -> PopulationSpec:
    return PopulationSpec([validate_type(*row) for row in MC_POPULATION])


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
