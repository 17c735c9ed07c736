import math

import numpy as np
import pytest

from fwdnash import DomainError, NoConstantEquilibrium, validate_type
from fwdnash.rolling import HorizonSchedule, RolledUtility, Segment, eval_rolled, roll_schedule, simulate_rolling

A0 = validate_type(0, 1, 0.5, 1, 0, 1)  # lambda = 0.5
A1 = validate_type(0, 1, 0, math.sqrt(0.6), 0, 1)  # Sharpe slope 0.3


@pytest.fixture
def schedule():
    return HorizonSchedule([Segment(0.0, A0), Segment(2.0, A1)])


def test_schedule_validation():
    with pytest.raises(DomainError):
        HorizonSchedule([])
    with pytest.raises(DomainError):
        HorizonSchedule([Segment(1.0, A0)])
    with pytest.raises(DomainError):
        HorizonSchedule([Segment(0.0, A0), Segment(2.0, A1), Segment(2.0, A0)])


def test_roll_two_segments(schedule):
    rolled = roll_schedule(schedule)
    np.testing.assert_allclose(rolled.lambdas, [0.5, 0.3], rtol=1e-14)
    np.testing.assert_allclose(rolled.offsets, [0.0, 1.0], rtol=1e-14)
    assert rolled.table()[1][:2] == (2.0, 1)


def test_single_segment_is_plain_forward_utility():
    rolled = roll_schedule(HorizonSchedule([Segment(0.0, A0)]))
    for t in (0.0, 1.0, 7.5):
        assert eval_rolled(rolled, 0.4, t) == pytest.approx(-math.exp(-0.4 + 0.5 * t), rel=1e-15)


def test_junction_continuity(schedule):
    rolled = roll_schedule(schedule)
    x = np.linspace(-2, 2, 11)
    left = rolled.log_abs(x, 2.0) - rolled.log_offset(2.0) + rolled.log_offset(2.0, segment=0)
    right = rolled.log_abs(x, 2.0)
    np.testing.assert_allclose(left, right, atol=1e-12)
    assert rolled.segment_index(2.0) == 1
    assert rolled.segment_index(2.0 - 1e-12) == 0


def test_telescoped_form_matches():
    rng = np.random.default_rng(0)
    for _ in range(50):
        k = int(rng.integers(1, 7))
        starts = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 3, k - 1))])
        lams = rng.uniform(-1, 1, k)
        rolled = RolledUtility.from_lambdas(1.0, starts, lams)
        for t in rng.uniform(0, starts[-1] + 2, 20):
            a, b = rolled.log_offset(t), rolled.telescoped_log_offset(t)
            assert abs(a - b) <= 1e-12 * (1 + abs(a))
        for j in range(1, k):
            # left and right limits agree at every junction
            assert rolled.log_offset(starts[j], segment=j - 1) == pytest.approx(rolled.log_offset(starts[j]), abs=1e-12)


def test_anchor_recentres():
    rolled = RolledUtility.from_lambdas(2.0, [0.0], [0.1])
    assert eval_rolled(rolled, 3.0, 1.0, anchor=3.0) == pytest.approx(-math.exp(0.1), rel=1e-15)


def test_from_lambdas_checks():
    with pytest.raises(DomainError):
        RolledUtility.from_lambdas(1.0, [0.0, 1.0], [0.1])
    with pytest.raises(DomainError):
        RolledUtility.from_lambdas(1.0, [0.5], [0.1])
    with pytest.raises(DomainError):
        RolledUtility.from_lambdas(0.0, [0.0], [0.1])
    with pytest.raises(DomainError):
        RolledUtility.from_lambdas(1.0, [0.0], [0.1]).segment_index(-1.0)


def test_degenerate_segment_named():
    bad = validate_type(0, 1, 1, 1, 0, 1)
    with pytest.raises(NoConstantEquilibrium, match="segment 1"):
        roll_schedule(HorizonSchedule([Segment(0.0, A0), Segment(1.0, bad)]))


def test_simulate_rolling_small(schedule):
    rolled = roll_schedule(schedule)
    reports = simulate_rolling(schedule, rolled, n_steps=8, n_paths=20_000, seed=0)
    assert len(reports) == 2
    assert reports[1].times[0] > 2.0
    assert all(r.passed for r in reports)
