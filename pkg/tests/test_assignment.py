import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment

from viewguided.assignment import (
    Assignment,
    assignment_cost,
    auction_assignment,
    exact_assignment,
    exhaustive_assignment,
    hungarian_assignment,
)


def cost_matrices(max_n=7):
    return st.integers(1, max_n).flatmap(
        lambda n: arrays(np.float64, (n, n), elements=st.floats(0, 100, allow_nan=False))
    )


def test_assignment_validates_bijection():
    with pytest.raises(ValueError):
        Assignment(np.array([0, 0]), 0.0)


def test_non_square_rejected():
    with pytest.raises(ValueError, match="size mismatch"):
        auction_assignment(np.zeros((3, 4)))


def test_single():
    a = auction_assignment(np.array([[2.5]]))
    assert a.mapping.tolist() == [0] and a.total_cost == 2.5


def test_oracle_limits():
    with pytest.raises(ValueError):
        exhaustive_assignment(np.zeros((10, 10)))
    with pytest.raises(ValueError):
        hungarian_assignment(np.zeros((257, 257)))


@given(cost_matrices())
def test_exhaustive_equals_hungarian(C):
    assert exhaustive_assignment(C).total_cost == pytest.approx(hungarian_assignment(C).total_cost, rel=1e-12, abs=1e-12)


@given(cost_matrices())
def test_auction_within_target(C):
    opt = exhaustive_assignment(C).total_cost
    got = auction_assignment(C, 0.01).total_cost
    assert opt - 1e-9 <= got <= 1.01 * opt + 1e-9


def test_hungarian_against_scipy(rng):
    for n in (10, 50, 200):
        C = rng.uniform(size=(n, n))
        r, c = linear_sum_assignment(C)
        assert hungarian_assignment(C).total_cost == pytest.approx(C[r, c].sum(), rel=1e-12)


def test_auction_large_against_scipy(rng):
    for n in (64, 300):
        C = rng.uniform(size=(n, n))
        r, c = linear_sum_assignment(C)
        opt = C[r, c].sum()
        got = auction_assignment(C, 0.01)
        assert got.total_cost == pytest.approx(assignment_cost(C, got.mapping))
        assert opt - 1e-9 <= got.total_cost <= 1.01 * opt


def test_zero_cost_terminates():
    a = auction_assignment(np.zeros((6, 6)))
    assert a.total_cost == 0.0


def test_deterministic(rng):
    C = rng.uniform(size=(40, 40))
    np.testing.assert_array_equal(auction_assignment(C).mapping, auction_assignment(C).mapping)


def test_exact_dispatch(rng):
    C = rng.uniform(size=(12, 12))
    assert exact_assignment(C).total_cost == pytest.approx(hungarian_assignment(C).total_cost)
