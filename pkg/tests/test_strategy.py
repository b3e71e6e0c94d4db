from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serialanon.errors import HorizonExceededError, InfeasibleRatioError
from serialanon.model import PrivacyParams
from serialanon.probability import breach_probability, min_ratio
from serialanon.strategy import (
    BISECTION_TOL,
    RatioRequirement,
    constant_ratio,
    geometric_ratio,
    plan_ratio,
    ratio_schedule,
)


def _closed_form(ell, k_prime):
    return 1 / (1 - (1 - 1 / ell) ** (1 / k_prime))


def test_constant_ratio_single_release():
    assert constant_ratio(2, 1) == 2
    assert constant_ratio(7, 1) == 7


@pytest.mark.parametrize("ell,k,expected", [(2, 2, 3.414), (2, 5, 7.725), (2, 10, 14.93), (2, 20, 29.36)])
def test_constant_ratio_bisection_values(ell, k, expected):
    assert float(constant_ratio(ell, k)) == pytest.approx(expected, abs=5e-3)


@pytest.mark.parametrize("ell", range(2, 11))
@pytest.mark.parametrize("k", [2, 3, 5, 10, 20])
def test_constant_ratio_safe_and_tight(ell, k):
    r = constant_ratio(ell, k)
    # safe side: the rational ratio never breaches 1/ell over k' releases
    assert 1 - (1 - 1 / r) ** k <= Fraction(1, ell)
    assert abs(float(r) - _closed_form(ell, k)) < 1e-6
    below = r - 2 * BISECTION_TOL
    assert 1 - (1 - 1 / below) ** k > Fraction(1, ell)


@pytest.mark.parametrize("ell", range(2, 11))
@pytest.mark.parametrize("k", [1, 2, 5, 20])
def test_constant_ratio_sizes_keep_guarantee(ell, k):
    size = RatioRequirement(constant_ratio(ell, k)).min_group_size_for(1)
    assert breach_probability([(size, 1)] * k) <= Fraction(1, ell)


def test_geometric_examples():
    assert geometric_ratio([], 2, 3) == 6
    assert geometric_ratio([(6, 1)], 2, 3) == Fraction(15, 2)
    assert min_ratio([(6, 1)], 2) == Fraction(5, 2)
    assert geometric_ratio([(6, 1), (8, 1)], 2, 3) == 3 * Fraction(35, 11)


def test_geometric_third_ratio_by_search():
    # smallest integer n keeping p <= 1/2 after [(6,1),(8,1)] agrees with ceil(35/11)
    n = 2
    while breach_probability([(6, 1), (8, 1), (n, 1)]) > Fraction(1, 2):
        n += 1
    assert n == math.ceil(Fraction(35, 11))


def test_geometric_rejects_alpha_one():
    with pytest.raises(ValueError):
        geometric_ratio([], 2, 1)


def test_geometric_infeasible_history():
    with pytest.raises(InfeasibleRatioError):
        geometric_ratio([(2, 1)], 2, 2)


def test_plan_ratio_constant():
    req = plan_ratio([(30, 1)] * 5, PrivacyParams(2, "constant_ratio", k_prime=20))
    assert float(req.target_ratio) == pytest.approx(29.36, abs=5e-3)


def test_plan_ratio_geometric_empty():
    req = plan_ratio([], PrivacyParams(2, "geometric", alpha=5))
    assert req.target_ratio == 10 and req.min_group_size_for(1) == 10


def test_plan_ratio_horizon():
    with pytest.raises(HorizonExceededError):
        plan_ratio([(4, 1), (4, 1)], PrivacyParams(2, "constant_ratio", k_prime=2))


def test_ratio_schedule_geometric():
    rows = ratio_schedule(PrivacyParams(2, "geometric", alpha=3), 3)
    assert [r.ratio for r in rows] == [6, Fraction(15, 2), 3 * Fraction(35, 11)]
    assert [r.size for r in rows] == [6, 8, 10]


def test_ratio_schedule_constant():
    rows = ratio_schedule(PrivacyParams(2, "constant_ratio", k_prime=5), 5)
    assert len({r.ratio for r in rows}) == 1
    assert float(rows[0].ratio) == pytest.approx(7.725, abs=5e-4)


def test_ratio_schedule_single():
    assert [r.ratio for r in ratio_schedule(PrivacyParams(2, "geometric", alpha=10), 1)] == [20]


def test_requirement_validation():
    with pytest.raises(ValueError):
        RatioRequirement(Fraction(1))
    assert RatioRequirement(Fraction(15, 2)).min_group_size_for(2) == 15


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.fractions(min_value=Fraction(11, 10), max_value=6), st.integers(1, 12))
def test_geometric_keeps_headroom_and_grows(ell, alpha, k):
    rows = ratio_schedule(PrivacyParams(ell, "geometric", alpha=alpha), k)
    history = [(r.size, 1) for r in rows]
    for j in range(1, k + 1):
        assert breach_probability(history[:j]) < Fraction(1, ell)
    ratios = [r.ratio for r in rows]
    assert all(a <= b for a, b in zip(ratios, ratios[1:]))
