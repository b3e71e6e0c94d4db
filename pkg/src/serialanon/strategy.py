"""Group-size ratio planning for the next linked release."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

from .errors import HorizonExceededError
from .model import CONSTANT_RATIO, PrivacyParams
from .probability import _checked_pairs, min_ratio

BISECTION_TOL = Fraction(1, 10**9)


@dataclass(frozen=True)
class RatioRequirement:
    target_ratio: Fraction

    def __post_init__(self) -> None:
        if self.target_ratio <= 1:
            raise ValueError("target ratio must exceed 1")

    def min_group_size_for(self, count: int) -> int:
        """Smallest integer group size with size/count >= target_ratio."""
        return math.ceil(self.target_ratio * count)


def _horizon_breach(ratio: Fraction, ell: int, k_prime: int) -> Fraction:
    return 1 - (1 - 1 / ratio) ** k_prime


@lru_cache(maxsize=None)
def constant_ratio(ell: int, k_prime: int) -> Fraction:
    """Constant ratio for a k'-release horizon, rounded up to the safe side.

    The true value ``1/(1 - (1 - 1/ell)**(1/k'))`` is irrational in general,
    so it is bracketed by exact rational bisection until the bracket is
    narrower than 1e-9 and the upper end is returned. At that end
    ``1 - (1 - 1/r)**k' <= 1/ell`` holds exactly.
    """
    if ell < 2 or k_prime < 1:
        raise ValueError("need ell >= 2 and k_prime >= 1")
    if k_prime == 1:
        return Fraction(ell)
    bound = Fraction(1, ell)
    lo, hi = Fraction(1), Fraction(ell * k_prime)  # union bound: k'/(ell*k') = 1/ell
    while hi - lo > BISECTION_TOL:
        mid = (lo + hi) / 2
        # keep denominators bounded: snap to a 2**-40 grid on the safe side
        mid = Fraction(math.ceil(mid * 2**40), 2**40)
        if mid >= hi:
            break
        if _horizon_breach(mid, ell, k_prime) <= bound:
            hi = mid
        else:
            lo = mid
    return hi


def geometric_ratio(history: Iterable, ell: int, alpha: Fraction) -> Fraction:
    alpha = Fraction(alpha)
    if alpha <= 1:
        raise ValueError("alpha must be > 1")
    return alpha * min_ratio(history, ell)


def plan_ratio(history: Iterable, params: PrivacyParams) -> RatioRequirement:
    """Ratio the next linked release must meet for one (individual, value) pair.

    Raises ``InfeasibleRatioError`` (geometric) or ``HorizonExceededError``
    (constant-ratio, once k' linked releases are on record).
    """
    pairs = _checked_pairs(history)
    if params.strategy == CONSTANT_RATIO:
        if len(pairs) >= params.k_prime:
            raise HorizonExceededError(
                f"{len(pairs)} linked releases already recorded; horizon k'={params.k_prime}"
            )
        return RatioRequirement(constant_ratio(params.ell, params.k_prime))
    return RatioRequirement(geometric_ratio(pairs, params.ell, params.alpha))


@dataclass(frozen=True)
class ScheduleRow:
    k: int
    ratio: Fraction
    size: int


def ratio_schedule(params: PrivacyParams, releases: int) -> list[ScheduleRow]:
    """Ratios of ``releases`` consecutive linked releases with one occurrence each.

    Each release is recorded at its ceiled integer size before the next ratio
    is planned, which is how precomputed trend tables are built.
    """
    rows: list[ScheduleRow] = []
    history: list[tuple[int, int]] = []
    for k in range(1, releases + 1):
        req = plan_ratio(history, params)
        size = req.min_group_size_for(1)
        rows.append(ScheduleRow(k, req.target_ratio, size))
        history.append((size, 1))
    return rows
