"""Breach probabilities in exact rational arithmetic.

Three routes to the same number:

* ``breach_probability`` is the closed form ``1 - prod(1 - n_s/n)`` over the
  linked releases of one (individual, value) pair.
* ``breach_probability_oracle`` enumerates every possible world (one
  permutation of each group's multiset per release) and counts the worlds
  where the target receives the value at least once.
* ``localized_probability`` is the single-release ratio ``n_s/n``.

``min_ratio`` gives the smallest ``n/n_s`` for the next linked release that
keeps the pair within ``1/ell``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

from .errors import BudgetExceededError, InfeasibleRatioError, MalformedEntryError
from .model import GroupConfig

DEFAULT_BUDGET = 10**7


def _pair(entry) -> tuple[int, int]:
    if hasattr(entry, "n_s"):
        return entry.n, entry.n_s
    n, n_s = entry
    return n, n_s


def _checked_pairs(history: Iterable) -> list[tuple[int, int]]:
    out = []
    for entry in history:
        n, n_s = _pair(entry)
        if not (isinstance(n, int) and isinstance(n_s, int)) or not 1 <= n_s <= n:
            raise MalformedEntryError(f"entry (n={n}, n_s={n_s}) violates 1 <= n_s <= n")
        out.append((n, n_s))
    return out


def world_count_single(config: GroupConfig) -> int:
    """Number of distinct assignments of the group's multiset to its members."""
    out = math.factorial(config.n)
    for c in config.counts.values():
        out //= math.factorial(c)
    return out


def world_count_series(configs: Iterable[GroupConfig]) -> int:
    return math.prod((world_count_single(c) for c in configs), start=1)


def _products(pairs: Sequence[tuple[int, int]]) -> tuple[int, int]:
    """Return (prod n, prod (n - n_s))."""
    total = 1
    unlinked = 1
    for n, n_s in pairs:
        total *= n
        unlinked *= n - n_s
    return total, unlinked


def breach_probability(history: Iterable) -> Fraction:
    """Probability the individual is linked to the value in at least one release.

    ``history`` holds (n, n_s) pairs or ``HistoryEntry`` objects for linked
    releases only; callers drop releases whose group lacks the value.
    """
    total, unlinked = _products(_checked_pairs(history))
    return Fraction(total - unlinked, total)


def within_threshold(history: Iterable, ell: int) -> bool:
    """Integer-only form of ``breach_probability(history) <= 1/ell``."""
    total, unlinked = _products(_checked_pairs(history))
    return ell * (total - unlinked) <= total


def check_global_guarantee(history: Iterable, ell: int) -> tuple[bool, Fraction]:
    p = breach_probability(history)
    return p <= Fraction(1, ell), p


def localized_probability(config: GroupConfig, value: str) -> Fraction:
    return Fraction(config.counts.get(value, 0), config.n)


def min_ratio(history: Iterable, ell: int) -> Fraction:
    """Smallest n/n_s for the next linked release keeping p <= 1/ell.

    Raises ``InfeasibleRatioError`` when ``ell*prod(n - n_s) - (ell-1)*prod(n)``
    is not positive: no finite ratio restores the guarantee.
    """
    if ell < 2:
        raise ValueError("ell must be >= 2")
    pairs = _checked_pairs(history)
    if not pairs:
        return Fraction(ell)
    total, unlinked = _products(pairs)
    denominator = ell * unlinked - (ell - 1) * total
    if denominator <= 0:
        raise InfeasibleRatioError(
            f"history {pairs} leaves no feasible ratio for ell={ell} (denominator {denominator})"
        )
    return Fraction(ell * unlinked, denominator)


# -- exhaustive oracle ------------------------------------------------------


@dataclass(frozen=True)
class OracleRelease:
    config: GroupConfig
    target_in_group: bool = True


@dataclass(frozen=True)
class OracleScenario:
    """One group per release; the target sits at member position 0 when present."""

    releases: tuple[OracleRelease, ...]
    target: str

    def linked_pairs(self) -> list[tuple[int, int]]:
        return [
            (r.config.n, r.config.counts.get(self.target, 0))
            for r in self.releases
            if r.target_in_group and r.config.counts.get(self.target, 0) >= 1
        ]

    def world_count(self) -> int:
        return world_count_series(r.config for r in self.releases)


def multiset_permutations(counts: dict[str, int]) -> Iterator[tuple[str, ...]]:
    """Yield each distinct ordering of a multiset exactly once, in sorted order."""
    values = sorted(v for v, c in counts.items() if c > 0)
    remaining = {v: counts[v] for v in values}
    n = sum(remaining.values())
    prefix: list[str] = []

    def rec() -> Iterator[tuple[str, ...]]:
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for v in values:
            if remaining[v]:
                remaining[v] -= 1
                prefix.append(v)
                yield from rec()
                prefix.pop()
                remaining[v] += 1

    return rec()


def breach_probability_oracle(scenario: OracleScenario, budget: int = DEFAULT_BUDGET) -> Fraction:
    """W_link / W_total by walking every possible world of the scenario.

    Worlds are the mixed-radix product of the per-release permutation lists;
    only the target's slot of each permutation is kept, never whole worlds.
    """
    total = scenario.world_count()
    if total > budget:
        raise BudgetExceededError(f"{total} possible worlds exceeds budget {budget}")
    # per release: for each distinct assignment, does the target receive the value?
    slots: list[list[bool]] = []
    for release in scenario.releases:
        perms = multiset_permutations(dict(release.config.counts))
        if release.target_in_group:
            slots.append([perm[0] == scenario.target for perm in perms])
        else:
            slots.append([False for _ in perms])
    linked = 0
    for world in itertools.product(*slots):
        if any(world):
            linked += 1
    return Fraction(linked, total)
