"""Domain types shared by the anonymizer, the probability code and the I/O layer.

Everything here is an immutable value. ``record_release`` returns a new
``LinkageHistory`` rather than mutating the one it is given.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

from .errors import ReleaseOrderError

NUMERIC = "numeric"
STRING = "string"
CATEGORICAL = "categorical"
ATTRIBUTE_KINDS = (NUMERIC, STRING, CATEGORICAL)

CONSTANT_RATIO = "constant_ratio"
GEOMETRIC = "geometric"
STRATEGIES = (CONSTANT_RATIO, GEOMETRIC)


@dataclass(frozen=True)
class Attribute:
    """One quasi-identifier column.

    ``string`` attributes generalize by common prefix (zip codes), ``numeric``
    ones by interval, ``categorical`` ones by value set.
    """

    name: str
    kind: str = CATEGORICAL
    alphabet: str = "0123456789"

    def __post_init__(self) -> None:
        if self.kind not in ATTRIBUTE_KINDS:
            raise ValueError(f"unknown attribute kind {self.kind!r}")
        if not self.name:
            raise ValueError("attribute name must be non-empty")


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]
    sensitive: str = "sensitive"

    @property
    def arity(self) -> int:
        return len(self.attributes)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(a.kind for a in self.attributes)


@dataclass(frozen=True)
class MicroRecord:
    individual_id: str
    qid: tuple
    sensitive: str


@dataclass(frozen=True)
class MicroTable:
    release_index: int
    schema: Schema
    records: tuple[MicroRecord, ...] = ()

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> set[str]:
        return {r.individual_id for r in self.records}


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


def validate_table(table: MicroTable) -> list[Violation]:
    """Return one violation per broken record/table invariant (empty if valid)."""
    out: list[Violation] = []
    if table.release_index < 1:
        out.append(Violation("release_index", f"release index {table.release_index} < 1"))
    seen: set[str] = set()
    for pos, rec in enumerate(table.records):
        if not rec.individual_id:
            out.append(Violation("empty_id", f"record {pos} has an empty individual id"))
        elif rec.individual_id in seen:
            out.append(Violation("duplicate_id", f"individual {rec.individual_id!r} appears more than once"))
        seen.add(rec.individual_id)
        if len(rec.qid) != table.schema.arity:
            out.append(
                Violation(
                    "arity",
                    f"record {rec.individual_id!r} has {len(rec.qid)} qid values, schema has {table.schema.arity}",
                )
            )
    return out


@dataclass(frozen=True)
class AnonymizedGroup:
    """A published group.

    ``sensitive_multiset`` counts every tuple in the group, virtual ones
    included; ``virtual_sensitive`` is the sub-multiset carried by virtual
    members.
    """

    member_ids: frozenset[str]
    generalized_qid: tuple[str, ...]
    sensitive_multiset: Mapping[str, int]
    virtual_ids: frozenset[str] = frozenset()
    virtual_sensitive: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        total = sum(self.sensitive_multiset.values())
        if total != len(self.member_ids) + len(self.virtual_ids):
            raise ValueError(
                f"multiset holds {total} values for {len(self.member_ids)} members "
                f"and {len(self.virtual_ids)} virtual members"
            )
        if self.member_ids & self.virtual_ids:
            raise ValueError("an individual cannot be both a real and a virtual member")
        if total < 1:
            raise ValueError("groups must be non-empty")
        if sum(self.virtual_sensitive.values()) != len(self.virtual_ids):
            raise ValueError("virtual_sensitive must hold one value per virtual member")
        for s, c in self.virtual_sensitive.items():
            if self.sensitive_multiset.get(s, 0) < c:
                raise ValueError(f"virtual value {s!r} exceeds the group multiset")

    @property
    def size(self) -> int:
        return len(self.member_ids) + len(self.virtual_ids)

    def count(self, value: str) -> int:
        return self.sensitive_multiset.get(value, 0)


@dataclass(frozen=True)
class AnonymizedTable:
    release_index: int
    schema: Schema
    groups: tuple[AnonymizedGroup, ...] = ()

    def member_ids(self) -> set[str]:
        out: set[str] = set()
        for g in self.groups:
            out |= g.member_ids
        return out

    @property
    def tuple_count(self) -> int:
        return sum(g.size for g in self.groups)


@dataclass(frozen=True)
class GroupConfig:
    """Sensitive-value counts of one group; the input to world counting."""

    n: int
    counts: Mapping[str, int]

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("group size must be positive")
        if any(c < 0 for c in self.counts.values()):
            raise ValueError("counts must be non-negative")
        if sum(self.counts.values()) != self.n:
            raise ValueError(f"counts sum to {sum(self.counts.values())}, expected {self.n}")

    @classmethod
    def of(cls, counts: Mapping[str, int]) -> "GroupConfig":
        return cls(sum(counts.values()), dict(counts))

    @classmethod
    def from_values(cls, values: Iterable[str]) -> "GroupConfig":
        return cls.of(Counter(values))


class HistoryEntry(NamedTuple):
    release: int
    n: int
    n_s: int


HistoryKey = tuple[str, str]


class LinkageHistory(Mapping[HistoryKey, tuple[HistoryEntry, ...]]):
    """The statistics file: (individual, value) -> linked (n, n_s) entries.

    Releases whose group did not contain the value are never stored; they do
    not change the breach probability.
    """

    __slots__ = ("_data", "_last_release")

    def __init__(
        self,
        data: Mapping[HistoryKey, Sequence[HistoryEntry]] | None = None,
        last_release: int = 0,
    ) -> None:
        self._data: dict[HistoryKey, tuple[HistoryEntry, ...]] = {}
        last = last_release
        for key, entries in (data or {}).items():
            entries = tuple(HistoryEntry(*e) for e in entries)
            for prev, cur in zip(entries, entries[1:]):
                if cur.release <= prev.release:
                    raise ReleaseOrderError(f"entries for {key} are not strictly increasing")
            for e in entries:
                if not 1 <= e.n_s <= e.n:
                    raise ValueError(f"entry {e} for {key} violates 1 <= n_s <= n")
            if entries:
                self._data[key] = entries
                last = max(last, entries[-1].release)
        self._last_release = last

    def __getitem__(self, key: HistoryKey) -> tuple[HistoryEntry, ...]:
        return self._data[key]

    def __iter__(self) -> Iterator[HistoryKey]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, LinkageHistory):
            return self._data == other._data and self._last_release == other._last_release
        return NotImplemented

    def __repr__(self) -> str:
        return f"LinkageHistory({len(self._data)} keys, last_release={self._last_release})"

    @property
    def last_release(self) -> int:
        """Highest release index recorded (including releases that added nothing)."""
        return self._last_release

    def entries(self, individual_id: str, value: str) -> tuple[HistoryEntry, ...]:
        return self._data.get((individual_id, value), ())

    def pairs(self, individual_id: str, value: str) -> list[tuple[int, int]]:
        return [(e.n, e.n_s) for e in self.entries(individual_id, value)]

    def _extended(self, additions: Mapping[HistoryKey, HistoryEntry], release: int) -> "LinkageHistory":
        new = LinkageHistory.__new__(LinkageHistory)
        data = dict(self._data)
        for key, entry in additions.items():
            data[key] = data.get(key, ()) + (entry,)
        new._data = data
        new._last_release = max(self._last_release, release)
        return new


def record_release(
    history: LinkageHistory,
    table: AnonymizedTable,
    transient_values: Iterable[str],
) -> LinkageHistory:
    """Append one release's linked (n, n_s) entries to ``history``.

    Every real member of a group containing a transient value ``s`` gets an
    entry for ``s``; virtual members get nothing.
    """
    if table.release_index <= history.last_release:
        raise ReleaseOrderError(
            f"release {table.release_index} does not follow recorded release {history.last_release}"
        )
    transient = set(transient_values)
    additions: dict[HistoryKey, HistoryEntry] = {}
    for g in table.groups:
        linked = [(s, c) for s, c in g.sensitive_multiset.items() if c >= 1 and s in transient]
        if not linked:
            continue
        n = g.size
        for o in g.member_ids:
            for s, c in linked:
                additions[(o, s)] = HistoryEntry(table.release_index, n, c)
    return history._extended(additions, table.release_index)


@dataclass(frozen=True)
class PrivacyParams:
    ell: int
    strategy: str = GEOMETRIC
    k_prime: int | None = None
    alpha: Fraction | None = None

    def __post_init__(self) -> None:
        if int(self.ell) != self.ell or self.ell < 2:
            raise ValueError("ell must be an integer >= 2")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.strategy == CONSTANT_RATIO:
            if self.k_prime is None or self.k_prime < 1:
                raise ValueError("constant_ratio needs k_prime >= 1")
        else:
            if self.alpha is None:
                raise ValueError("geometric needs alpha")
            alpha = Fraction(self.alpha) if not isinstance(self.alpha, float) else Fraction(str(self.alpha))
            if alpha <= 1:
                raise ValueError("alpha must be > 1")
            object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class RegistrationList:
    """External roster of individuals who may be added as virtual members."""

    schema: Schema
    entries: tuple[tuple[str, tuple], ...] = ()

    def __post_init__(self) -> None:
        ids = [i for i, _ in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("registration list ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)
