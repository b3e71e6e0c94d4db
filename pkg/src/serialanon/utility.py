"""Utility of a published release: range-query error and group-size metrics."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .model import CATEGORICAL, NUMERIC, STRING, AnonymizedTable, MicroTable, Schema

_NUMERIC_RE = re.compile(r"^\s*(-?\d+(?:\.\d+)?)(?:\s*-\s*(-?\d+(?:\.\d+)?))?\s*$")


@dataclass(frozen=True)
class RangeQuery:
    """Count query; ``predicates[a]`` is None when attribute ``a`` is unconstrained.

    numeric predicates are half-open ``(lo, hi)`` intervals, string
    predicates are prefixes, categorical predicates are value sets.
    """

    predicates: tuple

    def __post_init__(self) -> None:
        if all(p is None for p in self.predicates):
            raise ValueError("a range query needs at least one predicate")


@dataclass(frozen=True)
class Domain:
    """Observed per-attribute domain used to draw queries."""

    schema: Schema
    numeric: dict[int, tuple[int, int]]
    strings: dict[int, tuple[str, ...]]
    categories: dict[int, tuple[str, ...]]

    @classmethod
    def of(cls, table: MicroTable) -> "Domain":
        numeric, strings, categories = {}, {}, {}
        for a, attr in enumerate(table.schema.attributes):
            col = [r.qid[a] for r in table.records]
            if attr.kind == NUMERIC:
                numeric[a] = (min(col), max(col)) if col else (0, 0)
            elif attr.kind == STRING:
                strings[a] = tuple(sorted({str(v) for v in col}))
            else:
                categories[a] = tuple(sorted({str(v) for v in col}))
        return cls(table.schema, numeric, strings, categories)


def generate_queries(domain: Domain, count: int, seed: int) -> list[RangeQuery]:
    """Random count queries over the observed domain, reproducible from ``seed``.

    Each attribute is constrained with probability 1/2 (at least one always
    is); ranges and subsets are drawn uniformly.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    arity = domain.schema.arity
    queries = []
    for _ in range(count):
        chosen = rng.random(arity) < 0.5
        if not chosen.any():
            chosen[rng.integers(arity)] = True
        preds: list = [None] * arity
        for a in np.flatnonzero(chosen):
            kind = domain.schema.attributes[a].kind
            if kind == NUMERIC:
                lo, hi = domain.numeric[a]
                x, y = sorted(int(v) for v in rng.integers(lo, hi + 2, size=2))
                if x == y:
                    y = x + 1
                preds[a] = (x, y)
            elif kind == STRING:
                pool = domain.strings[a]
                value = pool[rng.integers(len(pool))]
                length = int(rng.integers(1, len(value))) if len(value) > 1 else len(value)
                preds[a] = value[:length]
            else:
                pool = domain.categories[a]
                k = int(rng.integers(1, len(pool) + 1))
                preds[a] = frozenset(str(v) for v in rng.choice(pool, size=k, replace=False))
        queries.append(RangeQuery(tuple(preds)))
    return queries


class _RegionIndex:
    """Weighted regions, stored per attribute as distinct regions plus an index map.

    Queries are answered in batches: each attribute's match fraction is
    computed once per distinct region and then gathered per group.
    """

    def __init__(self, schema: Schema, regions: Sequence[tuple], weights: Sequence[float]):
        self.schema = schema
        self.weights = np.asarray(weights, dtype=float)
        self.cols: dict[int, tuple] = {}
        self.inverse: dict[int, np.ndarray] = {}
        for a, attr in enumerate(schema.attributes):
            seen: dict[tuple, int] = {}
            self.inverse[a] = np.array([seen.setdefault(r[a], len(seen)) for r in regions], dtype=np.int64)
            self.cols[a] = self._columns(attr, list(seen))

    @staticmethod
    def _columns(attr, col: list) -> tuple:
        n = len(col)
        if attr.kind == NUMERIC:
            return (
                np.array([c[0] for c in col], dtype=float).reshape(n),
                np.array([c[1] for c in col], dtype=float).reshape(n),
            )
        if attr.kind == STRING:
            prefixes = [c[0] for c in col]
            width = max([len(p) for p in prefixes] + [1])
            codes = np.full((n, width), -1, dtype=np.int32)
            for i, p in enumerate(prefixes):
                if p:
                    codes[i, : len(p)] = np.frombuffer(p.encode("utf-32-le"), dtype=np.int32)
            plen = np.array([len(p) for p in prefixes], dtype=np.int64).reshape(n)
            return (codes, plen, len(attr.alphabet) or 1)
        vocab: dict[str, int] = {}
        for c in col:
            for v in c:
                vocab.setdefault(v, len(vocab))
        member = np.zeros((n, max(len(vocab), 1)))
        for i, c in enumerate(col):
            for v in c:
                member[i, vocab[v]] = 1.0
        return (vocab, member, member.sum(axis=1))

    def answer(self, q: RangeQuery) -> float:
        return float(self.answer_many([q])[0])

    def answer_many(self, queries: Sequence[RangeQuery], chunk: int = 256) -> np.ndarray:
        """Answers for many queries at once, evaluated in chunks of ``chunk``."""
        out = np.empty(len(queries))
        for start in range(0, len(queries), chunk):
            block = queries[start : start + chunk]
            out[start : start + len(block)] = self._fractions(block) @ self.weights
        return out

    def _fractions(self, block: Sequence[RangeQuery]) -> np.ndarray:
        nq = len(block)
        frac = np.ones((nq, len(self.weights)))
        for a, attr in enumerate(self.schema.attributes):
            preds = [q.predicates[a] for q in block]
            used = np.array([p is not None for p in preds])
            if not used.any():
                continue
            if attr.kind == NUMERIC:
                lo, hi = self.cols[a]
                a0 = np.array([p[0] if p is not None else 0.0 for p in preds], dtype=float)[:, None]
                b0 = np.array([p[1] if p is not None else 0.0 for p in preds], dtype=float)[:, None]
                width = hi - lo
                overlap = np.clip(np.minimum(hi, b0) - np.maximum(lo, a0), 0, None)
                point = (lo >= a0) & (lo < b0)
                part = np.where(width > 0, overlap / np.where(width > 0, width, 1), point)
            elif attr.kind == STRING:
                codes, plen, alpha = self.cols[a]
                k = np.array([len(p) if p is not None else 0 for p in preds], dtype=np.int64)
                span = max(int(k.max()), codes.shape[1])
                qc = np.full((nq, span), -2, dtype=np.int32)
                for i, p in enumerate(preds):
                    if p:
                        qc[i, : len(p)] = np.frombuffer(p.encode("utf-32-le"), dtype=np.int32)
                rc = np.full((len(plen), span), -1, dtype=np.int32)
                rc[:, : codes.shape[1]] = codes
                match = np.ones((nq, len(plen)), dtype=bool)
                for j in range(span):
                    # positions past either prefix are wildcards
                    match &= (rc[None, :, j] == qc[:, None, j]) | (j >= plen)[None, :] | (j >= k)[:, None]
                spread = np.power(float(alpha), -np.clip(k[:, None] - plen[None, :], 0, None).astype(float))
                part = np.where(match, spread, 0.0)
            else:
                vocab, member, sizes = self.cols[a]
                hit = np.zeros((nq, member.shape[1]))
                for i, p in enumerate(preds):
                    for v in p or ():
                        j = vocab.get(v)
                        if j is not None:
                            hit[i, j] = 1.0
                part = (hit @ member.T) / np.where(sizes > 0, sizes, 1)[None, :]
            part = np.where(used[:, None], part, 1.0)
            frac *= part[:, self.inverse[a]]
        return frac


def _point_region(value, kind: str):
    if kind == NUMERIC:
        return (float(value), float(value))
    if kind == STRING:
        return (str(value),)
    return (str(value),)


def parse_generalized(value: str, kind: str):
    """Region described by a published generalized QID string."""
    if kind == NUMERIC:
        m = _NUMERIC_RE.match(value)
        if not m:
            raise ValueError(f"not a numeric range: {value!r}")
        lo = float(m.group(1))
        hi = float(m.group(2)) if m.group(2) is not None else lo
        return (lo, hi)
    if kind == STRING:
        return (value.split("*", 1)[0],)
    return tuple(value.split("/"))


class RawIndex(_RegionIndex):
    def __init__(self, raw: MicroTable):
        kinds = raw.schema.kinds
        regions = [tuple(_point_region(v, k) for v, k in zip(r.qid, kinds)) for r in raw.records]
        super().__init__(raw.schema, regions, [1.0] * len(regions))


class AnonIndex(_RegionIndex):
    def __init__(self, table: AnonymizedTable):
        kinds = table.schema.kinds
        regions = [tuple(parse_generalized(v, k) for v, k in zip(g.generalized_qid, kinds)) for g in table.groups]
        super().__init__(table.schema, regions, [g.size for g in table.groups])


def answer_exact(raw: MicroTable, q: RangeQuery) -> int:
    return int(round(RawIndex(raw).answer(q)))


def answer_anonymized(table: AnonymizedTable, q: RangeQuery) -> float:
    """Estimate assuming members spread uniformly over their group's region."""
    return AnonIndex(table).answer(q)


def relative_error(
    raw: MicroTable,
    anon: AnonymizedTable,
    queries: Sequence[RangeQuery],
    floor: float = 1.0,
) -> float:
    """Mean of ``|exact - estimate| / max(exact, floor)`` over the queries."""
    if not queries:
        return 0.0
    exact = RawIndex(raw).answer_many(queries)
    est = AnonIndex(anon).answer_many(queries)
    return float(np.mean(np.abs(exact - est) / np.maximum(exact, floor)))


@dataclass(frozen=True)
class SizeMetrics:
    average_size: float
    maximum_size: int
    discernability: int
    normalized_average_size: float


def size_metrics(table: AnonymizedTable, k_param: float = 1.0) -> SizeMetrics:
    if not table.groups:
        raise ValueError("size metrics need at least one group")
    sizes = [g.size for g in table.groups]
    total = sum(sizes)
    return SizeMetrics(
        average_size=total / len(sizes),
        maximum_size=max(sizes),
        discernability=sum(s * s for s in sizes),
        normalized_average_size=total / (len(sizes) * k_param),
    )


@dataclass(frozen=True)
class UtilityReport:
    average_relative_error: float
    average_group_size: float
    maximum_group_size: int
    discernability_penalty: int
    normalized_average_group_size: float
    query_count: int

    FIELDS = (
        "average_relative_error",
        "average_group_size",
        "maximum_group_size",
        "discernability_penalty",
        "normalized_average_group_size",
        "query_count",
    )

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    raw: MicroTable,
    anon: AnonymizedTable,
    queries: Sequence[RangeQuery],
    k_param: float = 1.0,
) -> UtilityReport:
    sm = size_metrics(anon, k_param)
    return UtilityReport(
        average_relative_error=relative_error(raw, anon, queries),
        average_group_size=sm.average_size,
        maximum_group_size=sm.maximum_size,
        discernability_penalty=sm.discernability,
        normalized_average_group_size=sm.normalized_average_size,
        query_count=len(queries),
    )
