"""Synthetic serial micro-data.

A base corpus of ``total_records`` tuples (one individual each) is cut into
``num_releases`` equal partitions. Release 1 is partition 1; release ``i``
is partition ``i`` plus a random ``carry_fraction`` of release ``i-1``,
after which a ``resample_fraction`` of its tuples get a sensitive value
copied from a random corpus tuple. The least frequent ``transient_quantile``
of the sensitive domain is marked transient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    CATEGORICAL,
    NUMERIC,
    STRING,
    Attribute,
    MicroRecord,
    MicroTable,
    RegistrationList,
    Schema,
)

DEFAULT_SCHEMA = Schema(
    (
        Attribute("age", NUMERIC),
        Attribute("zipcode", STRING),
        Attribute("sex", CATEGORICAL),
    ),
    sensitive="disease",
)


@dataclass(frozen=True)
class SeriesSpec:
    total_records: int = 100_000
    num_releases: int = 20
    carry_fraction: float = 0.20
    resample_fraction: float = 0.20
    transient_quantile: float = 0.10
    domain_size: int = 500
    zipf_exponent: float = 1.0
    registration_pool_size: int = 10_000
    seed: int = 0
    schema: Schema = field(default=DEFAULT_SCHEMA)
    sensitive_weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("carry_fraction", "resample_fraction", "transient_quantile"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.num_releases < 1:
            raise ValueError("num_releases must be >= 1")
        if self.total_records < self.num_releases:
            raise ValueError("need at least one record per release")
        if self.domain_size < 1:
            raise ValueError("domain_size must be >= 1")
        if self.sensitive_weights is not None and len(self.sensitive_weights) != self.domain_size:
            raise ValueError("sensitive_weights must have domain_size entries")
        if self.registration_pool_size < 0:
            raise ValueError("registration_pool_size must be >= 0")

    @property
    def partition_size(self) -> int:
        return self.total_records // self.num_releases

    def sensitive_domain(self) -> list[str]:
        width = len(str(self.domain_size - 1))
        return [f"d{i:0{width}d}" for i in range(self.domain_size)]

    def sensitive_distribution(self) -> np.ndarray:
        if self.sensitive_weights is not None:
            w = np.asarray(self.sensitive_weights, dtype=float)
        else:
            w = 1.0 / np.arange(1, self.domain_size + 1) ** self.zipf_exponent
        return w / w.sum()


def apportion(total: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder integer counts summing to ``total``."""
    raw = probs * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        order = np.lexsort((np.arange(len(probs)), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def _qid_sampler(schema: Schema, rng: np.random.Generator):
    """Return a function drawing ``m`` QID tuples for the default-like schema."""

    def draw(m: int) -> list[tuple]:
        columns = []
        for attr in schema.attributes:
            if attr.kind == NUMERIC:
                columns.append([int(v) for v in rng.integers(0, 100, size=m)])
            elif attr.kind == STRING:
                # clustered 5-digit codes: 50 regional prefixes, 20 suffixes each
                region = rng.integers(0, 50, size=m)
                local = rng.integers(0, 20, size=m)
                columns.append([f"{65000 + 37 * int(r) + int(s):05d}" for r, s in zip(region, local)])
            else:
                columns.append([("M", "F")[int(v)] for v in rng.integers(0, 2, size=m)])
        return list(zip(*columns)) if columns else [() for _ in range(m)]

    return draw


@dataclass(frozen=True)
class GeneratedSeries:
    tables: list[MicroTable]
    registration: RegistrationList
    transient: frozenset[str]
    corpus_values: list[str]


def generate_series(spec: SeriesSpec) -> GeneratedSeries:
    """Build the release series, registration list and transient value set."""
    rng = np.random.default_rng(spec.seed)
    domain = spec.sensitive_domain()
    probs = spec.sensitive_distribution()
    counts = apportion(spec.total_records, probs)
    values = np.repeat(np.arange(spec.domain_size), counts)
    rng.shuffle(values)
    corpus_values = [domain[v] for v in values]

    draw = _qid_sampler(spec.schema, rng)
    qids = draw(spec.total_records)
    width = len(str(spec.total_records + spec.registration_pool_size))
    ids = [f"p{i:0{width}d}" for i in range(spec.total_records)]
    corpus = [MicroRecord(ids[i], qids[i], corpus_values[i]) for i in range(spec.total_records)]

    size = spec.partition_size
    tables: list[MicroTable] = []
    prev: list[MicroRecord] = []
    for i in range(spec.num_releases):
        fresh = corpus[i * size : (i + 1) * size]
        current = list(fresh)
        if i > 0:
            if spec.carry_fraction > 0 and prev:
                k = int(round(spec.carry_fraction * len(prev)))
                picked = sorted(rng.choice(len(prev), size=k, replace=False))
                present = {r.individual_id for r in current}
                current.extend(prev[j] for j in picked if prev[j].individual_id not in present)
            if spec.resample_fraction > 0:
                k = int(round(spec.resample_fraction * len(current)))
                targets = rng.choice(len(current), size=k, replace=False)
                donors = rng.integers(0, spec.total_records, size=k)
                for t, d in zip(targets, donors):
                    r = current[t]
                    current[t] = MicroRecord(r.individual_id, r.qid, corpus_values[d])
        tables.append(MicroTable(i + 1, spec.schema, tuple(current)))
        prev = current

    extra_qids = draw(spec.registration_pool_size)
    extra_ids = [f"p{spec.total_records + i:0{width}d}" for i in range(spec.registration_pool_size)]
    entries = tuple((r.individual_id, r.qid) for r in corpus) + tuple(zip(extra_ids, extra_qids))
    registration = RegistrationList(spec.schema, entries)

    return GeneratedSeries(tables, registration, transient_values(spec, corpus_values), corpus_values)


def transient_values(spec: SeriesSpec, corpus_values: list[str]) -> frozenset[str]:
    """The least frequent ``transient_quantile`` share of the domain (ties by name)."""
    domain = spec.sensitive_domain()
    freq = {v: 0 for v in domain}
    for v in corpus_values:
        freq[v] += 1
    k = int(round(spec.transient_quantile * len(domain)))
    ranked = sorted(domain, key=lambda v: (freq[v], v))
    return frozenset(ranked[:k])
