"""Per-release anonymization under the global guarantee.

Every record starts as a singleton group. A group is *constrained* when it
holds a transient value ``s``; it then needs ``size / count(s)`` at least the
largest ratio planned for any member's (member, ``s``) history. Violating
groups grow by absorbing the QID-nearest group whose merge shrinks their
deficit; registration-list individuals fill the remainder as virtual members;
records that still cannot be covered are suppressed.
"""

from __future__ import annotations

import math
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import HorizonExceededError, InfeasibleRatioError
from .model import (
    CATEGORICAL,
    NUMERIC,
    STRING,
    AnonymizedGroup,
    AnonymizedTable,
    LinkageHistory,
    MicroTable,
    PrivacyParams,
    RegistrationList,
    Schema,
    record_release,
    validate_table,
)
from .probability import breach_probability, within_threshold
from .strategy import plan_ratio

INFEASIBLE = math.inf
_CANDIDATE_WINDOW = 32


# -- generalization ---------------------------------------------------------


def _common_prefix(values: Sequence[str]) -> str:
    first = min(values)
    last = max(values)
    i = 0
    while i < len(first) and i < len(last) and first[i] == last[i]:
        i += 1
    return first[:i]


def generalize_qids(qids: Sequence[tuple], schema: Schema) -> tuple[str, ...]:
    """Generalized value per attribute for the given member QIDs.

    numeric -> ``lo-hi`` (or the value when all agree); string -> common
    prefix padded with ``*`` (``*`` alone when lengths differ); categorical ->
    the value when unanimous, else the distinct values joined by ``/`` in
    order of first appearance.
    """
    if not qids:
        raise ValueError("cannot generalize an empty group")
    out = []
    for a, attr in enumerate(schema.attributes):
        column = [q[a] for q in qids]
        if attr.kind == NUMERIC:
            lo, hi = min(column), max(column)
            out.append(str(lo) if lo == hi else f"{lo}-{hi}")
        elif attr.kind == STRING:
            column = [str(v) for v in column]
            lengths = {len(v) for v in column}
            if len(lengths) > 1:
                out.append("*")
            else:
                width = lengths.pop()
                prefix = _common_prefix(column)
                out.append(prefix + "*" * (width - len(prefix)))
        else:
            distinct = list(dict.fromkeys(str(v) for v in column))
            out.append(distinct[0] if len(distinct) == 1 else "/".join(distinct))
    return tuple(out)


# -- vectorized QID regions -------------------------------------------------


class _Regions:
    """Bounding regions of groups (or points), one row per group.

    Distances are the normalized generalization loss of the merged region,
    summed over attributes: numeric width / domain span, string
    ``1 - common prefix / length``, categorical 0 if unanimous and equal
    else 1. For two points this is the plain per-attribute QID distance.
    """

    def __init__(self, qids: Sequence[tuple], schema: Schema, like: "_Regions | None" = None):
        self.schema = schema
        n = len(qids)
        self.num_idx = [a for a, at in enumerate(schema.attributes) if at.kind == NUMERIC]
        self.str_idx = [a for a, at in enumerate(schema.attributes) if at.kind == STRING]
        self.cat_idx = [a for a, at in enumerate(schema.attributes) if at.kind == CATEGORICAL]

        num = np.array([[float(q[a]) for a in self.num_idx] for q in qids], dtype=float).reshape(n, len(self.num_idx))
        self.lo = num.copy()
        self.hi = num.copy()
        if like is None:
            spans = {a: float(num[:, j].max() - num[:, j].min()) if n else 0.0 for j, a in enumerate(self.num_idx)}
        else:
            spans = like.spans
        self.spans = spans
        self.span_arr = np.array([spans[a] if spans[a] > 0 else 1.0 for a in self.num_idx], dtype=float)

        # each string prefix gets an id shared with ``like``; -1 marks "no prefix here"
        self.prefix_vocab: list[dict] = like.prefix_vocab if like else [{} for _ in self.str_idx]
        strs = [[str(q[a]) for a in self.str_idx] for q in qids]
        width = max([len(s) for row in strs for s in row] + [like.width if like else 1, 1])
        self.width = width
        self.pid = np.full((n, len(self.str_idx), width), -1, dtype=np.int64)
        self.slen = np.zeros((n, len(self.str_idx)), dtype=np.int32)
        for i, row in enumerate(strs):
            for j, text in enumerate(row):
                self.slen[i, j] = len(text)
                vocab = self.prefix_vocab[j]
                for k in range(len(text)):
                    self.pid[i, j, k] = vocab.setdefault(text[: k + 1], len(vocab))
        if like is not None and like.width < width:
            pad = np.full(like.pid.shape[:2] + (width - like.width,), -1, dtype=np.int64)
            like.pid = np.concatenate([like.pid, pad], axis=2)
            like.width = width

        self.cat_vocab: list[dict] = like.cat_vocab if like else [{} for _ in self.cat_idx]
        self.cat = np.zeros((n, len(self.cat_idx)), dtype=np.int64)
        for j, a in enumerate(self.cat_idx):
            vocab = self.cat_vocab[j]
            for i, q in enumerate(qids):
                self.cat[i, j] = vocab.setdefault(q[a], len(vocab))

    def encode_points(self, qids: Sequence[tuple]) -> "_Regions":
        """Encode extra points against this region set's spans and vocabularies."""
        return _Regions(qids, self.schema, like=self)

    def _lcp(self, other: "_Regions", rows, g: int) -> np.ndarray:
        """Common-prefix length of region ``g`` (in self) with ``rows`` of ``other``."""
        ref = self.pid[g][None]
        lcp = ((other.pid[rows] == ref) & (ref >= 0)).sum(axis=2)
        same_len = (other.slen[rows] == self.slen[g][None, :]) & (self.slen[g][None, :] >= 0)
        return np.where(same_len, lcp, 0)

    def merged_loss(self, g: int, other: "_Regions | None" = None, rows=slice(None)) -> np.ndarray:
        other = self if other is None else other
        lo = np.minimum(other.lo[rows], self.lo[g][None, :])
        hi = np.maximum(other.hi[rows], self.hi[g][None, :])
        loss = ((hi - lo) / self.span_arr[None, :]).sum(axis=1)
        if self.str_idx:
            lcp = self._lcp(other, rows, g)
            length = np.where(self.slen[g] > 0, self.slen[g], max(self.width, 1))
            loss = loss + (1.0 - lcp / length[None, :]).sum(axis=1)
        if self.cat_idx:
            cg = self.cat[g][None, :]
            loss = loss + ((other.cat[rows] != cg) | (cg < 0)).sum(axis=1)
        return loss

    def absorb(self, g: int, other: "_Regions", c: int) -> None:
        """Grow region ``g`` to cover region ``c`` of ``other``."""
        self.lo[g] = np.minimum(self.lo[g], other.lo[c])
        self.hi[g] = np.maximum(self.hi[g], other.hi[c])
        if self.str_idx:
            lcp = self._lcp(other, [c], g)[0]
            same = (other.slen[c] == self.slen[g]) & (self.slen[g] >= 0)
            for j, k in enumerate(np.where(same, lcp, 0)):
                self.pid[g, j, k:] = -1
            self.slen[g] = np.where(same, self.slen[g], -1)
        if self.cat_idx:
            self.cat[g] = np.where(self.cat[g] == other.cat[c], self.cat[g], -1)


# -- constraints ------------------------------------------------------------


@dataclass
class _Group:
    members: list[int]
    counts: dict[str, int]
    hreq: dict[str, Fraction | float]
    virtual: list[int] = field(default_factory=list)
    virtual_values: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.members) + len(self.virtual)


class GroupingConstraint:
    """Per-(member, transient value) ratio requirements for one release."""

    def __init__(self, history: LinkageHistory, params: PrivacyParams, transient: Iterable[str]):
        self.history = history
        self.params = params
        self.transient = frozenset(transient)
        self.base = plan_ratio([], params).target_ratio
        self._cache: dict[tuple, Fraction | float] = {}

    def required(self, individual_id: str, value: str) -> Fraction | float:
        """Ratio a group must reach if it links ``individual_id`` to ``value``."""
        pairs = tuple(self.history.pairs(individual_id, value))
        if not pairs:
            return self.base
        hit = self._cache.get(pairs)
        if hit is None:
            try:
                hit = plan_ratio(pairs, self.params).target_ratio
            except (InfeasibleRatioError, HorizonExceededError):
                hit = INFEASIBLE
            self._cache[pairs] = hit
        return hit

    def required_size(self, counts: dict[str, int], hreq: dict) -> float:
        need = 0
        for s, c in counts.items():
            r = hreq.get(s, self.base)
            if r is INFEASIBLE:
                return INFEASIBLE
            if r < self.base:
                r = self.base
            need = max(need, math.ceil(r * c))
        return need

    def satisfied(self, member_ids: Iterable[str], multiset: dict[str, int]) -> bool:
        """Check a finished group: |G|/count(s) >= requirement for every pair."""
        members = list(member_ids)
        size = sum(multiset.values())
        for s, c in multiset.items():
            if s not in self.transient or c == 0:
                continue
            for o in members:
                r = self.required(o, s)
                if r is INFEASIBLE or Fraction(size, c) < r:
                    return False
        return True


def _deficit(con: GroupingConstraint, g: _Group) -> float:
    need = con.required_size(g.counts, g.hreq)
    return need if need is INFEASIBLE else max(0, need - g.size)


def _merged_gap(con: GroupingConstraint, a: _Group, b: _Group) -> float:
    """Required size minus actual size of ``a`` merged with ``b`` (may be negative)."""
    counts = dict(a.counts)
    for s, c in b.counts.items():
        counts[s] = counts.get(s, 0) + c
    hreq = {}
    for s in counts:
        ra = a.hreq.get(s)
        rb = b.hreq.get(s)
        if ra is not None or rb is not None:
            hreq[s] = max(r for r in (ra, rb) if r is not None)
    need = con.required_size(counts, hreq)
    return need if need == INFEASIBLE else need - a.size - b.size


# -- reporting --------------------------------------------------------------


@dataclass
class AnonymizationReport:
    release_index: int
    group_sizes: list[int]
    suppressed: list[str]
    virtual_used: list[str]
    duration_s: float

    @property
    def groups_formed(self) -> int:
        return len(self.group_sizes)

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "release_index": self.release_index,
            "groups_formed": self.groups_formed,
            "group_sizes": self.group_sizes,
            "suppressed": self.suppressed,
            "virtual_used": self.virtual_used,
            "duration_s": self.duration_s,
        }


# -- grouping ---------------------------------------------------------------


def grow_groups(
    raw: MicroTable,
    constraint: GroupingConstraint,
    registration: RegistrationList | None = None,
    seed: int = 0,
) -> tuple[list[_Group], list[int], list[int]]:
    """Greedy bottom-up grouping.

    Returns ``(groups, suppressed_record_indices, virtual_registration_indices)``.
    Group ``members`` index into ``raw.records``; ``virtual`` indexes into
    ``registration.entries``.
    """
    records = raw.records
    n = len(records)
    if n == 0:
        return [], [], []
    transient = constraint.transient
    present = {r.sensitive for r in records} & transient
    rng = np.random.default_rng(seed)

    regions = _Regions([r.qid for r in records], raw.schema)
    groups: list[_Group | None] = []
    for i, rec in enumerate(records):
        counts = {rec.sensitive: 1} if rec.sensitive in transient else {}
        hreq = {}
        for s in present:
            if constraint.history.entries(rec.individual_id, s):
                hreq[s] = constraint.required(rec.individual_id, s)
        groups.append(_Group([i], counts, hreq))
    owner = np.arange(n)
    alive = np.ones(n, dtype=bool)

    reg_regions = None
    reg_free: np.ndarray | None = None
    release_ids = raw.ids()
    virtual_pool: list[str] = []
    virtual_weights: np.ndarray | None = None
    nontransient = Counter(r.sensitive for r in records if r.sensitive not in transient)
    if nontransient:
        virtual_pool = sorted(nontransient)
        w = np.array([nontransient[v] for v in virtual_pool], dtype=float)
        virtual_weights = w / w.sum()

    live_rows = np.arange(n)
    # distances from the group being grown; after it absorbs anything the
    # cached values remain lower bounds, since its region only gets bigger
    cache = {"v": -1}

    def distances(v: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nonlocal live_rows
        if cache["v"] != v:
            if len(live_rows) > 64 and alive[live_rows].mean() < 0.75:
                live_rows = np.flatnonzero(alive)
            rows = live_rows
            d = regions.merged_loss(v, rows=rows)
            d[~alive[rows]] = np.inf
            d[rows == v] = np.inf
            cache.update(v=v, rows=rows, d=d, exact=np.ones(len(rows), dtype=bool))
        return cache["rows"], cache["d"], cache["exact"]

    def refresh(v: int, rows, d, exact, idx) -> None:
        stale = idx[~exact[idx]]
        if len(stale):
            target = rows[stale]
            loss = regions.merged_loss(v, rows=target)
            d[stale] = np.where(alive[target] & (target != v), loss, np.inf)
            exact[stale] = True

    def nearest_window(v: int) -> np.ndarray:
        """Positions (into the cached rows) of the nearest groups, in order."""
        rows, d, exact = distances(v)
        live = int(np.isfinite(d).sum())
        if live == 0:
            return np.empty(0, dtype=np.int64)
        w = min(_CANDIDATE_WINDOW, live)
        k = min(4 * w, live)
        refresh(v, rows, d, exact, np.argpartition(d, k - 1)[:k])
        while True:
            cutoff = np.partition(d, w - 1)[w - 1]
            sel = np.flatnonzero(d <= cutoff)
            if exact[sel].all():
                break
            refresh(v, rows, d, exact, sel)
        return sel[np.lexsort((rows[sel], d[sel]))][:w]

    def nearest_reducing(v: int, current: float) -> int | None:
        """Nearest group whose merge shrinks the deficit of ``v``.

        Among the nearest few, merges that keep the required size and do not
        overshoot it win over closer ones that raise or overshoot it.
        """
        head = nearest_window(v)
        if not len(head):
            return None
        rows, d, exact = distances(v)
        need_now = constraint.required_size(groups[v].counts, groups[v].hreq)
        best, best_rank = None, None
        for i in head:
            c = int(rows[i])
            gap = _merged_gap(constraint, groups[v], groups[c])
            if max(gap, 0) >= current:
                continue
            raised = gap + groups[v].size + groups[c].size > need_now
            rank = (raised, gap < 0)
            if rank == (False, False):
                return c
            if best_rank is None or rank < best_rank:
                best, best_rank = c, rank
        if best is not None:
            return best
        refresh(v, rows, d, exact, np.flatnonzero(~exact))
        tried = set(head.tolist())
        for i in np.lexsort((rows, d)):
            if not np.isfinite(d[i]):
                break
            if int(i) in tried:
                continue
            c = int(rows[i])
            if max(_merged_gap(constraint, groups[v], groups[c]), 0) < current:
                return c
        return None

    def grown(v: int, removed: int | None = None) -> None:
        """Keep the distance cache valid after ``v`` absorbed something."""
        if cache["v"] != v:
            return
        rows, d, exact = cache["rows"], cache["d"], cache["exact"]
        exact[:] = False
        if removed is not None:
            pos = int(np.searchsorted(rows, removed))
            if pos < len(rows) and rows[pos] == removed:
                d[pos] = np.inf
                exact[pos] = True

    def merge(v: int, c: int) -> None:
        gv, gc = groups[v], groups[c]
        for m in gc.members:
            owner[m] = v
        gv.members.extend(gc.members)
        gv.virtual.extend(gc.virtual)
        gv.virtual_values.extend(gc.virtual_values)
        for s, k in gc.counts.items():
            gv.counts[s] = gv.counts.get(s, 0) + k
        for s, r in gc.hreq.items():
            gv.hreq[s] = max(gv.hreq[s], r) if s in gv.hreq else r
        regions.absorb(v, regions, c)
        groups[c] = None
        alive[c] = False
        grown(v, c)

    def add_virtual(v: int, needed: int) -> None:
        nonlocal reg_regions, reg_free
        if registration is None or not len(registration) or virtual_weights is None:
            return
        if reg_regions is None:
            reg_regions = regions.encode_points([q for _, q in registration.entries])
            reg_free = np.array([rid not in release_ids for rid, _ in registration.entries], dtype=bool)
        dist = regions.merged_loss(v, reg_regions)
        dist[~reg_free] = np.inf
        order = np.lexsort((np.arange(len(dist)), dist))
        picked = [int(i) for i in order[:needed] if np.isfinite(dist[i])]
        g = groups[v]
        for i in picked:
            reg_free[i] = False
            g.virtual.append(i)
            g.virtual_values.append(str(rng.choice(virtual_pool, p=virtual_weights)))
            regions.absorb(v, reg_regions, i)
        grown(v)

    def initial_need(i: int) -> float:
        return constraint.required_size(groups[i].counts, groups[i].hreq)

    seeds = [i for i in range(n) if groups[i].counts]
    seeds.sort(key=lambda i: (-initial_need(i), i))
    unsatisfied: list[int] = []
    for seed_idx in seeds:
        v = int(owner[seed_idx])
        deficit = _deficit(constraint, groups[v])
        while 0 < deficit < INFEASIBLE:
            c = nearest_reducing(v, deficit)
            if c is None:
                add_virtual(v, int(deficit))
                deficit = _deficit(constraint, groups[v])
                break
            merge(v, c)
            deficit = _deficit(constraint, groups[v])
        if deficit > 0:
            unsatisfied.append(v)

    suppressed: list[int] = []
    for v in dict.fromkeys(unsatisfied):
        g = groups[v]
        if g is None or _deficit(constraint, g) == 0:
            continue
        suppressed.extend(_shed_violators(constraint, g, records, present))
        if not g.members:
            groups[v] = None
            alive[v] = False

    final = [g for g in groups if g is not None and g.members]
    virtual = [i for g in final for i in g.virtual]
    return final, sorted(suppressed), virtual


def _shed_violators(con: GroupingConstraint, g: _Group, records, present) -> list[int]:
    """Drop holders of violated transient values until the group is satisfied."""
    dropped: list[int] = []
    while g.members and _deficit(con, g) > 0:
        violated = set()
        for s, c in g.counts.items():
            r = g.hreq.get(s, con.base)
            if r is INFEASIBLE or math.ceil(max(r, con.base) * c) > g.size:
                violated.add(s)
        keep = [m for m in g.members if records[m].sensitive not in violated]
        dropped.extend(m for m in g.members if records[m].sensitive in violated)
        g.members = keep
        g.counts = dict(Counter(records[m].sensitive for m in keep if records[m].sensitive in con.transient))
        g.hreq = {}
        for m in keep:
            oid = records[m].individual_id
            for s in g.counts:
                if con.history.entries(oid, s):
                    r = con.required(oid, s)
                    g.hreq[s] = max(g.hreq[s], r) if s in g.hreq else r
    if not g.members:
        g.virtual.clear()
        g.virtual_values.clear()
    return dropped


# -- release ----------------------------------------------------------------


def anonymize_release(
    raw: MicroTable,
    history: LinkageHistory,
    params: PrivacyParams,
    registration: RegistrationList | None,
    transient_values: Iterable[str],
    seed: int,
) -> tuple[AnonymizedTable, LinkageHistory, AnonymizationReport]:
    """Anonymize one release and append it to the statistics file."""
    started = time.perf_counter()
    problems = validate_table(raw)
    if problems:
        raise ValueError("invalid release: " + "; ".join(p.detail for p in problems[:5]))
    transient = frozenset(transient_values)
    constraint = GroupingConstraint(history, params, transient)
    groups, suppressed, _ = grow_groups(raw, constraint, registration, seed)

    records = raw.records
    out_groups = []
    virtual_ids: list[str] = []
    for g in groups:
        member_recs = [records[m] for m in g.members]
        reg_entries = [registration.entries[i] for i in g.virtual] if g.virtual else []
        qids = [r.qid for r in member_recs] + [q for _, q in reg_entries]
        multiset = Counter(r.sensitive for r in member_recs)
        multiset.update(g.virtual_values)
        vids = [rid for rid, _ in reg_entries]
        virtual_ids.extend(vids)
        out_groups.append(
            AnonymizedGroup(
                member_ids=frozenset(r.individual_id for r in member_recs),
                generalized_qid=generalize_qids(qids, raw.schema),
                sensitive_multiset=dict(multiset),
                virtual_ids=frozenset(vids),
                virtual_sensitive=dict(Counter(g.virtual_values)),
            )
        )
    table = AnonymizedTable(raw.release_index, raw.schema, tuple(out_groups))
    new_history = record_release(history, table, transient)
    report = AnonymizationReport(
        release_index=raw.release_index,
        group_sizes=[g.size for g in out_groups],
        suppressed=[records[i].individual_id for i in suppressed],
        virtual_used=virtual_ids,
        duration_s=time.perf_counter() - started,
    )
    return table, new_history, report


# -- audit ------------------------------------------------------------------


@dataclass(frozen=True)
class AuditViolation:
    individual_id: str
    value: str
    probability: Fraction


def audit_release(
    table: AnonymizedTable | None,
    history_after: LinkageHistory,
    ell: int,
) -> list[AuditViolation]:
    """Every (individual, value) whose breach probability exceeds 1/ell."""
    out = []
    for (o, s), entries in history_after.items():
        if not within_threshold(entries, ell):
            out.append(AuditViolation(o, s, breach_probability(entries)))
    out.sort(key=lambda v: (v.individual_id, v.value))
    return out
