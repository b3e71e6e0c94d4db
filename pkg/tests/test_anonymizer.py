from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from serialanon.anonymizer import anonymize_release, audit_release, generalize_qids
from serialanon.model import (
    CATEGORICAL,
    NUMERIC,
    STRING,
    AnonymizedGroup,
    AnonymizedTable,
    Attribute,
    GroupConfig,
    LinkageHistory,
    MicroRecord,
    MicroTable,
    PrivacyParams,
    RegistrationList,
    Schema,
    record_release,
)
from serialanon.probability import OracleRelease, OracleScenario, breach_probability, breach_probability_oracle

CLINIC_SCHEMA = Schema((Attribute("sex", CATEGORICAL), Attribute("zipcode", STRING)), sensitive="disease")
GEO2 = PrivacyParams(2, "geometric", alpha=2)


def clinic_t1() -> MicroTable:
    rows = [("o1", "M", "65001", "flu"), ("o2", "M", "65002", "chlamydia"), ("o3", "F", "65014", "flu"), ("o4", "F", "65015", "fever")]
    return MicroTable(1, CLINIC_SCHEMA, tuple(MicroRecord(i, (s, z), d) for i, s, z, d in rows))


def _table(index, groups, qid=("*", "*")):
    out = []
    for members in groups:
        ms = {}
        for _, v in members:
            ms[v] = ms.get(v, 0) + 1
        out.append(AnonymizedGroup(frozenset(m for m, _ in members), qid, ms))
    return AnonymizedTable(index, CLINIC_SCHEMA, tuple(out))


# -- anonymize_release -----------------------------------------------------------


def test_clinic_single_group_of_four():
    table, history, report = anonymize_release(clinic_t1(), LinkageHistory(), GEO2, None, {"chlamydia"}, seed=0)
    assert [g.size for g in table.groups] == [4]
    assert table.groups[0].generalized_qid == ("M/F", "650**")
    assert history[("o2", "chlamydia")][0] == (1, 4, 1)
    assert report.suppressed == []


def test_infeasible_individual_is_suppressed():
    # [(2,1)] at ell=2 leaves no ratio that keeps o2 within 1/2
    history = LinkageHistory({("o2", "chlamydia"): [(1, 2, 1)]})
    raw = MicroTable(2, CLINIC_SCHEMA, clinic_t1().records)
    table, after, report = anonymize_release(raw, history, GEO2, None, {"chlamydia"}, seed=0)
    assert report.suppressed == ["o2"]
    assert table.member_ids() == {"o1", "o3", "o4"}
    assert audit_release(table, after, 2) == []


def test_no_transient_values_gives_singletons():
    table, history, _ = anonymize_release(clinic_t1(), LinkageHistory(), GEO2, None, {"hiv"}, seed=0)
    assert sorted(g.size for g in table.groups) == [1, 1, 1, 1]
    assert len(history) == 0


def test_two_singletons_merge():
    raw = MicroTable(1, CLINIC_SCHEMA, (MicroRecord("a", ("M", "65001"), "chlamydia"), MicroRecord("b", ("F", "65002"), "flu")))
    params = PrivacyParams(2, "constant_ratio", k_prime=1)
    table, _, _ = anonymize_release(raw, LinkageHistory(), params, None, {"chlamydia"}, seed=0)
    assert [g.size for g in table.groups] == [2]


def test_registration_fills_group_of_nine():
    values = ["s", "a", "b", "c", "d", "e"]
    raw = MicroTable(1, CLINIC_SCHEMA, tuple(MicroRecord(f"o{i}", ("M", f"6500{i}"), v) for i, v in enumerate(values)))
    reg = RegistrationList(CLINIC_SCHEMA, tuple((f"r{i}", ("M", f"6501{i}")) for i in range(3)))
    params = PrivacyParams(9, "constant_ratio", k_prime=1)
    table, after, report = anonymize_release(raw, LinkageHistory(), params, reg, {"s"}, seed=3)
    (g,) = table.groups
    assert g.size == 9 and len(g.virtual_ids) == 3
    assert g.count("s") == 1
    assert sorted(report.virtual_used) == ["r0", "r1", "r2"]
    assert breach_probability(after.pairs("o0", "s")) == Fraction(1, 9)
    assert not any(o.startswith("r") for o, _ in after)


def test_uniform_transient_release_is_suppressed():
    raw = MicroTable(1, CLINIC_SCHEMA, tuple(MicroRecord(f"o{i}", ("M", f"6500{i}"), "s") for i in range(5)))
    params = PrivacyParams(2, "constant_ratio", k_prime=1)
    table, _, report = anonymize_release(raw, LinkageHistory(), params, None, {"s"}, seed=0)
    assert table.groups == ()
    assert sorted(report.suppressed) == [f"o{i}" for i in range(5)]


def test_deterministic_given_seed():
    values = ["s", "a", "b", "c", "d", "e"]
    raw = MicroTable(1, CLINIC_SCHEMA, tuple(MicroRecord(f"o{i}", ("M", f"6500{i}"), v) for i, v in enumerate(values)))
    reg = RegistrationList(CLINIC_SCHEMA, tuple((f"r{i}", ("M", f"6501{i}")) for i in range(6)))
    params = PrivacyParams(9, "constant_ratio", k_prime=1)
    runs = [anonymize_release(raw, LinkageHistory(), params, reg, {"s"}, seed=11)[:2] for _ in range(2)]
    assert runs[0] == runs[1]


# -- generalize_qids -------------------------------------------------------------


def test_generalize_examples():
    schema = Schema((Attribute("zip", STRING),))
    assert generalize_qids([("65001",), ("65002",)], schema) == ("6500*",)
    assert generalize_qids([("M",), ("F",)], Schema((Attribute("sex", CATEGORICAL),))) == ("M/F",)
    mixed = Schema((Attribute("age", NUMERIC), Attribute("zip", STRING), Attribute("sex", CATEGORICAL)))
    assert generalize_qids([(30, "65001", "M")], mixed) == ("30", "65001", "M")
    assert generalize_qids([(30, "65001", "M"), (41, "6500", "M")], mixed) == ("30-41", "*", "M")


def test_generalize_empty_group():
    with pytest.raises(ValueError):
        generalize_qids([], CLINIC_SCHEMA)


# -- audit -----------------------------------------------------------------------


def _history(*tables):
    h = LinkageHistory()
    for t in tables:
        h = record_release(h, t, {"chlamydia"})
    return h


def test_audit_groups_of_two_violates():
    t1 = _table(1, [[("o1", "flu"), ("o2", "chlamydia")], [("o3", "flu"), ("o4", "fever")]])
    t2 = _table(2, [[("o1", "chlamydia"), ("o2", "flu")], [("o3", "fever"), ("o5", "flu")]])
    violations = audit_release(t2, _history(t1, t2), 2)
    found = {(v.individual_id, v.value): v.probability for v in violations}
    assert found[("o2", "chlamydia")] == Fraction(3, 4)


def test_audit_groups_of_four_clean():
    t1 = _table(1, [[("o1", "flu"), ("o2", "chlamydia"), ("o3", "flu"), ("o4", "fever")]])
    t2 = _table(2, [[("o1", "chlamydia"), ("o2", "flu"), ("o3", "fever"), ("o5", "flu")]])
    h = _history(t1, t2)
    assert audit_release(t2, h, 2) == []
    assert breach_probability(h.pairs("o2", "chlamydia")) == Fraction(7, 16)


def test_audit_empty():
    assert audit_release(None, LinkageHistory(), 2) == []


# -- soundness over random series ------------------------------------------------------

QID_SCHEMA = Schema((Attribute("age", NUMERIC), Attribute("zip", STRING), Attribute("sex", CATEGORICAL)))

record_st = st.tuples(st.integers(0, 9), st.sampled_from(["6500", "6501", "6510"]), st.sampled_from("MF"), st.sampled_from("stuvwx"))


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.lists(record_st, min_size=1, max_size=12), min_size=1, max_size=3),
    st.sampled_from([PrivacyParams(2, "geometric", alpha=2), PrivacyParams(3, "constant_ratio", k_prime=3)]),
    st.booleans(),
    st.integers(0, 5),
)
def test_output_always_passes_audit(series, params, with_registration, seed):
    reg = RegistrationList(QID_SCHEMA, tuple((f"r{i}", (i % 10, "6502", "MF"[i % 2])) for i in range(8)))
    history = LinkageHistory()
    for k, rows in enumerate(series, start=1):
        # ids drawn from a small pool so individuals recur across releases
        recs = {}
        for j, (age, zp, sex, s) in enumerate(rows):
            recs.setdefault(f"o{(j * 7 + k) % 9}", MicroRecord(f"o{(j * 7 + k) % 9}", (age, zp + str(j % 10), sex), s))
        raw = MicroTable(k, QID_SCHEMA, tuple(recs.values()))
        table, history, report = anonymize_release(raw, history, params, reg if with_registration else None, {"s", "t"}, seed)
        assert audit_release(table, history, params.ell) == []
        assert table.member_ids() | set(report.suppressed) == raw.ids()
        assert not table.member_ids() & set(report.suppressed)


def test_audit_agrees_with_oracle_on_small_output():
    t1 = clinic_t1()
    t2 = MicroTable(2, CLINIC_SCHEMA, tuple(MicroRecord(r.individual_id, r.qid, v) for r, v in zip(t1.records, ["chlamydia", "flu", "fever", "flu"])))
    history = LinkageHistory()
    tables = []
    for raw in (t1, t2):
        table, history, _ = anonymize_release(raw, history, GEO2, None, {"chlamydia"}, seed=0)
        tables.append(table)
    for (o, s), entries in history.items():
        releases = []
        for t in tables:
            for g in t.groups:
                if o in g.member_ids:
                    releases.append(OracleRelease(GroupConfig.of(dict(g.sensitive_multiset)), True))
        oracle = breach_probability_oracle(OracleScenario(tuple(releases), s))
        assert oracle == breach_probability(entries) <= Fraction(1, 2)
