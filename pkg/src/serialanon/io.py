"""On-disk formats.

CSV files start with a ``#`` comment line of ``key=value`` tokens naming the
format, version, release index and attribute kinds, followed by an ordinary
RFC-4180 header row. The statistics file and all parameter/report documents
are JSON with a ``version`` field.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections import Counter, defaultdict
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from .errors import FormatError
from .model import (
    ATTRIBUTE_KINDS,
    CATEGORICAL,
    NUMERIC,
    AnonymizedGroup,
    AnonymizedTable,
    Attribute,
    GroupConfig,
    HistoryEntry,
    LinkageHistory,
    MicroRecord,
    MicroTable,
    PrivacyParams,
    RegistrationList,
    Schema,
)
from .probability import OracleRelease, OracleScenario

FORMAT_VERSION = 1
STATS_VERSION = 1


def _comment(kind: str, schema: Schema, release: int | None = None) -> str:
    tokens = [f"serialanon-{kind}", f"version={FORMAT_VERSION}"]
    if release is not None:
        tokens.append(f"release={release}")
    tokens.append("kinds=" + ",".join(schema.kinds))
    return "# " + " ".join(tokens) + "\n"


def _parse_comment(line: str) -> dict[str, str]:
    meta = {}
    for token in line.lstrip("#").split():
        if "=" in token:
            k, v = token.split("=", 1)
            meta[k] = v
        else:
            meta["format"] = token
    return meta


def _split_source(text: str) -> tuple[dict[str, str], list[list[str]]]:
    if not text.strip():
        raise FormatError("empty file")
    meta: dict[str, str] = {}
    body = text
    if text.startswith("#"):
        first, _, body = text.partition("\n")
        meta = _parse_comment(first)
        if meta.get("version", str(FORMAT_VERSION)) != str(FORMAT_VERSION):
            raise FormatError(f"unsupported format version {meta['version']}")
    rows = list(csv.reader(io.StringIO(body)))
    rows = [r for r in rows if r]
    if not rows:
        raise FormatError("missing header row")
    return meta, rows


def _kinds(meta: dict[str, str], count: int, sample: list[list[str]]) -> list[str]:
    if "kinds" in meta:
        kinds = meta["kinds"].split(",") if meta["kinds"] else []
        if len(kinds) != count or any(k not in ATTRIBUTE_KINDS for k in kinds):
            raise FormatError(f"kinds {meta['kinds']!r} do not match {count} qid columns")
        return kinds
    kinds = []
    for j in range(count):
        column = [row[j] for row in sample]
        numeric = all(_is_int(v) for v in column) and column
        kinds.append(NUMERIC if numeric else CATEGORICAL)
    return kinds


def _is_int(v: str) -> bool:
    try:
        int(v)
    except ValueError:
        return False
    return True


def _typed(value: str, kind: str):
    if kind == NUMERIC:
        try:
            return int(value)
        except ValueError as exc:
            raise FormatError(f"non-integer value {value!r} in numeric column") from exc
    return value


def _write_text(path: str | Path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="")


def _csv_text(comment: str, header: list[str], rows: Iterable[list]) -> str:
    buf = io.StringIO()
    buf.write(comment)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- micro tables -----------------------------------------------------------


def micro_to_csv(table: MicroTable) -> str:
    header = ["id", *table.schema.names, table.schema.sensitive]
    rows = ([r.individual_id, *r.qid, r.sensitive] for r in table.records)
    return _csv_text(_comment("micro", table.schema, table.release_index), header, rows)


def micro_from_csv(text: str, release_index: int | None = None) -> MicroTable:
    meta, rows = _split_source(text)
    header, data = rows[0], rows[1:]
    if len(header) < 2 or header[0] != "id":
        raise FormatError("micro header must be id,<qid...>,<sensitive>")
    names = header[1:-1]
    for row in data:
        if len(row) != len(header):
            raise FormatError(f"row {row!r} has {len(row)} fields, header has {len(header)}")
    kinds = _kinds(meta, len(names), [r[1:-1] for r in data])
    schema = Schema(tuple(Attribute(n, k) for n, k in zip(names, kinds)), header[-1])
    if release_index is None:
        release_index = int(meta.get("release", 1))
    records = tuple(
        MicroRecord(row[0], tuple(_typed(v, k) for v, k in zip(row[1:-1], kinds)), row[-1]) for row in data
    )
    return MicroTable(release_index, schema, records)


def write_micro_csv(table: MicroTable, path: str | Path) -> None:
    _write_text(path, micro_to_csv(table))


def read_micro_csv(path: str | Path, release_index: int | None = None) -> MicroTable:
    return micro_from_csv(Path(path).read_text(encoding="utf-8"), release_index)


# -- anonymized tables ------------------------------------------------------


def anonymized_to_csv(table: AnonymizedTable) -> str:
    header = ["group_id", *table.schema.names, table.schema.sensitive, "virtual"]
    rows = []
    for gid, g in enumerate(table.groups):
        real = Counter(g.sensitive_multiset)
        real.subtract(g.virtual_sensitive)
        for value in sorted(real.elements()):
            rows.append([gid, *g.generalized_qid, value, 0])
        for value in sorted(Counter(g.virtual_sensitive).elements()):
            rows.append([gid, *g.generalized_qid, value, 1])
    return _csv_text(_comment("anonymized", table.schema, table.release_index), header, rows)


def anonymized_from_csv(text: str) -> AnonymizedTable:
    """Parse a published table; member ids are synthesized as ``<group>#<row>``."""
    meta, rows = _split_source(text)
    header, data = rows[0], rows[1:]
    if len(header) < 3 or header[0] != "group_id" or header[-1] != "virtual":
        raise FormatError("anonymized header must be group_id,<qid...>,<sensitive>,virtual")
    if len(set(header)) != len(header):
        raise FormatError("duplicate column names")
    names = header[1:-2]
    if "kinds" in meta and len(meta["kinds"].split(",")) != len(names):
        raise FormatError(f"unexpected column layout {header!r}")
    kinds = _kinds(meta, len(names), [])
    schema = Schema(tuple(Attribute(n, k) for n, k in zip(names, kinds)), header[-2])
    by_group: dict[str, list[list[str]]] = defaultdict(list)
    order: list[str] = []
    for row in data:
        if len(row) != len(header):
            raise FormatError(f"row {row!r} has {len(row)} fields, header has {len(header)}")
        if row[-1] not in ("0", "1"):
            raise FormatError(f"virtual flag must be 0 or 1, got {row[-1]!r}")
        if row[0] not in by_group:
            order.append(row[0])
        by_group[row[0]].append(row)
    groups = []
    for gid in order:
        grp = by_group[gid]
        qid = tuple(grp[0][1:-2])
        if any(tuple(r[1:-2]) != qid for r in grp):
            raise FormatError(f"group {gid} rows disagree on generalized qids")
        members, virtual = [], []
        multiset: Counter = Counter()
        vmult: Counter = Counter()
        for i, r in enumerate(grp):
            multiset[r[-2]] += 1
            if r[-1] == "1":
                virtual.append(f"{gid}#v{i}")
                vmult[r[-2]] += 1
            else:
                members.append(f"{gid}#{i}")
        groups.append(AnonymizedGroup(frozenset(members), qid, dict(multiset), frozenset(virtual), dict(vmult)))
    release = int(meta.get("release", 1))
    return AnonymizedTable(release, schema, tuple(groups))


def write_anonymized_csv(table: AnonymizedTable, path: str | Path) -> None:
    _write_text(path, anonymized_to_csv(table))


def read_anonymized_csv(path: str | Path) -> AnonymizedTable:
    return anonymized_from_csv(Path(path).read_text(encoding="utf-8"))


# -- registration list ------------------------------------------------------


def write_registration_csv(reg: RegistrationList, path: str | Path) -> None:
    header = ["id", *reg.schema.names]
    rows = ([rid, *qid] for rid, qid in reg.entries)
    _write_text(path, _csv_text(_comment("registration", reg.schema), header, rows))


def read_registration_csv(path: str | Path, schema: Schema | None = None) -> RegistrationList:
    meta, rows = _split_source(Path(path).read_text(encoding="utf-8"))
    header, data = rows[0], rows[1:]
    if not header or header[0] != "id":
        raise FormatError("registration header must be id,<qid...>")
    names = header[1:]
    if schema is not None:
        if tuple(names) != schema.names:
            raise FormatError(f"registration columns {names} do not match release columns {list(schema.names)}")
        kinds = list(schema.kinds)
    else:
        kinds = _kinds(meta, len(names), [r[1:] for r in data])
        schema = Schema(tuple(Attribute(n, k) for n, k in zip(names, kinds)))
    entries = []
    for row in data:
        if len(row) != len(header):
            raise FormatError(f"row {row!r} has {len(row)} fields, header has {len(header)}")
        entries.append((row[0], tuple(_typed(v, k) for v, k in zip(row[1:], kinds))))
    return RegistrationList(schema, tuple(entries))


# -- statistics file --------------------------------------------------------


def atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def statistics_to_json(history: LinkageHistory) -> str:
    entries = {}
    for (o, s), items in sorted(history.items()):
        if "|" in o:
            raise FormatError(f"individual id {o!r} contains the key separator '|'")
        entries[f"{o}|{s}"] = [{"release": e.release, "n": e.n, "n_s": e.n_s} for e in items]
    doc = {"version": STATS_VERSION, "last_release": history.last_release, "entries": entries}
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def statistics_from_json(text: str) -> LinkageHistory:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"statistics file is not JSON: {exc}") from exc
    if doc.get("version") != STATS_VERSION:
        raise FormatError(f"unsupported statistics version {doc.get('version')!r}")
    data = {}
    for key, items in doc.get("entries", {}).items():
        o, sep, s = key.partition("|")
        if not sep:
            raise FormatError(f"malformed statistics key {key!r}")
        try:
            data[(o, s)] = [HistoryEntry(int(e["release"]), int(e["n"]), int(e["n_s"])) for e in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed entries under {key!r}") from exc
    try:
        return LinkageHistory(data, int(doc.get("last_release", 0)))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def read_statistics(path: str | Path) -> LinkageHistory:
    """Load the statistics file; a missing or empty file is an empty history."""
    path = Path(path)
    if not path.exists() or not path.read_text(encoding="utf-8").strip():
        return LinkageHistory()
    return statistics_from_json(path.read_text(encoding="utf-8"))


def write_statistics(history: LinkageHistory, path: str | Path) -> None:
    atomic_write(path, statistics_to_json(history))


# -- JSON documents ---------------------------------------------------------


def load_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_json(doc: dict, path: str | Path) -> None:
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=False) + "\n")


def params_from_dict(doc: dict) -> tuple[PrivacyParams, int]:
    """Return (params, seed); ``seed`` is mandatory."""
    if "seed" not in doc:
        raise FormatError("params must include a seed")
    try:
        alpha = doc.get("alpha")
        params = PrivacyParams(
            ell=int(doc["ell"]),
            strategy=doc.get("strategy", "geometric"),
            k_prime=int(doc["k_prime"]) if doc.get("k_prime") is not None else None,
            alpha=Fraction(str(alpha)) if alpha is not None else None,
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid params: {exc}") from exc
    return params, int(doc["seed"])


def scenario_from_dict(doc: dict) -> OracleScenario:
    try:
        releases = tuple(
            OracleRelease(GroupConfig.of({str(k): int(v) for k, v in r["counts"].items()}), bool(r.get("target_in_group", True)))
            for r in doc["releases"]
        )
        return OracleScenario(releases, str(doc["target"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid scenario: {exc}") from exc


def read_lines(path: str | Path) -> list[str]:
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]


def schema_from_dict(doc: dict) -> Schema:
    attrs = tuple(Attribute(a["name"], a.get("kind", CATEGORICAL), a.get("alphabet", "0123456789")) for a in doc["attributes"])
    return Schema(attrs, doc.get("sensitive", "sensitive"))
