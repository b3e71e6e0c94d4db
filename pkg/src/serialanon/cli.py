"""Command-line entry point: ``serialanon <command> ...``.

Exit codes: 0 success (or guarantee holds), 1 guarantee violation,
2 usage or format error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

from filelock import FileLock, Timeout

from . import io
from .anonymizer import anonymize_release, audit_release
from .errors import SerialAnonError
from .model import STRATEGIES, PrivacyParams
from .probability import breach_probability, breach_probability_oracle, DEFAULT_BUDGET
from .seriesgen import SeriesSpec, generate_series
from .strategy import ratio_schedule
from .utility import Domain, evaluate, generate_queries

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

_SPEC_FIELDS = {
    "total_records": int,
    "num_releases": int,
    "carry_fraction": float,
    "resample_fraction": float,
    "transient_quantile": float,
    "domain_size": int,
    "zipf_exponent": float,
    "registration_pool_size": int,
}


class UsageError(Exception):
    pass


def _ratio_text(x: Fraction) -> str:
    """Exact ratios print as integers or short decimals; others to 6 places."""
    if x.denominator == 1:
        return str(x.numerator)
    as_float = float(x)
    short = repr(as_float)
    if Fraction(short) == x:
        return short
    return f"{as_float:.6f}"


# -- commands ---------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    doc = io.load_json(args.spec) if args.spec else {}
    unknown = set(doc) - set(_SPEC_FIELDS) - {"seed"}
    if unknown:
        raise UsageError(f"unknown spec fields: {sorted(unknown)}")
    fields = {k: conv(doc[k]) for k, conv in _SPEC_FIELDS.items() if k in doc}
    spec = SeriesSpec(seed=args.seed, **fields)
    series = generate_series(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for table in series.tables:
        io.write_micro_csv(table, out / f"T_{table.release_index}.csv")
    io.write_registration_csv(series.registration, out / "registration.csv")
    (out / "transient.txt").write_text("".join(v + "\n" for v in sorted(series.transient)), encoding="utf-8")
    print(f"wrote {len(series.tables)} releases to {out}")
    return EXIT_OK


def _transient_set(args: argparse.Namespace, doc: dict, raw) -> frozenset[str]:
    if args.transient:
        return frozenset(io.read_lines(args.transient))
    if "transient" in doc:
        return frozenset(str(v) for v in doc["transient"])
    # without a declared set every sensitive value is treated as transient
    return frozenset(r.sensitive for r in raw.records)


def cmd_anonymize(args: argparse.Namespace) -> int:
    doc = io.load_json(args.params)
    params, seed = io.params_from_dict(doc)
    raw = io.read_micro_csv(args.release, args.release_index)
    registration = io.read_registration_csv(args.registration, raw.schema) if args.registration else None
    transient = _transient_set(args, doc, raw)
    lock = FileLock(str(args.stats) + ".lock")
    try:
        with lock.acquire(timeout=args.lock_timeout):
            history = io.read_statistics(args.stats)
            if history.last_release >= raw.release_index:
                raise UsageError(
                    f"statistics file already covers release {history.last_release}; "
                    f"refusing to anonymize release {raw.release_index}"
                )
            table, history, report = anonymize_release(raw, history, params, registration, transient, seed)
            io.write_anonymized_csv(table, args.out)
            io.write_statistics(history, args.stats)
    except Timeout:
        raise UsageError(f"statistics file {args.stats} is locked by another process")
    if args.report:
        io.write_json(report.to_dict(), args.report)
    print(
        f"release {raw.release_index}: {report.groups_formed} groups, "
        f"{len(report.suppressed)} suppressed, {len(report.virtual_used)} virtual"
    )
    return EXIT_OK


def cmd_audit(args: argparse.Namespace) -> int:
    history = io.read_statistics(args.stats)
    violations = audit_release(None, history, args.ell)
    for v in violations:
        print(f"{v.individual_id},{v.value},{v.probability}")
    if violations:
        print(f"{len(violations)} violation(s) of 1/{args.ell}", file=sys.stderr)
        return EXIT_VIOLATION
    print(f"ok: {len(history)} linked pairs within 1/{args.ell}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    scenario = io.scenario_from_dict(io.load_json(args.scenario))
    closed = breach_probability(scenario.linked_pairs())
    oracle = breach_probability_oracle(scenario, budget=args.budget)
    print(json.dumps({"closed_form": str(closed), "oracle": str(oracle), "equal": closed == oracle}))
    return EXIT_OK if closed == oracle else EXIT_VIOLATION


def cmd_evaluate(args: argparse.Namespace) -> int:
    raw = io.read_micro_csv(args.raw)
    anon = io.read_anonymized_csv(args.anon)
    queries = generate_queries(Domain.of(raw), args.queries, args.seed)
    report = evaluate(raw, anon, queries, k_param=args.k_param)
    if args.format == "json":
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(",".join(report.FIELDS))
        print(",".join(str(getattr(report, f)) for f in report.FIELDS))
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace) -> int:
    params = PrivacyParams(
        ell=args.ell,
        strategy=args.strategy,
        k_prime=args.k_prime,
        alpha=Fraction(args.alpha) if args.alpha is not None else None,
    )
    print("k,ratio,size")
    for row in ratio_schedule(params, args.releases):
        print(f"{row.k},{_ratio_text(row.ratio)},{row.size}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="serialanon", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic release series")
    p.add_argument("--spec", help="JSON file overriding series parameters")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("anonymize", help="anonymize one release and update the statistics file")
    p.add_argument("--release", required=True)
    p.add_argument("--release-index", type=int, help="override the index in the CSV header")
    p.add_argument("--stats", required=True)
    p.add_argument("--params", required=True, help="JSON with ell, strategy, k_prime|alpha, seed")
    p.add_argument("--registration")
    p.add_argument("--transient", help="file listing transient sensitive values, one per line")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--lock-timeout", type=float, default=10.0)
    p.set_defaults(func=cmd_anonymize)

    p = sub.add_parser("audit", help="check every linked pair against 1/ell")
    p.add_argument("--stats", required=True)
    p.add_argument("--ell", type=int, required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("verify", help="compare the closed form with the possible-world oracle")
    p.add_argument("--scenario", required=True)
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="utility of an anonymized release")
    p.add_argument("--raw", required=True)
    p.add_argument("--anon", required=True)
    p.add_argument("--queries", type=int, default=5000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--k-param", type=float, default=1.0, help="divisor for the normalized group size")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("schedule", help="print the ratio trend as CSV")
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--k-prime", type=int)
    p.add_argument("--alpha")
    p.add_argument("--releases", type=int, required=True)
    p.set_defaults(func=cmd_schedule)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, SerialAnonError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
