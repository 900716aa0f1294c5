"""Command-line front end.

Verbs: analyze, walk, query-box, age, fit, coverage, contributors, filter.
Exit codes: 0 success, 1 usage, 2 data not found/unusable, 3 parse failure
(strict mode). Reports go to stdout or --out; logs and cache statistics go
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .boxes import dump_boxes, rules_for_box
from .cache import WalkCache
from .config import DEFAULT_MACRO_GLOBS, DEFAULT_POLICY_GLOBS, RunConfig, default_cache_dir
from .errors import (
    BoxNotPresent,
    FewerThanTwoRows,
    InvalidKeyword,
    MissingWalkData,
    NonPositiveValue,
    OverlappingBuckets,
    PolicyError,
    RepoError,
    SegmentTooSmall,
)
from .gitmine import (
    CommitRecord,
    OrgMap,
    attribute_orgs,
    commit_records_json_lines,
    diff_token_index,
    linearize,
)
from .metrics import (
    CONTRIB_SCHEMA,
    FILTER_COLUMNS,
    FILTER_SCHEMA,
    AgePosition,
    MetricsRow,
    age_cdf_csv_lines,
    age_csv_lines,
    delta_csv_lines,
    delta_series,
    fit_csv_lines,
    fit_exponential,
    keyword_filter_metrics,
    metrics_csv_header,
    metrics_csv_row,
    parse_metrics_csv,
    type_age_cdf,
)
from .model import parse_box_line
from .pipeline import AnalysisResult, analyze_commit, analyze_dir, snapshot_from_file_set

log = logging.getLogger("sebox")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NOT_FOUND = 2
EXIT_PARSE = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        raise UsageError(message)


def _add_source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--repo", type=Path, help="path to a local policy git clone")
    p.add_argument("--dir", dest="policy_dir", type=Path,
                   help="analyze a plain policy directory instead of a repository")
    p.add_argument("--commit", help="commit to analyze (default: branch head)")
    p.add_argument("--branch", default="master", help="branch to follow (default: master)")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--policy-glob", action="append", dest="policy_globs", metavar="GLOB",
                   help=f"policy file glob, repeatable (default: {', '.join(DEFAULT_POLICY_GLOBS)})")
    p.add_argument("--macro-glob", action="append", dest="macro_globs", metavar="GLOB",
                   help=f"macro file glob, repeatable (default: {', '.join(DEFAULT_MACRO_GLOBS)})")
    p.add_argument("--strict", action="store_true",
                   help="abort on unknown symbols / syntax errors instead of skipping")
    p.add_argument("--cache-dir", type=Path,
                   help="walk cache directory (default: $SEBOX_CACHE_DIR or ~/.cache/sebox)")
    p.add_argument("--workers", type=int, default=1, help="worker pool size for the walk")


def _make_config(args: argparse.Namespace) -> RunConfig:
    try:
        return RunConfig(
            repo=getattr(args, "repo", None),
            policy_dir=getattr(args, "policy_dir", None),
            branch=getattr(args, "branch", "master"),
            policy_globs=tuple(args.policy_globs or DEFAULT_POLICY_GLOBS),
            macro_globs=tuple(args.macro_globs or DEFAULT_MACRO_GLOBS),
            strict=getattr(args, "strict", False),
            cache_dir=getattr(args, "cache_dir", None) or default_cache_dir(),
            workers=getattr(args, "workers", 1),
        )
    except ValueError as err:
        raise UsageError(str(err)) from None


def _emit(text: str, out: Path | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)


def _resolve_head(repo: Path, branch: str, commit: str | None) -> str:
    if commit:
        return commit
    records = linearize(repo, branch)
    if not records:
        raise RepoError(f"branch {branch} has no commits")
    return records[-1].hash


def _analyze_source(args: argparse.Namespace, config: RunConfig) -> AnalysisResult:
    if config.policy_dir is not None:
        return analyze_dir(config.policy_dir, config)
    if config.repo is None:
        raise UsageError("one of --dir or --repo is required")
    commit = _resolve_head(config.repo, config.branch, getattr(args, "commit", None))
    return analyze_commit(config.repo, commit, config)


# --- analyze ------------------------------------------------------------------


def cmd_analyze(args: argparse.Namespace) -> int:
    config = _make_config(args)
    result = _analyze_source(args, config)
    row = result.metrics
    if config.repo is not None and config.policy_dir is None:
        row.commit = _resolve_head(config.repo, config.branch, args.commit)
    if not result.snapshot.rules and not result.snapshot.types:
        log.warning("no policy content found; emitting zero metrics")
    for diag in result.diagnostics:
        log.debug("diagnostic: %s", diag)
    payload = row.to_json_dict()
    payload["diagnostics"] = len(result.diagnostics)
    _emit(json.dumps(payload, sort_keys=True, indent=2), args.out)
    if args.boxes_out is not None:
        args.boxes_out.parent.mkdir(parents=True, exist_ok=True)
        args.boxes_out.write_text(dump_boxes(result.decomposition.final_allow))
    return EXIT_OK


# --- walk ---------------------------------------------------------------------


@dataclass
class WalkOutput:
    metrics_lines: list[str]
    delta_lines: list[str]
    records: list[CommitRecord]
    failures: list[tuple[str, str]]
    cache_hits: int
    cache_misses: int


def _parse_range(spec: str | None, records: Sequence[CommitRecord]) -> tuple[int, int]:
    if not records:
        raise RepoError("branch has no commits")
    lo, hi = 0, len(records) - 1
    if spec:
        if ":" not in spec:
            raise UsageError("range must be START:END (indices or commit hashes)")
        start_s, end_s = spec.split(":", 1)

        def resolve(token: str, default: int) -> int:
            if not token:
                return default
            if token.isdigit():
                idx = int(token)
                if idx >= len(records):
                    raise UsageError(f"index {idx} out of range (history has {len(records)})")
                return idx
            matches = [r.commit_index for r in records if r.hash.startswith(token)]
            if not matches:
                from .errors import CommitNotFound

                raise CommitNotFound(f"no first-parent commit matches {token!r}")
            if len(matches) > 1:
                raise UsageError(f"ambiguous commit prefix {token!r}")
            return matches[0]

        lo = resolve(start_s, lo)
        hi = resolve(end_s, hi)
    if lo > hi:
        raise UsageError(f"range start {lo} > end {hi}")
    return lo, hi


def run_walk(
    config: RunConfig,
    range_spec: str | None = None,
    include_neverallow: bool = False,
) -> WalkOutput:
    """Cache-aware metrics walk over the linearized range."""
    if config.repo is None:
        raise UsageError("walk requires --repo")
    records = linearize(config.repo, config.branch)
    lo, hi = _parse_range(range_spec, records)
    selected = records[lo : hi + 1]

    cache = WalkCache(Path(config.cache_dir))
    digest = config.digest()

    def job(record: CommitRecord) -> tuple[MetricsRow | None, str | None]:
        row = cache.get(record.hash, digest)
        if row is None:
            try:
                result = analyze_commit(config.repo, record.hash, config)
            except PolicyError:
                if config.strict:
                    raise
                return None, "parse failure"
            row = result.metrics
            cache.put(
                record.hash, digest, row, result.decomposition.final_allow.to_lines()
            )
        # live linearization is authoritative for commit-position fields
        row.commit = record.hash
        row.commit_index = record.commit_index
        row.author_timestamp = record.author_timestamp
        return row, None

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(job, selected))
    else:
        outcomes = [job(r) for r in selected]

    metrics_lines = metrics_csv_header()
    ok_rows: list[MetricsRow] = []
    failures: list[tuple[str, str]] = []
    for record, (row, err) in zip(selected, outcomes):
        if row is None:
            failed = MetricsRow(
                commit=record.hash,
                commit_index=record.commit_index,
                author_timestamp=record.author_timestamp,
            )
            metrics_lines.append(metrics_csv_row(failed, status="failed"))
            failures.append((record.hash, err or "failed"))
        else:
            metrics_lines.append(metrics_csv_row(row))
            ok_rows.append(row)

    if len(ok_rows) >= 2:
        deltas, mean = delta_series(ok_rows, include_neverallow=include_neverallow)
        delta_lines = delta_csv_lines(deltas, mean)
    else:
        delta_lines = delta_csv_lines([], None)

    return WalkOutput(
        metrics_lines=metrics_lines,
        delta_lines=delta_lines,
        records=selected,
        failures=failures,
        cache_hits=cache.hits,
        cache_misses=cache.misses,
    )


def cmd_walk(args: argparse.Namespace) -> int:
    config = _make_config(args)
    output = run_walk(config, args.range, args.include_neverallow)
    _emit("\n".join(output.metrics_lines), args.out)
    if args.deltas_out is not None:
        _emit("\n".join(output.delta_lines), args.deltas_out)
    if args.commits_out is not None:
        _emit("\n".join(commit_records_json_lines(output.records)), args.commits_out)
    log.info(
        "walk: %d commits, %d failed, cache %d hits / %d misses",
        len(output.records),
        len(output.failures),
        output.cache_hits,
        output.cache_misses,
    )
    for commit, err in output.failures:
        log.warning("failed commit %s: %s", commit[:12], err)
    return EXIT_OK


# --- query-box ----------------------------------------------------------------


def cmd_query_box(args: argparse.Namespace) -> int:
    config = _make_config(args)
    try:
        box = parse_box_line(args.box)
    except ValueError as err:
        raise UsageError(str(err)) from None
    result = _analyze_source(args, config)
    provenances = rules_for_box(result.decomposition, box)
    lines = [f"box {box.to_line()}: {len(provenances)} contributing rule(s)"]
    for prov in provenances:
        chain = f" via {' > '.join(prov.macro_chain)}" if prov.macro_chain else ""
        lines.append(f"{prov.file}:{prov.line}{chain}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


# --- age ------------------------------------------------------------------------


def cmd_age(args: argparse.Namespace) -> int:
    config = _make_config(args)
    if config.repo is None:
        raise UsageError("age requires --repo")
    records = linearize(config.repo, config.branch)
    lo, hi = _parse_range(args.range, records)
    selected = records[lo : hi + 1]
    index = diff_token_index(config.repo, selected, config.policy_globs)

    head = selected[-1]
    result = analyze_commit(config.repo, head.hash, config)
    head_types = result.snapshot.concrete_types

    positions = (
        [AgePosition.SUBJECT, AgePosition.OBJECT]
        if args.position == "both"
        else [AgePosition(args.position)]
    )
    if args.cdf and len(positions) != 1:
        raise UsageError("--cdf requires --position subject or --position object")

    all_records = []
    for position in positions:
        recs, cdf = type_age_cdf(index, head.commit_index, head_types, position)
        skipped = len(head_types) - len(recs)
        if skipped:
            log.info("%d head types never referenced in range (%s position)", skipped, position.value)
        if args.cdf:
            _emit("\n".join(age_cdf_csv_lines(cdf)), args.out)
            return EXIT_OK
        all_records.extend(recs)
    _emit("\n".join(age_csv_lines(all_records)), args.out)
    return EXIT_OK


# --- fit ------------------------------------------------------------------------


_FIT_COLUMNS = {
    "boxes": lambda row, never: row.num_boxes,
    "rules": lambda row, never: row.num_allow_rules
    + (row.num_neverallow_rules if never else 0),
    "types": lambda row, never: row.num_types,
}


def cmd_fit(args: argparse.Namespace) -> int:
    if not args.walk_csv.exists():
        raise MissingWalkData(f"{args.walk_csv} not found; run `sebox walk` first")
    rows = parse_metrics_csv(args.walk_csv.read_text())
    extractor = _FIT_COLUMNS[args.column]
    points = [
        (row.commit_index, float(extractor(row, args.include_neverallow)))
        for row, status in rows
        if status == "ok" and row.commit_index is not None
    ]
    if not points:
        raise MissingWalkData(f"no usable rows in {args.walk_csv}")
    breakpoints = [int(b) for b in args.breakpoints.split(",")] if args.breakpoints else []
    segments = fit_exponential(points, breakpoints)
    _emit("\n".join(fit_csv_lines(segments)), args.out)
    return EXIT_OK


# --- coverage ---------------------------------------------------------------------


def cmd_coverage(args: argparse.Namespace) -> int:
    config = _make_config(args)
    result = _analyze_source(args, config)
    deco = result.decomposition
    named = len(deco.allow.boxes | deco.neverallow.boxes)
    row = result.metrics
    universe = row.num_types * row.num_types * row.num_permissions
    payload = {
        "num_types": row.num_types,
        "num_permissions": row.num_permissions,
        "universe": universe,
        "named_boxes": named,
        "allow_boxes": len(deco.allow),
        "neverallow_boxes": len(deco.neverallow),
        "coverage_ratio": row.coverage_ratio,
    }
    _emit(json.dumps(payload, sort_keys=True, indent=2), args.out)
    return EXIT_OK


# --- contributors -------------------------------------------------------------------


def _parse_buckets(spec: str | None) -> list[tuple[str, int, int]] | None:
    if not spec:
        return None
    buckets = []
    for item in spec.split(","):
        parts = item.split(":")
        if len(parts) != 3:
            raise UsageError("bucket spec must be label:start:end[,label:start:end...]")
        label, start, end = parts
        try:
            buckets.append((label, int(start), int(end)))
        except ValueError:
            raise UsageError(f"bucket indices must be integers: {item!r}") from None
    return buckets


def cmd_contributors(args: argparse.Namespace) -> int:
    config = _make_config(args)
    if config.repo is None:
        raise UsageError("contributors requires --repo")
    records = linearize(config.repo, config.branch)
    lo, hi = _parse_range(args.range, records)
    org_map = OrgMap.load(args.org_map) if args.org_map else OrgMap({})
    buckets = _parse_buckets(args.buckets)
    report = attribute_orgs(records[lo : hi + 1], org_map, buckets)

    lines = [CONTRIB_SCHEMA]
    labels = [label for label, _, _ in buckets] if buckets else []
    lines.append(",".join(["organization", *labels, "total"]))
    for org in sorted(report.totals, key=lambda o: (-report.totals[o], o)):
        cells = [org]
        for label in labels:
            cells.append(str((report.buckets or {}).get(label, {}).get(org, 0)))
        cells.append(str(report.totals[org]))
        lines.append(",".join(cells))
    _emit("\n".join(lines), args.out)
    return EXIT_OK


# --- filter ---------------------------------------------------------------------------


def cmd_filter(args: argparse.Namespace) -> int:
    config = _make_config(args)
    keywords = tuple(args.keywords or ())
    if not keywords:
        raise UsageError("at least one --keyword is required")

    lines = [FILTER_SCHEMA, ",".join(FILTER_COLUMNS)]
    if args.range is not None:
        if config.repo is None:
            raise UsageError("--range requires --repo")
        records = linearize(config.repo, config.branch)
        lo, hi = _parse_range(args.range, records)
        for record in records[lo : hi + 1]:
            result = analyze_commit(config.repo, record.hash, config)
            boxes, rules = keyword_filter_metrics(result.decomposition, keywords)
            lines.append(f"{record.hash},{record.commit_index},{boxes},{rules}")
    else:
        result = _analyze_source(args, config)
        commit = ""
        if config.repo is not None and config.policy_dir is None:
            commit = _resolve_head(config.repo, config.branch, args.commit)
        boxes, rules = keyword_filter_metrics(result.decomposition, keywords)
        lines.append(f"{commit},,{boxes},{rules}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


# --- parser / entry point ----------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="sebox",
        description="Decompose type-enforcement policy into atomic access boxes "
        "and mine complexity metrics from a policy git history.",
        epilog="CSV schemas carry a '# sebox <report> v1' comment line followed by "
        "a fixed header row; rationals use 6 significant digits.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="full pipeline on one snapshot, JSON metrics out")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--out", type=Path)
    p.add_argument("--boxes-out", type=Path, help="also write the canonical sorted box dump")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("walk", help="per-commit metrics CSV + delta CSV over a range")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--range", help="START:END as linearized indices or commit hashes")
    p.add_argument("--include-neverallow", action="store_true",
                   help="count neverallow rules in the delta rule count")
    p.add_argument("--out", type=Path, help="metrics CSV path (default stdout)")
    p.add_argument("--deltas-out", type=Path, help="delta CSV path")
    p.add_argument("--commits-out", type=Path, help="CommitRecord JSON-lines path")
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("query-box", help="rules contributing a given box")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("box", help="four-token box spec: 'subject object class perm'")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_query_box)

    p = sub.add_parser("age", help="type age records / CDF from diff history")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--range", help="START:END range for the history scan")
    p.add_argument("--position", choices=["subject", "object", "both"], default="both")
    p.add_argument("--cdf", action="store_true", help="emit CDF points instead of records")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_age)

    p = sub.add_parser("fit", help="segmented exponential fit over walk output")
    p.add_argument("--walk-csv", type=Path, required=True, help="metrics CSV from `sebox walk`")
    p.add_argument("--column", choices=sorted(_FIT_COLUMNS), default="boxes")
    p.add_argument("--breakpoints", help="comma-separated interior commit indices")
    p.add_argument("--include-neverallow", action="store_true")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("coverage", help="box-universe coverage of one snapshot")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("contributors", help="commit counts per contributing organization")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--range")
    p.add_argument("--org-map", type=Path, help="domain<TAB>organization table")
    p.add_argument("--buckets", help="release buckets: label:start:end[,label:start:end...]")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_contributors)

    p = sub.add_parser("filter", help="keyword-filtered box/rule counts")
    _add_source_args(p)
    _add_config_args(p)
    p.add_argument("--keyword", action="append", dest="keywords", required=True)
    p.add_argument("--range", help="walk a commit range instead of one snapshot")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_filter)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s")
    try:
        args = parser.parse_args(argv)
        log.setLevel(logging.DEBUG if args.verbose else logging.INFO)
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidKeyword, OverlappingBuckets) as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (RepoError, BoxNotPresent, MissingWalkData, NonPositiveValue,
            SegmentTooSmall, FewerThanTwoRows, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NOT_FOUND
    except PolicyError as err:
        print(f"parse error: {err}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
