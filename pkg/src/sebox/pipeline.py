"""Orchestration: file collection -> macro expansion -> parse -> decompose.

Works identically over a plain directory (``--dir`` fixtures) and a Git
commit, so every CLI command and test can share one path from raw files to
a metrics row.
"""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .boxes import DecompositionResult, decompose_snapshot
from .config import RunConfig
from .gitmine import extract_snapshot_files, path_matches
from .macros import MacroTable, expand, load_macros
from .metrics import MetricsRow, snapshot_metrics
from .parser import PolicySnapshot, PolicySource, build_snapshot


@dataclass
class AnalysisResult:
    snapshot: PolicySnapshot
    decomposition: DecompositionResult
    metrics: MetricsRow
    macro_table: MacroTable
    diagnostics: list[str]


def collect_dir_files(root: Path | str, config: RunConfig) -> list[tuple[str, str]]:
    """Matching files under a plain directory, repo-relative, sorted."""
    base = Path(root)
    out: list[tuple[str, str]] = []
    for path in sorted(base.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(base).as_posix()
        if path_matches(rel, config.all_globs):
            out.append((rel, path.read_text(encoding="utf-8", errors="replace")))
    return out


def collect_commit_files(
    repo: Path | str, commit: str, config: RunConfig, diagnostics: list[str] | None = None
) -> list[tuple[str, str]]:
    return extract_snapshot_files(repo, commit, config.all_globs, diagnostics=diagnostics)


def snapshot_from_file_set(
    files: Sequence[tuple[str, str]], config: RunConfig
) -> tuple[PolicySnapshot, MacroTable, list[str]]:
    """Classify, expand and parse one snapshot's file set."""
    diagnostics: list[str] = []
    macro_sources: list[tuple[str, str]] = []
    av_sources: list[tuple[str, str]] = []
    sc_sources: list[tuple[str, str]] = []
    te_sources: list[PolicySource] = []
    expand_later: list[tuple[str, str]] = []

    for path, text in files:
        name = path.rsplit("/", 1)[-1]
        if path_matches(path, config.macro_globs):
            macro_sources.append((path, text))
        elif name == "access_vectors":
            av_sources.append((path, text))
        elif name == "security_classes":
            sc_sources.append((path, text))
        elif fnmatch.fnmatchcase(name, "*.te"):
            expand_later.append((path, text))
        else:
            # attributes and other plain declaration files: no macro pass
            te_sources.append(PolicySource.from_text(path, text))

    table = load_macros(sorted(macro_sources))
    for path, text in expand_later:
        result = expand(text, table, path=path, strict=config.strict)
        diagnostics.extend(result.diagnostics)
        te_sources.append(PolicySource(path, result.lines))

    snapshot = build_snapshot(te_sources, av_sources, sc_sources, strict=config.strict)
    snapshot.diagnostics.extend(diagnostics)
    return snapshot, table, diagnostics


def analyze_file_set(files: Sequence[tuple[str, str]], config: RunConfig) -> AnalysisResult:
    snapshot, table, diagnostics = snapshot_from_file_set(files, config)
    decomposition = decompose_snapshot(snapshot, strict=config.strict)
    metrics = snapshot_metrics(snapshot, decomposition)
    return AnalysisResult(
        snapshot=snapshot,
        decomposition=decomposition,
        metrics=metrics,
        macro_table=table,
        diagnostics=snapshot.diagnostics + decomposition.diagnostics,
    )


def analyze_dir(root: Path | str, config: RunConfig) -> AnalysisResult:
    return analyze_file_set(collect_dir_files(root, config), config)


def analyze_commit(repo: Path | str, commit: str, config: RunConfig) -> AnalysisResult:
    diags: list[str] = []
    files = collect_commit_files(repo, commit, config, diagnostics=diags)
    result = analyze_file_set(files, config)
    result.diagnostics.extend(diags)
    return result
