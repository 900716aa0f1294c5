"""Git repository mining: first-parent linearization, snapshot file
extraction, per-commit diff token indexing, and contributor attribution.

All repository access shells out to the standard git command-line tool
(rev-parse / log / ls-tree / cat-file / diff); nothing here mutates the
working tree, so concurrent read-only use is safe.
"""

from __future__ import annotations

import json
import re
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .errors import (
    BranchNotFound,
    CommitNotFound,
    OverlappingBuckets,
    RepoError,
    RepoNotFound,
)

# hash of git's canonical empty tree, for diffing root commits
EMPTY_TREE = "4b825dc642cb6eb9a060e54bf8d69288fbee4904"

_FIELD_SEP = "\x1f"


@dataclass(frozen=True)
class CommitRecord:
    hash: str
    parents: tuple[str, ...]
    author_email: str
    author_timestamp: int
    committer_timestamp: int
    subject_line: str
    commit_index: int

    @property
    def first_parent(self) -> str | None:
        return self.parents[0] if self.parents else None

    def to_json_dict(self) -> dict:
        return {
            "hash": self.hash,
            "parents": list(self.parents),
            "author_email": self.author_email,
            "author_timestamp": self.author_timestamp,
            "committer_timestamp": self.committer_timestamp,
            "subject_line": self.subject_line,
            "commit_index": self.commit_index,
        }


def commit_records_json_lines(records: Iterable[CommitRecord]) -> list[str]:
    return [json.dumps(r.to_json_dict(), sort_keys=True) for r in records]


def _run_git(repo: Path | str, *args: str, binary: bool = False,
             input_bytes: bytes | None = None) -> bytes:
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        capture_output=True,
        input=input_bytes,
    )
    if proc.returncode != 0:
        raise RepoError(
            f"git {' '.join(args[:2])} failed: {proc.stderr.decode('utf-8', 'replace').strip()}"
        )
    return proc.stdout


def _check_repo(repo: Path | str) -> None:
    path = Path(repo)
    if not path.exists():
        raise RepoNotFound(f"no such path: {repo}")
    proc = subprocess.run(
        ["git", "-C", str(repo), "rev-parse", "--git-dir"], capture_output=True
    )
    if proc.returncode != 0:
        raise RepoNotFound(f"not a git repository: {repo}")


def linearize(repo: Path | str, branch: str = "master") -> list[CommitRecord]:
    """First-parent chain of ``branch``, oldest first, with dense indices.

    Merge commits appear once; their side branches are not expanded.
    Appending commits to the branch never renumbers existing entries.
    """
    _check_repo(repo)
    probe = subprocess.run(
        ["git", "-C", str(repo), "rev-parse", "--verify", "--quiet", f"{branch}^{{commit}}"],
        capture_output=True,
    )
    if probe.returncode != 0:
        raise BranchNotFound(f"branch not found: {branch}")

    fmt = _FIELD_SEP.join(("%H", "%P", "%ae", "%at", "%ct", "%s"))
    out = _run_git(
        repo, "log", "--first-parent", "--reverse", f"--format={fmt}", branch, "--"
    ).decode("utf-8", "replace")

    records: list[CommitRecord] = []
    for index, line in enumerate(l for l in out.splitlines() if l):
        hash_, parents, email, at, ct, subject = line.split(_FIELD_SEP, 5)
        records.append(
            CommitRecord(
                hash=hash_,
                parents=tuple(parents.split()) if parents else (),
                author_email=email,
                author_timestamp=int(at),
                committer_timestamp=int(ct),
                subject_line=subject,
                commit_index=index,
            )
        )
    return records


def _check_commit(repo: Path | str, commit: str) -> None:
    proc = subprocess.run(
        ["git", "-C", str(repo), "cat-file", "-e", f"{commit}^{{commit}}"],
        capture_output=True,
    )
    if proc.returncode != 0:
        raise CommitNotFound(f"commit not found: {commit}")


def path_matches(path: str, patterns: Sequence[str]) -> bool:
    """fnmatch against the basename for bare patterns, the full repo-relative
    path for patterns containing a slash."""
    import fnmatch

    name = path.rsplit("/", 1)[-1]
    for pattern in patterns:
        target = path if "/" in pattern else name
        if fnmatch.fnmatchcase(target, pattern):
            return True
    return False


def list_policy_paths(repo: Path | str, commit: str, patterns: Sequence[str]) -> list[str]:
    out = _run_git(repo, "ls-tree", "-r", "-z", "--name-only", commit)
    paths = [p.decode("utf-8", "replace") for p in out.split(b"\0") if p]
    return sorted(p for p in paths if path_matches(p, patterns))


def extract_snapshot_files(
    repo: Path | str,
    commit: str,
    patterns: Sequence[str],
    diagnostics: list[str] | None = None,
) -> list[tuple[str, str]]:
    """Matching policy files as they existed at ``commit``.

    Reads blobs from the object store via ``git cat-file --batch``; the
    working tree is never touched. Returns (path, text) pairs in byte-wise
    path order; an empty result records a diagnostic.
    """
    _check_repo(repo)
    _check_commit(repo, commit)
    paths = list_policy_paths(repo, commit, patterns)
    diags = diagnostics if diagnostics is not None else []
    if not paths:
        diags.append(f"{commit}: no configured policy file exists at this commit")
        return []

    request = "".join(f"{commit}:{p}\n" for p in paths).encode()
    out = _run_git(repo, "cat-file", "--batch", input_bytes=request)

    files: list[tuple[str, str]] = []
    pos = 0
    for path in paths:
        header_end = out.index(b"\n", pos)
        header = out[pos:header_end].decode("utf-8", "replace")
        pos = header_end + 1
        if header.endswith(" missing"):
            diags.append(f"{commit}: {path} missing from object store")
            continue
        parts = header.split()
        size = int(parts[2])
        blob = out[pos : pos + size]
        pos += size + 1  # trailing LF after contents
        files.append((path, blob.decode("utf-8", "replace")))
    return files


# --- diff token index ---------------------------------------------------------


@dataclass(frozen=True)
class DiffTokens:
    """Type tokens referenced by a commit's added/removed policy lines."""

    subject: frozenset[str]
    object: frozenset[str]

    @staticmethod
    def empty() -> "DiffTokens":
        return DiffTokens(frozenset(), frozenset())


_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
_DECL_KEYWORDS = frozenset({"type", "typeattribute", "typealias", "attribute"})
_NON_TYPE_TOKENS = frozenset({"self", "alias"})


def extract_rule_tokens(line: str) -> tuple[frozenset[str], frozenset[str]]:
    """Default token extractor for one added/removed source line.

    Complete allow/neverallow lines get a positional split (subject-field
    identifiers vs target-field identifiers). Declarations count their names
    in both positions. Anything else (macro invocations, fragments of
    wrapped rules) conservatively counts every identifier in both positions:
    the age metric's contract is token containment, not a full parse.
    """
    text = line.split("#", 1)[0].strip()
    if not text:
        return frozenset(), frozenset()
    idents = _IDENT_RE.findall(text)
    if not idents:
        return frozenset(), frozenset()
    keyword = idents[0]

    if keyword in ("allow", "neverallow") and ":" in text and text.rstrip().endswith(";"):
        body = text[len(keyword):].strip()
        target_and_rest = body.split(":", 1)
        fields = target_and_rest[0]
        subj, obj = _split_subject_target(fields)
        if subj is not None:
            subjects = frozenset(t for t in _IDENT_RE.findall(subj) if t not in _NON_TYPE_TOKENS)
            objects = frozenset(t for t in _IDENT_RE.findall(obj) if t not in _NON_TYPE_TOKENS)
            return subjects, objects

    if keyword in _DECL_KEYWORDS:
        names = frozenset(t for t in idents[1:] if t not in _NON_TYPE_TOKENS)
        return names, names

    everything = frozenset(t for t in idents if t not in _NON_TYPE_TOKENS)
    return everything, everything


def _split_subject_target(fields: str) -> tuple[str | None, str]:
    """Split "SUBJ TGT" where each side may be a braced group or ~group."""
    depth = 0
    boundary = None
    first_term_done = False
    i = 0
    n = len(fields)
    while i < n:
        c = fields[i]
        if c == "{":
            depth += 1
        elif c == "}":
            depth -= 1
            if depth == 0 and not first_term_done:
                first_term_done = True
                boundary = i + 1
                break
        elif depth == 0 and not c.isspace() and i > 0 and fields[i - 1].isspace():
            # second top-level term starts here
            boundary = i
            first_term_done = True
            break
        i += 1
    if boundary is None or boundary >= n:
        return None, fields
    return fields[:boundary], fields[boundary:]


def diff_token_index(
    repo: Path | str,
    commits: Sequence[CommitRecord],
    patterns: Sequence[str],
    token_extractor: Callable[[str], tuple[frozenset[str], frozenset[str]]] = extract_rule_tokens,
) -> dict[int, DiffTokens]:
    """Per commit, the union of type tokens on added/removed policy lines of
    the diff against the first parent."""
    _check_repo(repo)
    index: dict[int, DiffTokens] = {}
    for record in commits:
        base = record.first_parent or EMPTY_TREE
        out = _run_git(
            repo, "diff", "--unified=0", "--no-renames", base, record.hash, "--"
        ).decode("utf-8", "replace")
        subjects: set[str] = set()
        objects: set[str] = set()
        current_old: str | None = None
        current_new: str | None = None
        for line in out.splitlines():
            if line.startswith("--- "):
                current_old = line[4:].removeprefix("a/") if line[4:] != "/dev/null" else None
            elif line.startswith("+++ "):
                current_new = line[4:].removeprefix("b/") if line[4:] != "/dev/null" else None
            elif line.startswith("+") and not line.startswith("+++"):
                if current_new and path_matches(current_new, patterns):
                    s, o = token_extractor(line[1:])
                    subjects |= s
                    objects |= o
            elif line.startswith("-") and not line.startswith("---"):
                if current_old and path_matches(current_old, patterns):
                    s, o = token_extractor(line[1:])
                    subjects |= s
                    objects |= o
        index[record.commit_index] = DiffTokens(frozenset(subjects), frozenset(objects))
    return index


# --- contributor attribution -----------------------------------------------------


@dataclass
class OrgMap:
    """email-domain -> organization table with second-level-domain fallback.

    Lookup walks domain suffixes (mail.samsung.com, samsung.com, com) before
    falling back to the bare second-level domain, so lookups are total.
    """

    table: dict[str, str]

    @classmethod
    def load(cls, path: Path | str) -> "OrgMap":
        table: dict[str, str] = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            domain, _, org = line.partition("\t")
            if not org:
                raise ValueError(f"org map line needs 'domain<TAB>organization': {raw!r}")
            table[domain.strip().lower()] = org.strip()
        return cls(table)

    def lookup(self, email: str) -> str:
        domain = email.rsplit("@", 1)[-1].strip().lower()
        if not domain:
            return "unknown"
        probe = domain
        while True:
            if probe in self.table:
                return self.table[probe]
            if "." not in probe:
                break
            probe = probe.split(".", 1)[1]
        labels = domain.split(".")
        return ".".join(labels[-2:]) if len(labels) >= 2 else domain


@dataclass
class OrgReport:
    totals: dict[str, int]
    buckets: dict[str, dict[str, int]] | None = None


def attribute_orgs(
    commits: Sequence[CommitRecord],
    org_map: OrgMap,
    buckets: Sequence[tuple[str, int, int]] | None = None,
) -> OrgReport:
    """Commit counts per organization, optionally split into inclusive
    [start_index, end_index] release buckets."""
    if buckets:
        spans = sorted(buckets, key=lambda b: b[1])
        for (la, sa, ea), (lb, sb, eb) in zip(spans, spans[1:]):
            if sb <= ea:
                raise OverlappingBuckets(f"buckets '{la}' and '{lb}' overlap")
        for label, start, end in spans:
            if start > end:
                raise OverlappingBuckets(f"bucket '{label}' has start > end")

    totals: dict[str, int] = {}
    per_bucket: dict[str, dict[str, int]] | None = (
        {label: {} for label, _, _ in buckets} if buckets else None
    )
    for record in commits:
        org = org_map.lookup(record.author_email)
        totals[org] = totals.get(org, 0) + 1
        if buckets and per_bucket is not None:
            for label, start, end in buckets:
                if start <= record.commit_index <= end:
                    per_bucket[label][org] = per_bucket[label].get(org, 0) + 1
                    break
    return OrgReport(totals=totals, buckets=per_bucket)
