from __future__ import annotations

import os
import subprocess
from pathlib import Path

import pytest

from sebox.parser import PolicySnapshot, PolicySource, build_snapshot

# Canonical small policy used across the suite: two classes (7 perms total),
# five concrete types, three attributes. Box universe = 5 * 5 * 7 = 175.
F1_SECURITY_CLASSES = """\
class file
class dir
"""

F1_ACCESS_VECTORS = """\
class file
{
\tread
\twrite
\topen
\texecute
}

class dir
{
\tread
\tsearch
\topen
}
"""

F1_TYPES_TE = """\
attribute domain;
attribute appdomain;
attribute file_type;

type init, domain;
type untrusted_app, domain, appdomain;
type system_app, domain, appdomain;
type zygote_tmpfs, file_type;
type system_file, file_type;
"""

F1_RULES3_TE = """\
allow appdomain zygote_tmpfs:file read;
allow domain self:dir search;
allow init file_type:file ~write;
"""


def f1_files(rules: str | None = F1_RULES3_TE) -> dict[str, str]:
    files = {
        "security_classes": F1_SECURITY_CLASSES,
        "access_vectors": F1_ACCESS_VECTORS,
        "types.te": F1_TYPES_TE,
    }
    if rules is not None:
        files["rules.te"] = rules
    return files


def snapshot_from_files(files: dict[str, str], strict: bool = True) -> PolicySnapshot:
    te_sources = [
        PolicySource.from_text(path, text)
        for path, text in files.items()
        if path not in ("security_classes", "access_vectors")
    ]
    return build_snapshot(
        te_sources,
        access_vectors=[("access_vectors", files["access_vectors"])],
        security_classes=[("security_classes", files["security_classes"])],
        strict=strict,
    )


@pytest.fixture
def f1_empty() -> PolicySnapshot:
    return snapshot_from_files(f1_files(rules=None))


@pytest.fixture
def f1_rules3() -> PolicySnapshot:
    return snapshot_from_files(f1_files())


@pytest.fixture
def f1_subtraction() -> PolicySnapshot:
    rules = (
        "allow appdomain zygote_tmpfs:file read;\n"
        "neverallow untrusted_app zygote_tmpfs:file read;\n"
    )
    return snapshot_from_files(f1_files(rules))


def write_policy_dir(root: Path, files: dict[str, str]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for rel, text in files.items():
        target = root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    return root


# --- git fixture repositories -------------------------------------------------

GIT_ENV = {
    "GIT_AUTHOR_NAME": "Test Author",
    "GIT_AUTHOR_EMAIL": "author@example.com",
    "GIT_COMMITTER_NAME": "Test Committer",
    "GIT_COMMITTER_EMAIL": "committer@example.com",
}


def git(repo: Path, *args: str, env_extra: dict[str, str] | None = None) -> str:
    env = dict(os.environ)
    env.update(GIT_ENV)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run(
        ["git", "-C", str(repo), *args],
        check=True,
        capture_output=True,
        text=True,
        env=env,
    )
    return proc.stdout


def init_repo(path: Path, branch: str = "master") -> Path:
    path.mkdir(parents=True, exist_ok=True)
    subprocess.run(
        ["git", "init", "-q", "-b", branch, str(path)], check=True, capture_output=True
    )
    return path


def commit_files(
    repo: Path,
    files: dict[str, str],
    message: str,
    author_email: str = "author@example.com",
    timestamp: int = 1_500_000_000,
) -> str:
    for rel, text in files.items():
        target = repo / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text)
    git(repo, "add", "-A")
    stamp = f"{timestamp} +0000"
    git(
        repo,
        "commit",
        "-q",
        "--allow-empty",
        "-m",
        message,
        env_extra={
            "GIT_AUTHOR_EMAIL": author_email,
            "GIT_AUTHOR_DATE": stamp,
            "GIT_COMMITTER_DATE": stamp,
        },
    )
    return git(repo, "rev-parse", "HEAD").strip()
