"""Run configuration shared by the CLI commands and the walk cache."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

CACHE_ENV_VAR = "SEBOX_CACHE_DIR"
CACHE_SCHEMA_VERSION = 1

# the default policy file set within a repository or directory; *_macros
# files feed macro loading, everything else is parsed policy text
DEFAULT_POLICY_GLOBS = ("security_classes", "access_vectors", "attributes", "*.te")
DEFAULT_MACRO_GLOBS = ("*_macros",)


@dataclass
class RunConfig:
    repo: Path | None = None
    policy_dir: Path | None = None
    branch: str = "master"
    policy_globs: tuple[str, ...] = DEFAULT_POLICY_GLOBS
    macro_globs: tuple[str, ...] = DEFAULT_MACRO_GLOBS
    strict: bool = False
    cache_dir: Path | None = None
    keywords: tuple[str, ...] = ()
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.policy_globs:
            raise ValueError("policy_globs must be non-empty")
        if not self.macro_globs:
            raise ValueError("macro_globs must be non-empty")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def all_globs(self) -> tuple[str, ...]:
        return tuple(self.policy_globs) + tuple(self.macro_globs)

    def digest(self) -> str:
        """Content key for cache entries: changes whenever any field that can
        change decomposition output changes."""
        payload = {
            "schema": CACHE_SCHEMA_VERSION,
            "policy_globs": sorted(self.policy_globs),
            "macro_globs": sorted(self.macro_globs),
            "strict": self.strict,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path.home() / ".cache" / "sebox"
