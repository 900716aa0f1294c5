"""Exception hierarchy for the sebox toolkit.

Errors that originate in policy text carry a ``location`` (``path:line``)
so diagnostics stay actionable when thousands of files are in play.
"""

from __future__ import annotations


class SeboxError(Exception):
    """Base class for all sebox errors."""


class PolicyError(SeboxError):
    """A problem in policy source text."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        super().__init__(message)

    def __str__(self) -> str:
        base = super().__str__()
        if self.path is not None:
            loc = self.path if self.line is None else f"{self.path}:{self.line}"
            return f"{loc}: {base}"
        return base


class PolicySyntaxError(PolicyError):
    pass


class UnknownClass(PolicyError):
    pass


class UnknownCommon(PolicyError):
    pass


class DuplicatePermission(PolicyError):
    pass


class UnknownType(PolicyError):
    pass


class UnknownPermission(PolicyError):
    pass


class UnknownName(PolicyError):
    pass


class UndeclaredAttribute(PolicyError):
    pass


class MalformedDefine(PolicyError):
    pass


class ExpansionError(PolicyError):
    pass


class ExpansionDepthExceeded(ExpansionError):
    pass


class ArityMismatch(ExpansionError):
    pass


class BoxNotPresent(SeboxError):
    pass


class RepoError(SeboxError):
    pass


class RepoNotFound(RepoError):
    pass


class BranchNotFound(RepoError):
    pass


class CommitNotFound(RepoError):
    pass


class OverlappingBuckets(SeboxError):
    pass


class FewerThanTwoRows(SeboxError):
    pass


class NonPositiveValue(SeboxError):
    pass


class SegmentTooSmall(SeboxError):
    pass


class InvalidKeyword(SeboxError):
    pass


class MissingWalkData(SeboxError):
    pass
