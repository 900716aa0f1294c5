"""Domain vocabulary for type-enforcement policy analysis.

Everything in this module is an immutable value: safe to share across
threads and to use as dict keys. The central object is the ``Box``, the
atomic quadruple (subject type, object type, class, permission) that a
policy snapshot decomposes into.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple, Union

from .errors import UnknownClass


class TypeKind(enum.Enum):
    CONCRETE = "type"
    ATTRIBUTE = "attribute"


@dataclass(frozen=True)
class TypeSymbol:
    """A declared type or attribute; aliases resolve to this canonical name."""

    name: str
    kind: TypeKind
    aliases: frozenset[str] = frozenset()


# --- rule expressions -------------------------------------------------------
#
# One expression grammar covers type positions (subject/target), the class
# list, and the permission field; SelfRef is only legal in target position
# and Negation only inside a Group.


@dataclass(frozen=True)
class Single:
    name: str


@dataclass(frozen=True)
class Negation:
    name: str


@dataclass(frozen=True)
class Wildcard:
    pass


@dataclass(frozen=True)
class SelfRef:
    pass


@dataclass(frozen=True)
class Group:
    terms: tuple["Expr", ...]


@dataclass(frozen=True)
class Complement:
    inner: "Expr"


Expr = Union[Single, Negation, Wildcard, SelfRef, Group, Complement]

WILDCARD = Wildcard()
SELF = SelfRef()


def format_expr(expr: Expr) -> str:
    """Render an expression in policy-source syntax."""
    if isinstance(expr, Single):
        return expr.name
    if isinstance(expr, Negation):
        return f"-{expr.name}"
    if isinstance(expr, Wildcard):
        return "*"
    if isinstance(expr, SelfRef):
        return "self"
    if isinstance(expr, Complement):
        return f"~{format_expr(expr.inner)}"
    if isinstance(expr, Group):
        return "{ " + " ".join(format_expr(t) for t in expr.terms) + " }"
    raise TypeError(f"not an expression: {expr!r}")


class RuleKind(enum.Enum):
    ALLOW = "allow"
    NEVERALLOW = "neverallow"


@dataclass(frozen=True)
class Provenance:
    file: str
    line: int
    macro_chain: tuple[str, ...] = ()


@dataclass(frozen=True)
class Rule:
    """One allow/neverallow statement, post macro expansion."""

    kind: RuleKind
    subject: Expr
    target: Expr
    classes: Expr
    perms: Expr
    provenance: Provenance
    rule_id: int

    def to_text(self) -> str:
        """Policy-source rendering; re-parses to a structurally equal rule."""
        return (
            f"{self.kind.value} {format_expr(self.subject)} "
            f"{format_expr(self.target)}:{format_expr(self.classes)} "
            f"{format_expr(self.perms)};"
        )

    def same_structure(self, other: "Rule") -> bool:
        """Equality ignoring provenance and rule_id."""
        return (
            self.kind == other.kind
            and self.subject == other.subject
            and self.target == other.target
            and self.classes == other.classes
            and self.perms == other.perms
        )


class Box(NamedTuple):
    """Atomic access quadruple; tuple order gives the canonical lexicographic
    (subject, object, class, perm) total order."""

    subject: str
    object: str
    tclass: str
    perm: str

    def to_line(self) -> str:
        return f"{self.subject} {self.object} {self.tclass} {self.perm}"


def parse_box_line(line: str) -> Box:
    """Parse the canonical four-token box line format."""
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"box line must have 4 tokens, got {len(parts)}: {line!r}")
    return Box(*parts)


class ClassCatalog:
    """Class -> permission-set catalog with ``common`` inheritance resolved.

    Class and permission names live in their own namespaces; collisions with
    type names are legal.
    """

    def __init__(
        self,
        classes: Mapping[str, tuple[str, ...]] | None = None,
        commons: Mapping[str, tuple[str, ...]] | None = None,
    ):
        self._classes: dict[str, tuple[str, ...]] = dict(classes or {})
        self._commons: dict[str, tuple[str, ...]] = dict(commons or {})
        self._perm_sets: dict[str, frozenset[str]] = {
            name: frozenset(perms) for name, perms in self._classes.items()
        }

    @property
    def classes(self) -> Mapping[str, tuple[str, ...]]:
        return self._classes

    @property
    def commons(self) -> Mapping[str, tuple[str, ...]]:
        return self._commons

    def class_names(self) -> tuple[str, ...]:
        return tuple(self._classes)

    def __contains__(self, name: str) -> bool:
        return name in self._classes

    def __len__(self) -> int:
        return len(self._classes)

    def lookup(self, name: str) -> frozenset[str]:
        """Resolved permission set (own block plus inherited common perms)."""
        try:
            return self._perm_sets[name]
        except KeyError:
            raise UnknownClass(f"unknown class '{name}'") from None

    def total_permissions(self) -> int:
        """Sum of per-class permission counts (class universe size factor)."""
        return sum(len(p) for p in self._perm_sets.values())


class BoxSet:
    """Deduplicated box collection with a box -> contributing-rule index.

    Set operations work on box identity; the origin index follows along
    (restricted on subtraction, merged on union).
    """

    __slots__ = ("_origin",)

    def __init__(self, origin: Mapping[Box, frozenset[int]] | None = None):
        self._origin: dict[Box, frozenset[int]] = dict(origin or {})

    @classmethod
    def from_boxes(cls, boxes: Iterable[Box], rule_id: int) -> "BoxSet":
        rid = frozenset((rule_id,))
        return cls({box: rid for box in boxes})

    @property
    def boxes(self) -> frozenset[Box]:
        return frozenset(self._origin)

    def origin(self, box: Box) -> frozenset[int]:
        return self._origin[box]

    def origin_items(self) -> Iterator[tuple[Box, frozenset[int]]]:
        return iter(self._origin.items())

    def __contains__(self, box: Box) -> bool:
        return box in self._origin

    def __len__(self) -> int:
        return len(self._origin)

    def __iter__(self) -> Iterator[Box]:
        return iter(self._origin)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoxSet):
            return NotImplemented
        return self._origin == other._origin

    def union(self, other: "BoxSet") -> "BoxSet":
        merged = dict(self._origin)
        for box, rids in other._origin.items():
            prev = merged.get(box)
            merged[box] = rids if prev is None else prev | rids
        return BoxSet(merged)

    def subtract(self, other: "BoxSet") -> "BoxSet":
        return BoxSet(
            {box: rids for box, rids in self._origin.items() if box not in other._origin}
        )

    def intersection_boxes(self, other: "BoxSet") -> frozenset[Box]:
        small, large = (self, other) if len(self) <= len(other) else (other, self)
        return frozenset(box for box in small._origin if box in large._origin)

    def sorted_boxes(self) -> list[Box]:
        return sorted(self._origin)

    def to_lines(self) -> list[str]:
        """Canonical dump: one box per line, lexicographically sorted."""
        return [box.to_line() for box in self.sorted_boxes()]

    def rule_box_counts(self) -> dict[int, int]:
        """Invert the origin index: rule_id -> number of boxes it produced."""
        counts: dict[int, int] = {}
        for rids in self._origin.values():
            for rid in rids:
                counts[rid] = counts.get(rid, 0) + 1
        return counts


EMPTY_BOXSET = BoxSet()


def catalog_lookup(catalog: ClassCatalog, name: str) -> frozenset[str]:
    """Resolved permission set for a class; UnknownClass if absent."""
    return catalog.lookup(name)
