"""Decomposition of allow/neverallow rules into atomic access boxes.

A rule's subject/target/class/permission expressions are resolved against
the snapshot's symbol tables and expanded into the cartesian product of
their concrete members. Neverallow rules expand through the identical path
and are subtracted from the allow boxes; overlaps are reported as assertion
violations but never abort the analysis.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

from .errors import BoxNotPresent, PolicyError, UnknownClass, UnknownName, UnknownPermission
from .model import (
    Box,
    BoxSet,
    ClassCatalog,
    Complement,
    Expr,
    Group,
    Negation,
    Provenance,
    Rule,
    RuleKind,
    SelfRef,
    Single,
    Wildcard,
)

if TYPE_CHECKING:
    from .parser import PolicySnapshot


class Position(enum.Enum):
    SUBJECT = "subject"
    TARGET = "target"


def expr_contains_self(expr: Expr) -> bool:
    if isinstance(expr, SelfRef):
        return True
    if isinstance(expr, Negation):
        return expr.name == "self"
    if isinstance(expr, Complement):
        return expr_contains_self(expr.inner)
    if isinstance(expr, Group):
        return any(expr_contains_self(t) for t in expr.terms)
    return False


def resolve_expr(
    expr: Expr,
    universe: frozenset[str],
    members: Mapping[str, frozenset[str]] | None = None,
    self_binding: str | None = None,
    exc: type[PolicyError] = UnknownName,
) -> frozenset[str]:
    """Resolve an expression to concrete names drawn from ``universe``.

    ``members`` expands grouping names (attributes) to their member sets;
    wildcard and complement are taken relative to ``universe``.
    """

    def resolve_name(name: str) -> frozenset[str]:
        if name == "self" and self_binding is not None:
            return frozenset((self_binding,))
        if members is not None and name in members:
            return members[name]
        if name in universe:
            return frozenset((name,))
        raise exc(f"unknown name '{name}'")

    if isinstance(expr, Single):
        return resolve_name(expr.name)
    if isinstance(expr, Wildcard):
        return universe
    if isinstance(expr, SelfRef):
        if self_binding is None:
            raise exc("'self' is only legal in target position")
        return frozenset((self_binding,))
    if isinstance(expr, Complement):
        return universe - resolve_expr(expr.inner, universe, members, self_binding, exc)
    if isinstance(expr, Group):
        included: set[str] = set()
        excluded: set[str] = set()
        for term in expr.terms:
            if isinstance(term, Negation):
                excluded |= resolve_name(term.name)
            else:
                included |= resolve_expr(term, universe, members, self_binding, exc)
        return frozenset(included - excluded)
    if isinstance(expr, Negation):
        raise exc(f"negation '-{expr.name}' is only legal inside a group")
    raise TypeError(f"not an expression: {expr!r}")


def resolve_type_expr(
    expr: Expr,
    snapshot: "PolicySnapshot",
    position: Position = Position.TARGET,
    subject_binding: str | None = None,
) -> frozenset[str]:
    """Concrete type names an expression stands for.

    Attributes expand to their members; the wildcard/complement universe is
    all declared concrete types. ``self`` requires target position and a
    subject binding.
    """
    if position is Position.SUBJECT and expr_contains_self(expr):
        raise UnknownName("'self' is only legal in target position")
    return resolve_expr(
        expr,
        snapshot.concrete_type_set,
        members=snapshot.attribute_members,
        self_binding=subject_binding,
    )


def resolve_perm_expr(expr: Expr, tclass: str, catalog: ClassCatalog) -> frozenset[str]:
    """Permission names for one class; named perms must belong to the class."""
    return resolve_expr(expr, catalog.lookup(tclass), exc=UnknownPermission)


def resolve_class_expr(expr: Expr, catalog: ClassCatalog) -> frozenset[str]:
    return resolve_expr(expr, frozenset(catalog.class_names()), exc=UnknownClass)


@dataclass
class DecompositionResult:
    """Allow/neverallow box sets plus the subtraction outcome.

    ``final_allow`` keeps the allow-side origin index restricted to the
    surviving boxes; ``assertion_violations`` is the allow/neverallow
    overlap that checkpolicy would reject.
    """

    allow: BoxSet
    neverallow: BoxSet
    final_allow: BoxSet
    assertion_violations: frozenset[Box]
    rules_by_id: dict[int, Rule] = field(default_factory=dict)
    diagnostics: list[str] = field(default_factory=list)


def decompose_rule(rule: Rule, snapshot: "PolicySnapshot") -> BoxSet:
    """All boxes one rule grants (or forbids, for neverallow)."""
    try:
        subjects = resolve_type_expr(rule.subject, snapshot, Position.SUBJECT)
        classes = resolve_class_expr(rule.classes, snapshot.catalog)
        class_perms = {
            c: resolve_perm_expr(rule.perms, c, snapshot.catalog) for c in sorted(classes)
        }
        boxes: list[Box] = []
        if expr_contains_self(rule.target):
            for s in subjects:
                objects = resolve_type_expr(rule.target, snapshot, Position.TARGET, s)
                boxes.extend(
                    Box(s, o, c, p)
                    for o, (c, perms) in itertools.product(objects, class_perms.items())
                    for p in perms
                )
        else:
            objects = resolve_type_expr(rule.target, snapshot, Position.TARGET)
            boxes.extend(
                Box(s, o, c, p)
                for s, o, (c, perms) in itertools.product(subjects, objects, class_perms.items())
                for p in perms
            )
        return BoxSet.from_boxes(boxes, rule.rule_id)
    except PolicyError as err:
        prov = rule.provenance
        raise type(err)(str(err), path=prov.file, line=prov.line) from err


def decompose_snapshot(snapshot: "PolicySnapshot", strict: bool = False) -> DecompositionResult:
    """Decompose every rule and subtract neverallow boxes from allow boxes.

    In lenient mode a rule that fails resolution is skipped with a
    diagnostic; historical snapshots routinely contain transiently broken
    references.
    """
    allow = BoxSet()
    neverallow = BoxSet()
    diagnostics: list[str] = []
    rules_by_id: dict[int, Rule] = {}

    for rule in snapshot.rules:
        rules_by_id[rule.rule_id] = rule
        try:
            produced = decompose_rule(rule, snapshot)
        except PolicyError as err:
            if strict:
                raise
            diagnostics.append(f"rule {rule.rule_id} skipped: {err}")
            continue
        if rule.kind is RuleKind.ALLOW:
            allow = allow.union(produced)
        else:
            neverallow = neverallow.union(produced)

    final_allow = allow.subtract(neverallow)
    violations = allow.intersection_boxes(neverallow)
    return DecompositionResult(
        allow=allow,
        neverallow=neverallow,
        final_allow=final_allow,
        assertion_violations=violations,
        rules_by_id=rules_by_id,
        diagnostics=diagnostics,
    )


def rules_for_box(result: DecompositionResult, box: Box) -> list[Provenance]:
    """Provenance of every rule contributing a box, in rule_id order."""
    if box not in result.allow:
        raise BoxNotPresent(f"box not in allow set: {box.to_line()}")
    rids = sorted(result.allow.origin(box))
    return [result.rules_by_id[r].provenance for r in rids]


def dump_boxes(boxset: BoxSet) -> str:
    """Canonical sorted box dump, one quadruple per line."""
    lines = boxset.to_lines()
    return "\n".join(lines) + ("\n" if lines else "")


def dump_boxes_with_provenance(result: DecompositionResult, boxset: BoxSet) -> str:
    """Box dump extended with rule count and file:line provenance columns."""
    out = []
    for box in boxset.sorted_boxes():
        rids = sorted(boxset.origin(box))
        provs = ",".join(
            f"{result.rules_by_id[r].provenance.file}:{result.rules_by_id[r].provenance.line}"
            for r in rids
        )
        out.append(f"{box.to_line()}\t{len(rids)}\t{provs}")
    return "\n".join(out) + ("\n" if out else "")
