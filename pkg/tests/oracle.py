"""Independent brute-force oracle and random policy generator.

The oracle enumerates the full box universe T x T x sum_c(P_c) and keeps a
box iff some allow rule's membership predicate admits it and no neverallow
rule's does. Membership is evaluated per-box with no set expansion, so it
shares no code path with the decomposition engine under test.
"""

from __future__ import annotations

import random
from typing import Iterator, Mapping

from sebox.boxes import resolve_class_expr
from sebox.model import (
    Box,
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
    TypeKind,
    TypeSymbol,
    Wildcard,
)
from sebox.parser import PolicySnapshot


def _name_admits(name: str, candidate: str, members: Mapping[str, frozenset[str]] | None,
                 subject: str | None) -> bool:
    if name == "self":
        return candidate == subject
    if members is not None and name in members:
        return candidate in members[name]
    return candidate == name


def expr_admits(
    expr: Expr,
    candidate: str,
    members: Mapping[str, frozenset[str]] | None = None,
    subject: str | None = None,
) -> bool:
    """Membership test: does ``expr`` admit ``candidate``?

    ``candidate`` must be drawn from the position's universe, which makes
    complement simply logical negation.
    """
    if isinstance(expr, Single):
        return _name_admits(expr.name, candidate, members, subject)
    if isinstance(expr, Wildcard):
        return True
    if isinstance(expr, SelfRef):
        return candidate == subject
    if isinstance(expr, Complement):
        return not expr_admits(expr.inner, candidate, members, subject)
    if isinstance(expr, Group):
        admitted = any(
            expr_admits(t, candidate, members, subject)
            for t in expr.terms
            if not isinstance(t, Negation)
        )
        excluded = any(
            _name_admits(t.name, candidate, members, subject)
            for t in expr.terms
            if isinstance(t, Negation)
        )
        return admitted and not excluded
    raise TypeError(f"not an expression: {expr!r}")


def rule_admits(rule: Rule, snapshot: PolicySnapshot, box: Box) -> bool:
    members = snapshot.attribute_members
    if not expr_admits(rule.subject, box.subject, members):
        return False
    if not expr_admits(rule.target, box.object, members, subject=box.subject):
        return False
    if not expr_admits(rule.classes, box.tclass):
        return False
    return expr_admits(rule.perms, box.perm)


def universe_boxes(snapshot: PolicySnapshot) -> Iterator[Box]:
    for s in snapshot.concrete_types:
        for o in snapshot.concrete_types:
            for c in snapshot.catalog.class_names():
                for p in snapshot.catalog.lookup(c):
                    yield Box(s, o, c, p)


def brute_force_rule_boxes(rule: Rule, snapshot: PolicySnapshot) -> set[Box]:
    return {box for box in universe_boxes(snapshot) if rule_admits(rule, snapshot, box)}


def brute_force_final_allow(snapshot: PolicySnapshot) -> set[Box]:
    allows = [r for r in snapshot.rules if r.kind is RuleKind.ALLOW]
    nevers = [r for r in snapshot.rules if r.kind is RuleKind.NEVERALLOW]
    out: set[Box] = set()
    for box in universe_boxes(snapshot):
        if any(rule_admits(r, snapshot, box) for r in allows) and not any(
            rule_admits(r, snapshot, box) for r in nevers
        ):
            out.add(box)
    return out


# --- random policy generation -------------------------------------------------


def _rand_name_term(rng: random.Random, names: list[str]) -> Expr:
    return Single(rng.choice(names))


def _rand_expr(
    rng: random.Random,
    names: list[str],
    depth: int = 0,
    allow_self: bool = False,
    allow_wildcard: bool = True,
) -> Expr:
    roll = rng.random()
    if allow_self and roll < 0.10:
        return SelfRef()
    if allow_wildcard and roll < 0.18:
        return Wildcard()
    if depth < 2 and roll < 0.33:
        return Complement(_rand_expr(rng, names, depth + 1, allow_self, allow_wildcard))
    if depth < 2 and roll < 0.60:
        terms: list[Expr] = []
        for _ in range(rng.randint(1, 4)):
            t = rng.random()
            if t < 0.25:
                neg = rng.choice(names + (["self"] if allow_self else []))
                terms.append(Negation(neg))
            elif t < 0.40 and depth < 1:
                terms.append(_rand_expr(rng, names, depth + 1, allow_self, allow_wildcard))
            else:
                terms.append(_rand_name_term(rng, names))
        return Group(tuple(terms))
    return _rand_name_term(rng, names)


PERM_POOL = [f"p{i}" for i in range(8)]


def random_rule(
    rng: random.Random,
    snapshot: PolicySnapshot,
    rule_id: int,
    kind: RuleKind | None = None,
) -> Rule:
    """One random rule valid against the snapshot's symbols: named perms are
    drawn from the intersection of the resolved classes' permission sets."""
    if kind is None:
        kind = RuleKind.ALLOW if rng.random() < 0.7 else RuleKind.NEVERALLOW
    names = sorted(snapshot.types)
    class_names = list(snapshot.catalog.class_names())
    subject = _rand_expr(rng, names)
    target = _rand_expr(rng, names, allow_self=True)
    class_expr = _rand_expr(rng, class_names)

    resolved = resolve_class_expr(class_expr, snapshot.catalog)
    valid: set[str] = set(PERM_POOL)
    for c in resolved:
        valid &= snapshot.catalog.lookup(c)
    perm_expr = _rand_expr(rng, sorted(valid)) if valid else Wildcard()

    return Rule(
        kind=kind,
        subject=subject,
        target=target,
        classes=class_expr,
        perms=perm_expr,
        provenance=Provenance("generated.te", rule_id + 1),
        rule_id=rule_id,
    )


def random_snapshot(seed: int, max_rules: int = 30) -> PolicySnapshot:
    """Seeded random policy within the acceptance envelope:

    <=8 types, <=4 attributes, <=3 classes, <=6 perms/class, <=max_rules
    rules mixing wildcards, groups, negations, complements, self and
    neverallow.
    """
    rng = random.Random(seed)
    n_types = rng.randint(2, 8)
    type_names = [f"t{i}" for i in range(n_types)]
    n_attrs = rng.randint(0, 4)
    attr_names = [f"a{i}" for i in range(n_attrs)]
    members = {
        a: frozenset(rng.sample(type_names, rng.randint(0, n_types))) for a in attr_names
    }

    n_classes = rng.randint(1, 3)
    classes = {
        f"c{i}": tuple(sorted(rng.sample(PERM_POOL, rng.randint(1, 6))))
        for i in range(n_classes)
    }
    catalog = ClassCatalog(classes)

    types: dict[str, TypeSymbol] = {}
    for t in type_names:
        types[t] = TypeSymbol(t, TypeKind.CONCRETE)
    for a in attr_names:
        types[a] = TypeSymbol(a, TypeKind.ATTRIBUTE)

    snapshot = PolicySnapshot(
        types=types,
        attribute_members=members,
        catalog=catalog,
        rules=[],
    )
    snapshot.rules = [
        random_rule(rng, snapshot, i) for i in range(rng.randint(0, max_rules))
    ]
    return snapshot
