"""Two-pass parser for expanded type-enforcement policy text.

Pass one collects declarations (types, attributes, memberships, aliases)
across all files; pass two parses allow/neverallow rules against the
assembled symbol tables. Statements outside decomposition scope are
tokenized just enough to skip balanced braces/semicolons and are counted,
never silently lost.

Rule ids are assigned by byte-wise file-path order then line order, so
parsing files in any order yields the same snapshot.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

from .boxes import expr_contains_self, resolve_class_expr
from .errors import (
    DuplicatePermission,
    PolicyError,
    PolicySyntaxError,
    UndeclaredAttribute,
    UnknownClass,
    UnknownCommon,
    UnknownPermission,
    UnknownType,
)
from .macros import ExpandedLine
from .model import (
    WILDCARD,
    SELF,
    ClassCatalog,
    Complement,
    Expr,
    Group,
    Negation,
    Provenance,
    Rule,
    RuleKind,
    Single,
    TypeKind,
    TypeSymbol,
)

# statement keywords the decomposition understands; everything else is
# counted in skipped_statements
RULE_KEYWORDS = frozenset({"allow", "neverallow"})
DECL_KEYWORDS = frozenset({"attribute", "type", "typeattribute", "typealias"})
IN_SCOPE_KEYWORDS = RULE_KEYWORDS | DECL_KEYWORDS

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*")
# single-char punctuation tokens; anything else clumps into opaque words
_PUNCT = "{}();:,~-*"
_TOKEN_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*|[{}();:,~\-*]|[^\s{}();:,~\-*]+")


@dataclass(frozen=True)
class Token:
    text: str
    line: int
    chain: tuple[str, ...] = ()


@dataclass(frozen=True)
class Statement:
    keyword: str
    tokens: tuple[Token, ...]
    path: str
    line: int
    chain: tuple[str, ...]

    def text(self) -> str:
        return " ".join(t.text for t in self.tokens)


@dataclass
class PolicySource:
    """One policy file, post macro expansion, with per-line provenance."""

    path: str
    lines: list[ExpandedLine]

    @classmethod
    def from_text(cls, path: str, text: str) -> "PolicySource":
        return cls(
            path, [ExpandedLine(t, i) for i, t in enumerate(text.splitlines(), 1)]
        )


def _strip_comment(text: str) -> str:
    hash_pos = text.find("#")
    return text if hash_pos == -1 else text[:hash_pos]


def _tokenize(lines: Iterable[ExpandedLine]) -> list[Token]:
    tokens: list[Token] = []
    for line in lines:
        for m in _TOKEN_RE.finditer(_strip_comment(line.text)):
            tokens.append(Token(m.group(0), line.source_line, line.macro_chain))
    return tokens


def split_statements(source: PolicySource, diagnostics: list[str]) -> list[Statement]:
    """Chunk a token stream into statements.

    In-scope keywords consume to the terminating semicolon (across lines).
    Unknown statements end at a top-level semicolon, at the close of a
    balanced top-level brace block (with ``else`` continuation), or at end
    of line; permissive enough for genfscon-style newline-terminated
    statements and conditional blocks.
    """
    tokens = _tokenize(source.lines)
    statements: list[Statement] = []
    i = 0
    n = len(tokens)
    while i < n:
        first = tokens[i]
        if first.text == ";":
            i += 1  # stray empty statement
            continue
        keyword = first.text
        depth = 0
        j = i
        end = None  # exclusive index
        if keyword in IN_SCOPE_KEYWORDS:
            while j < n:
                t = tokens[j].text
                if t in "{(":
                    depth += 1
                elif t in "})":
                    depth -= 1
                elif t == ";" and depth == 0:
                    end = j + 1
                    break
                j += 1
            if end is None:
                diagnostics.append(
                    f"{source.path}:{first.line}: unterminated '{keyword}' statement"
                )
                end = n
        else:
            while j < n:
                t = tokens[j].text
                if t in "{(":
                    depth += 1
                elif t in "})":
                    depth -= 1
                    if depth == 0 and t == "}":
                        # balanced block closed; continue only into an else arm
                        if j + 1 < n and tokens[j + 1].text == "else":
                            j += 1
                            continue
                        end = j + 1
                        break
                elif depth == 0:
                    if t == ";":
                        end = j + 1
                        break
                    if t != "else" and j + 1 < n and tokens[j + 1].line > tokens[j].line:
                        end = j + 1  # newline-terminated statement
                        break
                j += 1
            if end is None:
                end = n
        statements.append(
            Statement(
                keyword=keyword,
                tokens=tuple(tokens[i:end]),
                path=source.path,
                line=first.line,
                chain=first.chain,
            )
        )
        i = end
    return statements


# --- access_vectors / security_classes --------------------------------------


def parse_security_classes(text: str, path: str = "security_classes") -> list[str]:
    """Ordered class names from ``class <name>`` declarations."""
    names: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "class" or len(parts) != 2 or not _IDENT_RE.fullmatch(parts[1]):
            raise PolicySyntaxError(
                f"expected 'class <name>', got {raw.strip()!r}", path=path, line=lineno
            )
        names.append(parts[1])
    return names


def parse_access_vectors(
    text: str,
    path: str = "access_vectors",
    class_order: list[str] | None = None,
    diagnostics: list[str] | None = None,
) -> ClassCatalog:
    """Build the class catalog with ``common`` inheritance resolved.

    Class permission set = inherited common perms plus the class's own
    block. ``class_order`` (from security_classes) pins catalog ordering.
    """
    diags = diagnostics if diagnostics is not None else []
    tokens = _tokenize(PolicySource.from_text(path, text).lines)
    commons: dict[str, tuple[str, ...]] = {}
    classes: dict[str, tuple[str, ...]] = {}

    i = 0
    n = len(tokens)

    def fail(msg: str, tok: Token | None = None) -> PolicySyntaxError:
        line = tok.line if tok else (tokens[-1].line if tokens else 1)
        return PolicySyntaxError(msg, path=path, line=line)

    def read_perm_block(start: int) -> tuple[list[str], int]:
        if start >= n or tokens[start].text != "{":
            raise fail("expected '{'", tokens[start] if start < n else None)
        perms: list[str] = []
        k = start + 1
        while k < n and tokens[k].text != "}":
            tok = tokens[k]
            if not _IDENT_RE.fullmatch(tok.text):
                raise fail(f"bad permission name {tok.text!r}", tok)
            perms.append(tok.text)
            k += 1
        if k >= n:
            raise fail("unterminated permission block", tokens[start])
        return perms, k + 1

    while i < n:
        tok = tokens[i]
        if tok.text == "common":
            if i + 1 >= n:
                raise fail("common needs a name", tok)
            name = tokens[i + 1].text
            perms, i = read_perm_block(i + 2)
            dup = _first_duplicate(perms)
            if dup:
                raise DuplicatePermission(
                    f"permission '{dup}' repeated in common '{name}'", path=path, line=tok.line
                )
            commons[name] = tuple(perms)
        elif tok.text == "class":
            if i + 1 >= n:
                raise fail("class needs a name", tok)
            name = tokens[i + 1].text
            i += 2
            inherited: tuple[str, ...] = ()
            if i < n and tokens[i].text == "inherits":
                if i + 1 >= n:
                    raise fail("inherits needs a name", tok)
                common_name = tokens[i + 1].text
                if common_name not in commons:
                    raise UnknownCommon(
                        f"class '{name}' inherits undeclared common '{common_name}'",
                        path=path,
                        line=tok.line,
                    )
                inherited = commons[common_name]
                i += 2
            own: list[str] = []
            if i < n and tokens[i].text == "{":
                own, i = read_perm_block(i)
            dup = _first_duplicate(list(inherited) + own)
            if dup:
                raise DuplicatePermission(
                    f"permission '{dup}' duplicated in class '{name}'", path=path, line=tok.line
                )
            perms = tuple(inherited) + tuple(own)
            if not perms:
                diags.append(f"{path}:{tok.line}: class '{name}' has no permissions, dropped")
                continue
            classes[name] = perms
        else:
            raise fail(f"unexpected token {tok.text!r}", tok)

    if class_order:
        ordered: dict[str, tuple[str, ...]] = {}
        for name in class_order:
            if name in classes:
                ordered[name] = classes[name]
            else:
                diags.append(f"{path}: class '{name}' declared without access vector, dropped")
        for name, perms in classes.items():
            ordered.setdefault(name, perms)
        classes = ordered
    return ClassCatalog(classes, commons)


def _first_duplicate(items: list[str]) -> str | None:
    seen: set[str] = set()
    for item in items:
        if item in seen:
            return item
        seen.add(item)
    return None


# --- declarations ------------------------------------------------------------


@dataclass
class DeclarationSet:
    """Raw declaration facts before snapshot assembly."""

    type_attrs: dict[str, list[str]] = field(default_factory=dict)  # concrete -> attrs
    attributes: set[str] = field(default_factory=set)
    aliases: dict[str, str] = field(default_factory=dict)  # alias -> canonical
    memberships: list[tuple[str, str, str, int]] = field(default_factory=list)
    # (type, attribute, path, line) entries from typeattribute statements
    diagnostics: list[str] = field(default_factory=list)

    def declare_type(self, name: str, attrs: list[str], where: str) -> None:
        if name in self.attributes:
            self.diagnostics.append(f"{where}: '{name}' already declared as attribute")
            return
        self.type_attrs.setdefault(name, []).extend(attrs)

    def declare_attribute(self, name: str, where: str) -> None:
        if name in self.type_attrs:
            self.diagnostics.append(f"{where}: '{name}' already declared as type")
            return
        self.attributes.add(name)


def _idents_until(stmt: Statement, start: int, stop: set[str]) -> tuple[list[str], int]:
    names: list[str] = []
    k = start
    while k < len(stmt.tokens) and stmt.tokens[k].text not in stop:
        if _IDENT_RE.fullmatch(stmt.tokens[k].text):
            names.append(stmt.tokens[k].text)
        k += 1
    return names, k


def _parse_alias_spec(stmt: Statement, k: int) -> tuple[list[str], int]:
    toks = stmt.tokens
    if k < len(toks) and toks[k].text == "{":
        names, k = _idents_until(stmt, k + 1, {"}"})
        return names, k + 1
    if k < len(toks) and _IDENT_RE.fullmatch(toks[k].text):
        return [toks[k].text], k + 1
    raise PolicySyntaxError("expected alias name", path=stmt.path, line=stmt.line)


def collect_declarations(statements: Iterable[Statement], decls: DeclarationSet) -> None:
    """Pass one: record type/attribute/typeattribute/typealias statements."""
    for stmt in statements:
        where = f"{stmt.path}:{stmt.line}"
        toks = stmt.tokens
        try:
            if stmt.keyword == "attribute":
                if len(toks) < 3 or not _IDENT_RE.fullmatch(toks[1].text):
                    raise PolicySyntaxError("malformed attribute declaration",
                                            path=stmt.path, line=stmt.line)
                decls.declare_attribute(toks[1].text, where)
            elif stmt.keyword == "type":
                if len(toks) < 3 or not _IDENT_RE.fullmatch(toks[1].text):
                    raise PolicySyntaxError("malformed type declaration",
                                            path=stmt.path, line=stmt.line)
                name = toks[1].text
                k = 2
                if k < len(toks) and toks[k].text == "alias":
                    alias_names, k = _parse_alias_spec(stmt, k + 1)
                    for alias in alias_names:
                        decls.aliases[alias] = name
                attrs, _ = _idents_until(stmt, k, {";"})
                decls.declare_type(name, attrs, where)
                for attr in attrs:
                    decls.memberships.append((name, attr, stmt.path, stmt.line))
            elif stmt.keyword == "typeattribute":
                names, _ = _idents_until(stmt, 1, {";"})
                if len(names) < 2:
                    raise PolicySyntaxError("typeattribute needs a type and an attribute",
                                            path=stmt.path, line=stmt.line)
                for attr in names[1:]:
                    decls.memberships.append((names[0], attr, stmt.path, stmt.line))
            elif stmt.keyword == "typealias":
                if len(toks) < 4 or toks[2].text != "alias":
                    raise PolicySyntaxError("malformed typealias", path=stmt.path, line=stmt.line)
                canonical = toks[1].text
                alias_names, _ = _parse_alias_spec(stmt, 3)
                for alias in alias_names:
                    decls.aliases[alias] = canonical
        except PolicyError as err:
            decls.diagnostics.append(str(err))


def parse_declarations(text: str, path: str = "<text>") -> tuple[dict[str, TypeSymbol], dict[str, frozenset[str]]]:
    """Single-text convenience wrapper: declarations -> (symbols, memberships)."""
    source = PolicySource.from_text(path, text)
    decls = DeclarationSet()
    collect_declarations(split_statements(source, decls.diagnostics), decls)
    return _assemble_symbols(decls, strict=False)


def _assemble_symbols(
    decls: DeclarationSet, strict: bool
) -> tuple[dict[str, TypeSymbol], dict[str, frozenset[str]]]:
    types: dict[str, TypeSymbol] = {}
    members: dict[str, set[str]] = {a: set() for a in decls.attributes}

    alias_by_canonical: dict[str, set[str]] = {}
    for alias, canonical in decls.aliases.items():
        if alias in decls.type_attrs or alias in decls.attributes:
            decls.diagnostics.append(f"alias '{alias}' collides with a declared name")
            continue
        alias_by_canonical.setdefault(canonical, set()).add(alias)

    for name in decls.type_attrs:
        types[name] = TypeSymbol(
            name, TypeKind.CONCRETE, frozenset(alias_by_canonical.get(name, ()))
        )
    for name in decls.attributes:
        types[name] = TypeSymbol(name, TypeKind.ATTRIBUTE)

    for type_name, attr, path, line in decls.memberships:
        type_name = decls.aliases.get(type_name, type_name)
        sym = types.get(type_name)
        if sym is None or sym.kind is not TypeKind.CONCRETE:
            msg = f"{path}:{line}: membership for non-concrete or undeclared type '{type_name}'"
            if strict and sym is None:
                raise UnknownType(f"undeclared type '{type_name}'", path=path, line=line)
            decls.diagnostics.append(msg)
            continue
        if attr not in members:
            err = UndeclaredAttribute(f"attribute '{attr}' never declared", path=path, line=line)
            if strict:
                raise err
            # historical policies reference attributes before/without declaring
            # them; register implicitly so rules still resolve
            decls.diagnostics.append(str(err))
            if attr in types:
                decls.diagnostics.append(
                    f"{path}:{line}: '{attr}' used as attribute but declared as type"
                )
                continue
            types[attr] = TypeSymbol(attr, TypeKind.ATTRIBUTE)
            members[attr] = set()
        members[attr].add(type_name)

    memberships = {a: frozenset(m) for a, m in members.items()}
    return types, memberships


# --- rules -------------------------------------------------------------------


class _ExprParser:
    def __init__(self, stmt: Statement, aliases: dict[str, str]):
        self.toks = stmt.tokens
        self.pos = 0
        self.stmt = stmt
        self.aliases = aliases

    def fail(self, msg: str) -> PolicySyntaxError:
        return PolicySyntaxError(msg, path=self.stmt.path, line=self.stmt.line)

    def peek(self) -> str | None:
        return self.toks[self.pos].text if self.pos < len(self.toks) else None

    def advance(self) -> str:
        if self.pos >= len(self.toks):
            raise self.fail("unexpected end of statement")
        tok = self.toks[self.pos].text
        self.pos += 1
        return tok

    def expect(self, text: str) -> None:
        tok = self.advance()
        if tok != text:
            raise self.fail(f"expected {text!r}, got {tok!r}")

    def _canonical(self, name: str) -> str:
        return self.aliases.get(name, name)

    def parse_expr(self, allow_self: bool) -> Expr:
        tok = self.advance()
        if tok == "*":
            return WILDCARD
        if tok == "~":
            return Complement(self.parse_expr(allow_self))
        if tok == "{":
            terms: list[Expr] = []
            while True:
                nxt = self.peek()
                if nxt is None:
                    raise self.fail("unterminated group")
                if nxt == "}":
                    self.advance()
                    return Group(tuple(terms))
                if nxt == "-":
                    self.advance()
                    name = self.advance()
                    if name == "self":
                        if not allow_self:
                            raise self.fail("'self' is only legal in target position")
                        terms.append(Negation("self"))
                    elif _IDENT_RE.fullmatch(name):
                        terms.append(Negation(self._canonical(name)))
                    else:
                        raise self.fail(f"bad negated name {name!r}")
                else:
                    terms.append(self.parse_expr(allow_self))
        if tok == "self":
            if not allow_self:
                raise self.fail("'self' is only legal in target position")
            return SELF
        if _IDENT_RE.fullmatch(tok):
            return Single(self._canonical(tok))
        if tok == "-":
            raise self.fail("negation is only legal inside a group")
        raise self.fail(f"unexpected token {tok!r}")


def _validate_rule_symbols(
    subject: Expr,
    target: Expr,
    classes: Expr,
    perms: Expr,
    types: dict[str, TypeSymbol],
    catalog: ClassCatalog,
    stmt: Statement,
) -> None:
    def check_type_names(expr: Expr) -> None:
        if isinstance(expr, (Single, Negation)):
            name = expr.name
            if name != "self" and name not in types:
                raise UnknownType(f"unknown type '{name}'", path=stmt.path, line=stmt.line)
        elif isinstance(expr, Complement):
            check_type_names(expr.inner)
        elif isinstance(expr, Group):
            for t in expr.terms:
                check_type_names(t)

    check_type_names(subject)
    check_type_names(target)

    try:
        resolved_classes = resolve_class_expr(classes, catalog)
    except UnknownClass as err:
        raise UnknownClass(str(err), path=stmt.path, line=stmt.line) from None

    perm_names: set[str] = set()

    def collect_perm_names(expr: Expr) -> None:
        if isinstance(expr, (Single, Negation)):
            perm_names.add(expr.name)
        elif isinstance(expr, Complement):
            collect_perm_names(expr.inner)
        elif isinstance(expr, Group):
            for t in expr.terms:
                collect_perm_names(t)

    collect_perm_names(perms)
    for c in sorted(resolved_classes):
        missing = perm_names - catalog.lookup(c)
        if missing:
            raise UnknownPermission(
                f"permission '{sorted(missing)[0]}' not defined for class '{c}'",
                path=stmt.path,
                line=stmt.line,
            )


def parse_rule_statement(
    stmt: Statement,
    catalog: ClassCatalog,
    types: dict[str, TypeSymbol],
    aliases: dict[str, str],
    rule_id: int,
) -> Rule:
    parser = _ExprParser(stmt, aliases)
    keyword = parser.advance()
    kind = RuleKind.ALLOW if keyword == "allow" else RuleKind.NEVERALLOW
    subject = parser.parse_expr(allow_self=False)
    target = parser.parse_expr(allow_self=True)
    parser.expect(":")
    classes = parser.parse_expr(allow_self=False)
    perms = parser.parse_expr(allow_self=False)
    parser.expect(";")
    if parser.peek() is not None:
        raise parser.fail("trailing tokens after rule")
    if expr_contains_self(subject):
        raise parser.fail("'self' is only legal in target position")
    _validate_rule_symbols(subject, target, classes, perms, types, catalog, stmt)
    return Rule(
        kind=kind,
        subject=subject,
        target=target,
        classes=classes,
        perms=perms,
        provenance=Provenance(stmt.path, stmt.line, stmt.chain),
        rule_id=rule_id,
    )


def parse_rules(
    text_or_statements,
    catalog: ClassCatalog,
    types: dict[str, TypeSymbol],
    aliases: dict[str, str] | None = None,
    strict: bool = False,
    diagnostics: list[str] | None = None,
    start_rule_id: int = 0,
    path: str = "<text>",
) -> list[Rule]:
    """Pass two: parse allow/neverallow statements against assembled symbols.

    Lenient mode drops rules with unknown symbols or syntax problems and
    records a diagnostic; strict mode raises.
    """
    diags = diagnostics if diagnostics is not None else []
    if isinstance(text_or_statements, str):
        source = PolicySource.from_text(path, text_or_statements)
        statements = split_statements(source, diags)
    else:
        statements = list(text_or_statements)

    rules: list[Rule] = []
    rule_id = start_rule_id
    for stmt in statements:
        if stmt.keyword not in RULE_KEYWORDS:
            continue
        try:
            rules.append(parse_rule_statement(stmt, catalog, types, aliases or {}, rule_id))
            rule_id += 1
        except PolicyError as err:
            if strict:
                raise
            diags.append(f"rule dropped: {err}")
    return rules


# --- snapshot assembly -------------------------------------------------------


@dataclass
class PolicySnapshot:
    """Fully parsed policy: symbols, catalog, rules, and skip accounting."""

    types: dict[str, TypeSymbol]
    attribute_members: dict[str, frozenset[str]]
    catalog: ClassCatalog
    rules: list[Rule]
    skipped_statements: dict[str, int] = field(default_factory=dict)
    parsed_statements: dict[str, int] = field(default_factory=dict)
    dropped_rules: int = 0
    diagnostics: list[str] = field(default_factory=list)

    @cached_property
    def concrete_types(self) -> tuple[str, ...]:
        return tuple(
            sorted(n for n, s in self.types.items() if s.kind is TypeKind.CONCRETE)
        )

    @cached_property
    def concrete_type_set(self) -> frozenset[str]:
        return frozenset(self.concrete_types)

    @cached_property
    def aliases(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for sym in self.types.values():
            for alias in sym.aliases:
                out[alias] = sym.name
        return out


def empty_snapshot() -> PolicySnapshot:
    return PolicySnapshot({}, {}, ClassCatalog(), [])


def build_snapshot(
    te_sources: list[PolicySource],
    access_vectors: list[tuple[str, str]],
    security_classes: list[tuple[str, str]] | None = None,
    strict: bool = False,
) -> PolicySnapshot:
    """Assemble a snapshot from expanded sources, deterministically.

    Sources are processed in byte-wise path order regardless of the order
    given; rule ids are dense in that order.
    """
    diagnostics: list[str] = []

    class_order: list[str] = []
    for path, text in sorted(security_classes or []):
        class_order.extend(parse_security_classes(text, path))

    # concatenating in path order lets commons inherit across files; real
    # repositories carry a single access_vectors anyway
    av_sorted = sorted(access_vectors)
    av_text = "\n".join(text for _, text in av_sorted)
    av_path = av_sorted[0][0] if av_sorted else "access_vectors"
    catalog = parse_access_vectors(
        av_text, av_path, class_order=class_order or None, diagnostics=diagnostics
    )

    ordered = sorted(te_sources, key=lambda s: s.path)
    per_source_statements: list[list[Statement]] = []
    decls = DeclarationSet()
    for source in ordered:
        statements = split_statements(source, diagnostics)
        per_source_statements.append(statements)
        collect_declarations((s for s in statements if s.keyword in DECL_KEYWORDS), decls)

    types, memberships = _assemble_symbols(decls, strict)
    diagnostics.extend(decls.diagnostics)

    alias_map: dict[str, str] = dict(decls.aliases)
    # re-derive from symbols so colliding aliases dropped at assembly are gone
    alias_map = {a: c for a, c in alias_map.items() if a not in types}

    skipped: dict[str, int] = {}
    parsed: dict[str, int] = {}
    rules: list[Rule] = []
    dropped = 0
    for statements in per_source_statements:
        for stmt in statements:
            if stmt.keyword in IN_SCOPE_KEYWORDS:
                parsed[stmt.keyword] = parsed.get(stmt.keyword, 0) + 1
            else:
                skipped[stmt.keyword] = skipped.get(stmt.keyword, 0) + 1
        rule_statements = [s for s in statements if s.keyword in RULE_KEYWORDS]
        parsed_rules = parse_rules(
            rule_statements,
            catalog,
            types,
            aliases=alias_map,
            strict=strict,
            diagnostics=diagnostics,
            start_rule_id=len(rules),
        )
        dropped += len(rule_statements) - len(parsed_rules)
        rules.extend(parsed_rules)

    return PolicySnapshot(
        types=types,
        attribute_members=memberships,
        catalog=catalog,
        rules=rules,
        skipped_statements=skipped,
        parsed_statements=parsed,
        dropped_rules=dropped,
        diagnostics=diagnostics,
    )
