"""m4-subset macro preprocessor for sepolicy sources.

Supports what the te/global macro files actually use: ``define`` with
positional ``$n`` parameters, nested invocation, and backquote quoting.
Exotic m4 (ifelse/ifdef/include/diversions) is rejected with a warning and
the line is passed through verbatim.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ArityMismatch, ExpansionDepthExceeded, MalformedDefine

MAX_EXPANSION_DEPTH = 64

# m4 builtins we refuse to emulate; lines invoking them pass through verbatim.
REJECTED_BUILTINS = frozenset(
    {"ifelse", "ifdef", "ifndef", "include", "sinclude", "divert", "undivert",
     "changequote", "changecom", "undefine", "defn", "pushdef", "popdef"}
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_PARAM_RE = re.compile(r"\$(\d+)")
_WS_RUN_RE = re.compile(r"[ \t]+")


@dataclass(frozen=True)
class MacroDef:
    name: str
    body: str
    max_param: int
    path: str | None = None
    line: int | None = None


@dataclass
class MacroTable:
    """Name -> definition map; redefinition replaces and is counted."""

    defs: dict[str, MacroDef] = field(default_factory=dict)
    replacements: dict[str, int] = field(default_factory=dict)

    def define(self, macro: MacroDef) -> None:
        if macro.name in self.defs:
            self.replacements[macro.name] = self.replacements.get(macro.name, 0) + 1
        self.defs[macro.name] = macro

    def __contains__(self, name: str) -> bool:
        return name in self.defs

    def __len__(self) -> int:
        return len(self.defs)

    def get(self, name: str) -> MacroDef | None:
        return self.defs.get(name)


@dataclass(frozen=True)
class ExpandedLine:
    text: str
    source_line: int
    macro_chain: tuple[str, ...] = ()


@dataclass
class ExpansionResult:
    lines: list[ExpandedLine]
    diagnostics: list[str]
    trailing_newline: bool = False

    @property
    def text(self) -> str:
        joined = "\n".join(line.text for line in self.lines)
        return joined + "\n" if self.trailing_newline else joined


def _strip_quotes(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s.startswith("`") and s.endswith("'"):
        return s[1:-1]
    return s


def _max_param(body: str) -> int:
    return max((int(m.group(1)) for m in _PARAM_RE.finditer(body)), default=0)


def load_macros(sources: list[tuple[str, str]]) -> MacroTable:
    """Collect ``define(`name', `body')`` entries from macro-definition files.

    Quoting pairs are stripped from name and body; a body referencing $k sets
    the macro's max parameter index.
    """
    table = MacroTable()
    for path, text in sources:
        pos = 0
        while True:
            hit = text.find("define", pos)
            if hit == -1:
                break
            # must be a whole identifier followed by '('
            if hit > 0 and (text[hit - 1].isalnum() or text[hit - 1] == "_"):
                pos = hit + 6
                continue
            after = hit + 6
            while after < len(text) and text[after] in " \t":
                after += 1
            if after >= len(text) or text[after] != "(":
                pos = hit + 6
                continue
            line_start = text.rfind("\n", 0, hit) + 1
            if "#" in text[line_start:hit]:
                pos = hit + 6  # commented-out define
                continue
            lineno = text.count("\n", 0, hit) + 1
            args, end = _parse_invocation_args(text, after, path=path, line=lineno)
            if not args or not args[0].strip():
                raise MalformedDefine("define needs a macro name", path=path, line=lineno)
            name = _strip_quotes(args[0])
            body = _strip_quotes(args[1]) if len(args) > 1 else ""
            if not _IDENT_RE.fullmatch(name):
                raise MalformedDefine(f"bad macro name {name!r}", path=path, line=lineno)
            table.define(MacroDef(name, body, _max_param(body), path=path, line=lineno))
            pos = end
    return table


def _parse_invocation_args(
    text: str, open_paren: int, path: str | None = None, line: int | None = None
) -> tuple[list[str], int]:
    """Split the argument list starting at ``(`` into top-level-comma pieces.

    Commas inside nested parens/braces or inside `...' quoting do not split.
    Returns (args, index just past the closing paren).
    """
    assert text[open_paren] == "("
    depth = 1
    quote = 0
    args: list[str] = []
    current: list[str] = []
    i = open_paren + 1
    while i < len(text):
        c = text[i]
        if c == "`":
            quote += 1
        elif c == "'" and quote > 0:
            quote -= 1
        elif quote == 0:
            if c in "({":
                depth += 1
            elif c in ")}":
                depth -= 1
                if depth == 0:
                    args.append("".join(current))
                    return args, i + 1
            elif c == "," and depth == 1:
                args.append("".join(current))
                current = []
                i += 1
                continue
        current.append(c)
        i += 1
    raise MalformedDefine("unbalanced parentheses or quotes", path=path, line=line)


def _substitute(body: str, args: list[str]) -> str:
    def repl(m: re.Match) -> str:
        k = int(m.group(1))
        if 1 <= k <= len(args):
            return args[k - 1]
        return ""

    return _PARAM_RE.sub(repl, body)


def _find_invocation(text: str, table: MacroTable) -> tuple[re.Match, MacroDef | None, list[str] | None, int] | None:
    """Earliest expandable invocation in ``text``.

    Returns (identifier match, macro def or None for a rejected builtin,
    args or None for bare arity-0, end index). None when nothing expands.
    """
    for m in _IDENT_RE.finditer(text):
        name = m.group(0)
        rejected = name in REJECTED_BUILTINS
        macro = table.get(name)
        if macro is None and not rejected:
            continue
        after = m.end()
        while after < len(text) and text[after] in " \t":
            after += 1
        has_parens = after < len(text) and text[after] == "("
        if rejected:
            if has_parens:
                return m, None, None, after
            continue
        if has_parens:
            try:
                args, end = _parse_invocation_args(text, after)
            except MalformedDefine:
                continue  # stray parens, not an invocation on this line
            return m, macro, [_strip_quotes(a) for a in args], end
        if macro.max_param == 0:
            # bare invocation; arity-0 macros expand without parentheses
            return m, macro, [], m.end()
    return None


def _normalize(text: str) -> str:
    return _WS_RUN_RE.sub(" ", text).strip()


def expand(
    text: str,
    table: MacroTable,
    path: str | None = None,
    strict: bool = True,
) -> ExpansionResult:
    """Expand macro invocations to fixpoint, tracking a per-line macro chain.

    Lines containing no invocation pass through byte-identical; expanded
    lines are whitespace-normalized. In lenient mode (strict=False) arity and
    depth errors leave the offending invocation in place and record a
    diagnostic instead of raising.
    """
    out: list[ExpandedLine] = []
    diagnostics: list[str] = []

    for lineno, raw in enumerate(text.splitlines(), 1):
        out.extend(_expand_line(raw, lineno, table, path, strict, diagnostics))

    return ExpansionResult(out, diagnostics, trailing_newline=text.endswith("\n"))


def _expand_line(
    raw: str,
    lineno: int,
    table: MacroTable,
    path: str | None,
    strict: bool,
    diagnostics: list[str],
) -> list[ExpandedLine]:
    loc = f"{path or '<text>'}:{lineno}"
    # LIFO stack keeps spliced multi-line bodies in textual order.
    # (text, chain, depth, scan_start); scan_start skips past invocations
    # deliberately left unexpanded in lenient mode.
    work: list[tuple[str, tuple[str, ...], int, int]] = [(raw, (), 0, 0)]
    done: list[ExpandedLine] = []

    while work:
        cur, chain, depth, start = work.pop()
        found = _find_invocation(cur[start:], table)
        if found is None:
            text_out = _normalize(cur) if chain else cur
            done.append(ExpandedLine(text_out, lineno, chain))
            continue

        m, macro, args, end = found
        m_start, m_end = start + m.start(), start + end
        if macro is None:
            diagnostics.append(f"{loc}: unsupported m4 builtin '{m.group(0)}', line passed through")
            done.append(ExpandedLine(raw, lineno, ()))
            continue
        if depth + 1 > MAX_EXPANSION_DEPTH:
            err = ExpansionDepthExceeded(
                f"macro expansion exceeded depth {MAX_EXPANSION_DEPTH} (chain: {' -> '.join(chain)})",
                path=path,
                line=lineno,
            )
            if strict:
                raise err
            diagnostics.append(str(err))
            done.append(ExpandedLine(cur, lineno, chain))
            continue
        assert args is not None
        if len(args) == 1 and args[0].strip() == "" and macro.max_param == 0:
            args = []  # name() with empty parens
        if len(args) < macro.max_param:
            err = ArityMismatch(
                f"macro '{macro.name}' needs {macro.max_param} argument(s), got {len(args)}",
                path=path,
                line=lineno,
            )
            if strict:
                raise err
            diagnostics.append(str(err))
            work.append((cur, chain, depth, m_end))
            continue

        spliced = cur[:m_start] + _substitute(macro.body, args) + cur[m_end:]
        new_chain = chain + (macro.name,)
        for part in reversed(spliced.split("\n")):
            work.append((part, new_chain, depth + 1, 0))

    return done
