"""SQL analysis for the SQLite dialect: tokenizing, schema-element extraction,
complexity features, and read-only execution.

The parser handles SELECT statements (optionally WITH-prefixed or compound),
the only statement class the pipeline produces. Extraction is scope-aware:
aliases resolve to base tables through nested subqueries and CTEs, and a
column exported by a derived table or CTE is attributed where it is defined,
not where it is re-read.
"""

from __future__ import annotations

import sqlite3
import time
from dataclasses import dataclass, field

from .schema_core import DatabaseSchema


class SqlParseError(ValueError):
    def __init__(self, message: str, pos: int = -1):
        super().__init__(f"{message} (at offset {pos})" if pos >= 0 else message)
        self.pos = pos


# ---------------------------------------------------------------- tokenizer

WORD = "word"
QIDENT = "qident"
STRING = "string"
NUMBER = "number"
OP = "op"
SUBQ = "subq"  # placeholder emitted by the parser, never by the tokenizer


@dataclass
class Token:
    kind: str
    value: str
    pos: int
    child: "Scope | None" = None  # parsed subquery behind a SUBQ placeholder


_WORD_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_WORD_CHARS = _WORD_START | set("0123456789$")
_DIGITS = set("0123456789")


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch in " \t\r\n\f":
            i += 1
            continue
        if ch == "-" and sql.startswith("--", i):
            j = sql.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if ch == "/" and sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            if j < 0:
                raise SqlParseError("unterminated block comment", i)
            i = j + 2
            continue
        if ch == "'":
            value, i = _read_quoted(sql, i, "'")
            tokens.append(Token(STRING, value, i))
            continue
        if ch == '"':
            value, i = _read_quoted(sql, i, '"')
            tokens.append(Token(QIDENT, value, i))
            continue
        if ch == "`":
            value, i = _read_quoted(sql, i, "`")
            tokens.append(Token(QIDENT, value, i))
            continue
        if ch == "[":
            j = sql.find("]", i + 1)
            if j < 0:
                raise SqlParseError("unterminated [identifier]", i)
            tokens.append(Token(QIDENT, sql[i + 1 : j], i))
            i = j + 1
            continue
        if ch in _DIGITS or (ch == "." and i + 1 < n and sql[i + 1] in _DIGITS):
            j = i
            seen_e = False
            while j < n and (sql[j] in _DIGITS or sql[j] in ".eE+-"):
                if sql[j] in "+-" and (j == i or sql[j - 1] not in "eE"):
                    break
                if sql[j] in "eE":
                    if seen_e:
                        break
                    seen_e = True
                j += 1
            tokens.append(Token(NUMBER, sql[i:j], i))
            i = j
            continue
        if ch in _WORD_START:
            j = i
            while j < n and sql[j] in _WORD_CHARS:
                j += 1
            tokens.append(Token(WORD, sql[i:j], i))
            i = j
            continue
        for two in ("<=", ">=", "<>", "!=", "==", "||", "->", ">>", "<<"):
            if sql.startswith(two, i):
                tokens.append(Token(OP, two, i))
                i += 2
                break
        else:
            tokens.append(Token(OP, ch, i))
            i += 1
    return tokens


def _read_quoted(sql: str, start: int, quote: str) -> tuple[str, int]:
    # doubled quote chars escape themselves
    i = start + 1
    parts = []
    n = len(sql)
    while i < n:
        j = sql.find(quote, i)
        if j < 0:
            break
        if j + 1 < n and sql[j + 1] == quote:
            parts.append(sql[i : j + 1])
            i = j + 2
            continue
        parts.append(sql[i:j])
        return "".join(parts), j + 1
    raise SqlParseError(f"unterminated {quote}...{quote}", start)


KEYWORDS = {
    "select", "from", "where", "group", "by", "having", "order", "limit",
    "offset", "as", "on", "using", "join", "left", "right", "full", "outer",
    "inner", "cross", "natural", "and", "or", "not", "in", "exists", "between",
    "like", "glob", "regexp", "match", "escape", "is", "null", "isnull",
    "notnull", "distinct", "all", "union", "intersect", "except", "case",
    "when", "then", "else", "end", "cast", "collate", "asc", "desc", "with",
    "recursive", "values", "over", "partition", "rows", "range", "groups",
    "preceding", "following", "unbounded", "current", "row", "exclude",
    "ties", "others", "window", "filter",
}

AGGREGATE_FUNCS = {"count", "sum", "avg", "min", "max", "total"}

_CLAUSE_STARTERS = {"from", "where", "group", "having", "window", "order", "limit"}
_COMPOUND_OPS = {"union", "intersect", "except"}
_JOIN_WORDS = {"join", "left", "right", "full", "outer", "inner", "cross", "natural"}


# ------------------------------------------------------------------ scopes

@dataclass
class _Source:
    """One FROM-clause entry."""

    kind: str  # "base" | "derived" | "cte" | "opaque"
    table: str | None = None  # base-table or CTE name as written
    alias: str | None = None
    scope: "Scope | None" = None  # derived-table body

    def answers_to(self, name: str) -> bool:
        want = name.casefold()
        if self.alias is not None:
            return self.alias.casefold() == want
        return self.table is not None and self.table.casefold() == want


@dataclass
class Scope:
    parent: "Scope | None" = None
    sources: list[_Source] = field(default_factory=list)
    select_aliases: set[str] = field(default_factory=set)
    ctes: dict[str, "Scope"] = field(default_factory=dict)
    children: list["Scope"] = field(default_factory=list)
    # (clause name, token span) pairs to scan for column references
    spans: list[tuple[str, list["Token"]]] = field(default_factory=list)
    using_columns: list[str] = field(default_factory=list)
    join_count: int = 0

    def lookup_cte(self, name: str) -> "Scope | None":
        want = name.casefold()
        s = self
        while s is not None:
            for cte_name, cte_scope in s.ctes.items():
                if cte_name.casefold() == want:
                    return cte_scope
            s = s.parent
        return None


# ------------------------------------------------------------------ parser

class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    # -- cursor helpers

    def peek(self, ahead: int = 0) -> Token | None:
        j = self.i + ahead
        return self.toks[j] if j < len(self.toks) else None

    def at_word(self, *words: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == WORD and t.value.casefold() in words

    def at_op(self, value: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == OP and t.value == value

    def take(self) -> Token:
        t = self.peek()
        if t is None:
            raise SqlParseError("unexpected end of input", -1)
        self.i += 1
        return t

    def expect_op(self, value: str) -> Token:
        t = self.peek()
        if t is None or t.kind != OP or t.value != value:
            raise SqlParseError(f"expected {value!r}", t.pos if t else -1)
        return self.take()

    def expect_word(self, word: str):
        if not self.at_word(word):
            t = self.peek()
            raise SqlParseError(f"expected {word.upper()}", t.pos if t else -1)
        self.take()

    # -- grammar

    def parse_statement(self) -> Scope:
        scope = self.parse_select(parent=None)
        t = self.peek()
        if t is not None and not (t.kind == OP and t.value == ";"):
            raise SqlParseError(f"unexpected trailing token {t.value!r}", t.pos)
        return scope

    def parse_select(self, parent: Scope | None) -> Scope:
        scope = Scope(parent=parent)
        if parent is not None:
            parent.children.append(scope)
        self._parse_with_and_body(scope)
        return scope

    def _parse_with_and_body(self, scope: Scope):
        if self.at_word("with"):
            self.take()
            if self.at_word("recursive"):
                self.take()
            while True:
                name_tok = self.take()
                if name_tok.kind not in (WORD, QIDENT):
                    raise SqlParseError("expected CTE name", name_tok.pos)
                if self.at_op("("):  # optional output-column list: derived names
                    self._skip_parens()
                self.expect_word("as")
                self.expect_op("(")
                body = Scope(parent=scope)
                scope.children.append(body)
                # registered before its body parses, so it can reference itself
                scope.ctes[name_tok.value] = body
                self._parse_with_and_body(body)
                self.expect_op(")")
                if self.at_op(","):
                    self.take()
                    continue
                break
        self._parse_compound(scope)

    def _parse_compound(self, scope: Scope):
        """select_core (compound_op select_core)* [ORDER BY ...] [LIMIT ...].

        The first core is `scope` itself; later arms become child scopes whose
        parent is `scope` (CTE visibility). Trailing ORDER BY/LIMIT attach to
        the first core, whose output aliases name the compound's columns.
        """
        self._parse_core(scope)
        while self.at_word(*_COMPOUND_OPS):
            self.take()
            if self.at_word("all"):
                self.take()
            arm = Scope(parent=scope)
            scope.children.append(arm)
            self._parse_core(arm)
        if self.at_word("order"):
            self.take()
            self.expect_word("by")
            scope.spans.append(("order_by", self._read_expr_span(scope, stop_words={"limit"})))
        if self.at_word("limit"):
            self.take()
            scope.spans.append(("limit", self._read_expr_span(scope, stop_words=set())))

    def _parse_core(self, scope: Scope):
        if self.at_word("values"):
            self.take()
            while self.at_op("("):
                self._skip_parens()
                if self.at_op(","):
                    self.take()
                    continue
                break
            return
        self.expect_word("select")
        if self.at_word("distinct", "all"):
            self.take()
        scope.spans.append(("select_list", self._read_expr_span(scope, stop_words=_CLAUSE_STARTERS)))
        if self.at_word("from"):
            self.take()
            self._parse_from(scope)
        if self.at_word("where"):
            self.take()
            scope.spans.append(("where", self._read_expr_span(scope, stop_words=_CLAUSE_STARTERS)))
        if self.at_word("group"):
            self.take()
            self.expect_word("by")
            scope.spans.append(("group_by", self._read_expr_span(scope, stop_words=_CLAUSE_STARTERS)))
        if self.at_word("having"):
            self.take()
            scope.spans.append(("having", self._read_expr_span(scope, stop_words=_CLAUSE_STARTERS)))
        if self.at_word("window"):
            self.take()
            span = self._read_expr_span(scope, stop_words={"order", "limit"})
            scope.spans.append(("window", _strip_window_names(span)))

    def _parse_from(self, scope: Scope):
        self._parse_source(scope)
        while True:
            if self.at_op(","):
                self.take()
                scope.join_count += 1
                self._parse_source(scope)
                continue
            if self.at_word(*_JOIN_WORDS):
                while self.at_word(*_JOIN_WORDS - {"join"}):
                    self.take()
                self.expect_word("join")
                scope.join_count += 1
                self._parse_source(scope)
                if self.at_word("on"):
                    self.take()
                    scope.spans.append(
                        (
                            "join_on",
                            self._read_expr_span(
                                scope, stop_words=_CLAUSE_STARTERS | _JOIN_WORDS, stop_comma=True
                            ),
                        )
                    )
                elif self.at_word("using"):
                    self.take()
                    self.expect_op("(")
                    while True:
                        t = self.take()
                        if t.kind in (WORD, QIDENT):
                            scope.using_columns.append(t.value)
                        if self.at_op(","):
                            self.take()
                            continue
                        break
                    if not (self.toks[self.i - 1].kind == OP and self.toks[self.i - 1].value == ")"):
                        self.expect_op(")")
                continue
            break

    def _parse_source(self, scope: Scope):
        if self.at_op("("):
            nxt = self.peek(1)
            if nxt is not None and nxt.kind == WORD and nxt.value.casefold() in ("select", "with", "values"):
                self.take()
                body = self.parse_select(parent=scope)
                self.expect_op(")")
                alias = self._maybe_alias()
                scope.sources.append(_Source(kind="derived", alias=alias, scope=body))
                return
            # parenthesized join — its sources flatten into this scope
            self.take()
            self._parse_from(scope)
            self.expect_op(")")
            self._maybe_alias()
            return
        t = self.take()
        if t.kind not in (WORD, QIDENT):
            raise SqlParseError(f"expected table name, got {t.value!r}", t.pos)
        name = t.value
        if self.at_op("."):  # attached-database prefix: db.table
            self.take()
            t2 = self.take()
            if t2.kind not in (WORD, QIDENT):
                raise SqlParseError("expected table name after '.'", t2.pos)
            name = t2.value
        if self.at_op("("):  # table-valued function — opaque source
            self._skip_parens()
            alias = self._maybe_alias()
            scope.sources.append(_Source(kind="opaque", alias=alias))
            return
        alias = self._maybe_alias()
        cte = scope.lookup_cte(name)
        if cte is not None:
            scope.sources.append(_Source(kind="cte", table=name, alias=alias, scope=cte))
        else:
            scope.sources.append(_Source(kind="base", table=name, alias=alias))

    def _maybe_alias(self) -> str | None:
        if self.at_word("as"):
            self.take()
            t = self.take()
            if t.kind not in (WORD, QIDENT):
                raise SqlParseError("expected alias after AS", t.pos)
            return t.value
        t = self.peek()
        if t is not None and (
            t.kind == QIDENT or (t.kind == WORD and t.value.casefold() not in KEYWORDS)
        ):
            self.take()
            return t.value
        return None

    def _skip_parens(self):
        self.expect_op("(")
        depth = 1
        while depth:
            t = self.take()
            if t.kind == OP and t.value == "(":
                depth += 1
            elif t.kind == OP and t.value == ")":
                depth -= 1

    def _read_expr_span(self, owner: Scope, stop_words: set[str], stop_comma: bool = False) -> list[Token]:
        """Collect expression tokens until a top-level clause boundary.

        Inline subqueries are parsed in place (as children of `owner`) and
        re-emitted as SUBQ placeholders so the scan treats them as atoms.
        """
        span: list[Token] = []
        depth = 0
        while True:
            t = self.peek()
            if t is None:
                break
            if t.kind == OP and t.value == ";":
                break
            if depth == 0 and t.kind == OP and t.value == ")":
                break
            if depth == 0 and t.kind == WORD:
                low = t.value.casefold()
                if low in stop_words or low in _COMPOUND_OPS:
                    break
                if stop_comma and low in _JOIN_WORDS:
                    break
            if depth == 0 and stop_comma and t.kind == OP and t.value == ",":
                break
            if t.kind == OP and t.value == "(":
                nxt = self.peek(1)
                if nxt is not None and nxt.kind == WORD and nxt.value.casefold() in ("select", "with", "values"):
                    self.take()
                    body = self.parse_select(parent=owner)
                    self.expect_op(")")
                    span.append(Token(SUBQ, "(subquery)", t.pos, child=body))
                    continue
                depth += 1
                span.append(self.take())
                continue
            if t.kind == OP and t.value == ")":
                depth -= 1
                span.append(self.take())
                continue
            span.append(self.take())
        return span


def _strip_window_names(span: list[Token]) -> list[Token]:
    """Drop the `name AS` prefixes of WINDOW-clause definitions."""
    out: list[Token] = []
    items = _split_top_level(span, ",")
    for item in items:
        if (
            len(item) >= 2
            and item[0].kind in (WORD, QIDENT)
            and item[1].kind == WORD
            and item[1].value.casefold() == "as"
        ):
            item = item[2:]
        out.extend(item)
    return out


def parse_sql(sql: str) -> tuple[Scope, list[Token]]:
    """Parse one SELECT statement into a scope tree; returns (root, tokens)."""
    tokens = tokenize(sql)
    if not tokens:
        raise SqlParseError("empty statement", 0)
    return _Parser(tokens).parse_statement(), tokens


# ------------------------------------------------------------- classification

def _match_parens(tokens: list[Token]) -> dict[int, int]:
    stack: list[int] = []
    match: dict[int, int] = {}
    for idx, t in enumerate(tokens):
        if t.kind == OP and t.value == "(":
            stack.append(idx)
        elif t.kind == OP and t.value == ")":
            if stack:
                match[stack.pop()] = idx
    return match


def _aggregation_flags(tokens: list[Token]) -> tuple[bool, bool]:
    """(has_aggregation, has_window) over the whole token stream.

    An aggregate call directly modified by OVER is a window function and does
    not count toward aggregation.
    """
    match = _match_parens(tokens)
    has_agg = False
    has_window = False
    for idx, t in enumerate(tokens):
        if t.kind != WORD:
            continue
        low = t.value.casefold()
        if low == "over":
            has_window = True
            continue
        if low not in AGGREGATE_FUNCS:
            continue
        nxt = tokens[idx + 1] if idx + 1 < len(tokens) else None
        if nxt is None or nxt.kind != OP or nxt.value != "(":
            continue
        close = match.get(idx + 1)
        if close is None:
            continue
        k = close + 1
        if k < len(tokens) and tokens[k].kind == WORD and tokens[k].value.casefold() == "filter":
            if k + 1 < len(tokens) and tokens[k + 1].kind == OP and tokens[k + 1].value == "(":
                follow = match.get(k + 1)
                if follow is not None:
                    k = follow + 1
        if k < len(tokens) and tokens[k].kind == WORD and tokens[k].value.casefold() == "over":
            continue  # windowed call
        has_agg = True
    return has_agg, has_window


def _total_joins(scope: Scope) -> int:
    return scope.join_count + sum(_total_joins(child) for child in scope.children)


def classify_features(sql: str) -> tuple[int, bool, bool]:
    """(join_count, has_aggregation, has_window) for one statement."""
    root, tokens = parse_sql(sql)
    has_agg, has_window = _aggregation_flags(tokens)
    return _total_joins(root), has_agg, has_window


# --------------------------------------------------------------- extraction

@dataclass
class ParsedQuery:
    raw_sql: str
    referenced: set[tuple[str, str]]
    referenced_tables: set[str]
    join_count: int
    has_aggregation: bool
    has_window: bool
    diagnostics: list[str] = field(default_factory=list)


class _Extractor:
    def __init__(self, schema: DatabaseSchema):
        self.schema = schema
        self.referenced: set[tuple[str, str]] = set()
        self.referenced_tables: set[str] = set()
        self.diagnostics: list[str] = []

    def run(self, scope: Scope):
        for src in scope.sources:
            if src.kind == "base":
                if self.schema.has_table(src.table):
                    self.referenced_tables.add(self.schema.table(src.table).name)
                else:
                    self.diagnostics.append(f"unknown table {src.table!r}")
        for col in scope.using_columns:
            self._resolve_using(scope, col)
        for name, span in scope.spans:
            self._scan_span(scope, span, in_select_list=(name == "select_list"))
        for child in scope.children:
            self.run(child)

    # -- span scanning

    def _scan_span(self, scope: Scope, span: list[Token], in_select_list: bool):
        if in_select_list:
            span = self._strip_select_aliases(scope, span)
        i = 0
        depth = 0
        n = len(span)
        while i < n:
            t = span[i]
            if t.kind == OP:
                if t.value == "(":
                    depth += 1
                elif t.value == ")":
                    depth -= 1
                elif t.value == "*" and in_select_list and depth == 0 and _star_context(span, i):
                    self._expand_star(scope, None)
                i += 1
                continue
            if t.kind in (STRING, NUMBER, SUBQ):
                i += 1
                continue
            if t.kind == WORD and t.value.casefold() in KEYWORDS:
                low = t.value.casefold()
                if low in ("as", "collate"):
                    i += 2  # alias / collation / cast target type — never a column
                    continue
                if low == "over":
                    nxt = span[i + 1] if i + 1 < n else None
                    if nxt is not None and (
                        nxt.kind == QIDENT or (nxt.kind == WORD and nxt.value.casefold() not in KEYWORDS)
                    ):
                        i += 2  # named-window reference
                        continue
                i += 1
                continue
            if t.kind in (WORD, QIDENT):
                nxt = span[i + 1] if i + 1 < n else None
                if nxt is not None and nxt.kind == OP and nxt.value == "(":
                    i += 1  # function name
                    continue
                if nxt is not None and nxt.kind == OP and nxt.value == ".":
                    after = span[i + 2] if i + 2 < n else None
                    third = span[i + 3] if i + 3 < n else None
                    if after is None:
                        raise SqlParseError("dangling '.'", nxt.pos)
                    if third is not None and third.kind == OP and third.value == ".":
                        i += 2  # db.table.column — drop the database prefix
                        continue
                    if after.kind == OP and after.value == "*":
                        self._expand_star(scope, t.value)
                    elif after.kind in (WORD, QIDENT):
                        self._resolve_qualified(scope, t.value, after.value)
                    else:
                        raise SqlParseError(f"unexpected token after '.': {after.value!r}", after.pos)
                    i += 3
                    continue
                self._resolve_bare(scope, t.value)
                i += 1
                continue
            i += 1

    def _strip_select_aliases(self, scope: Scope, span: list[Token]) -> list[Token]:
        """Register output aliases and drop their tokens from the scan."""
        items = _split_top_level(span, ",")
        out: list[Token] = []
        for item in items:
            if len(item) >= 2:
                last, before = item[-1], item[-2]
                is_name = last.kind == QIDENT or (last.kind == WORD and last.value.casefold() not in KEYWORDS)
                if is_name:
                    if before.kind == WORD and before.value.casefold() == "as":
                        scope.select_aliases.add(last.value.casefold())
                        item = item[:-2]
                    elif (
                        before.kind in (QIDENT, STRING, NUMBER, SUBQ)
                        or (before.kind == WORD and (before.value.casefold() not in KEYWORDS or before.value.casefold() == "end"))
                        or (before.kind == OP and before.value in (")", "*"))
                    ):
                        scope.select_aliases.add(last.value.casefold())
                        item = item[:-1]
            out.extend(item)
            out.append(Token(OP, ",", -1))
        return out[:-1] if out else out

    # -- resolution

    def _sources_chain(self, scope: Scope):
        s = scope
        while s is not None:
            yield s
            s = s.parent

    def _resolve_qualified(self, scope: Scope, qualifier: str, column: str):
        for s in self._sources_chain(scope):
            for src in s.sources:
                if src.answers_to(qualifier):
                    if src.kind == "base":
                        self._add(src.table, column)
                    # derived/CTE/opaque outputs were counted where defined
                    return
        self.diagnostics.append(f"unresolvable qualifier {qualifier!r} for column {column!r}")

    def _resolve_bare(self, scope: Scope, column: str):
        for s in self._sources_chain(scope):
            base_hits = [
                src
                for src in s.sources
                if src.kind == "base"
                and self.schema.has_table(src.table)
                and self.schema.table(src.table).has_column(column)
            ]
            if base_hits:
                if len(base_hits) > 1:
                    self.diagnostics.append(
                        f"ambiguous column {column!r}; attributed to {base_hits[0].table!r}"
                    )
                self._add(base_hits[0].table, column)
                return
            if column.casefold() in s.select_aliases:
                return  # output alias (ORDER BY cnt, ...)
            if any(src.kind in ("derived", "cte", "opaque") for src in s.sources):
                return  # provided by a derived source; counted inside it
            if s.sources:
                break  # sourced scope without a match: stop, don't misattribute
        self.diagnostics.append(f"unresolvable column {column!r}")

    def _resolve_using(self, scope: Scope, column: str):
        hits = 0
        for src in scope.sources:
            if (
                src.kind == "base"
                and self.schema.has_table(src.table)
                and self.schema.table(src.table).has_column(column)
            ):
                self._add(src.table, column)
                hits += 1
        if hits == 0:
            self.diagnostics.append(f"unresolvable USING column {column!r}")

    def _expand_star(self, scope: Scope, qualifier: str | None):
        if qualifier is None:
            for s in self._sources_chain(scope):
                if s.sources:
                    for src in s.sources:
                        if src.kind == "base":
                            self._add_all(src.table)
                    return
            return
        for s in self._sources_chain(scope):
            for src in s.sources:
                if src.answers_to(qualifier):
                    if src.kind == "base":
                        self._add_all(src.table)
                    return
        self.diagnostics.append(f"unresolvable qualifier {qualifier!r} for '*'")

    def _add(self, table: str, column: str):
        if not self.schema.has_table(table):
            self.diagnostics.append(f"unknown table {table!r}")
            return
        tdef = self.schema.table(table)
        if not tdef.has_column(column):
            self.diagnostics.append(f"unknown column {table}.{column}")
            return
        want = column.casefold()
        original = next(c.name for c in tdef.columns if c.name.casefold() == want)
        self.referenced.add((tdef.name, original))
        self.referenced_tables.add(tdef.name)

    def _add_all(self, table: str):
        if not self.schema.has_table(table):
            self.diagnostics.append(f"unknown table {table!r}")
            return
        tdef = self.schema.table(table)
        for c in tdef.columns:
            self.referenced.add((tdef.name, c.name))
        self.referenced_tables.add(tdef.name)


def _star_context(span: list[Token], i: int) -> bool:
    # `SELECT *` or `SELECT a, *` — not the arithmetic `a * b`
    if i == 0:
        return True
    prev = span[i - 1]
    return prev.kind == OP and prev.value == ","


def _split_top_level(span: list[Token], sep: str) -> list[list[Token]]:
    out: list[list[Token]] = [[]]
    depth = 0
    for t in span:
        if t.kind == OP and t.value == "(":
            depth += 1
        elif t.kind == OP and t.value == ")":
            depth -= 1
        if depth == 0 and t.kind == OP and t.value == sep:
            out.append([])
        else:
            out[-1].append(t)
    return out


def extract_schema_elements(sql: str, schema: DatabaseSchema) -> ParsedQuery:
    """Resolve every column reference in the statement to (table, column) pairs."""
    root, tokens = parse_sql(sql)
    extractor = _Extractor(schema)
    extractor.run(root)
    has_agg, has_window = _aggregation_flags(tokens)
    return ParsedQuery(
        raw_sql=sql,
        referenced=extractor.referenced,
        referenced_tables=extractor.referenced_tables,
        join_count=_total_joins(root),
        has_aggregation=has_agg,
        has_window=has_window,
        diagnostics=extractor.diagnostics,
    )


# ---------------------------------------------------------------- execution

DEFAULT_TIMEOUT = 30.0
DEFAULT_ROW_CAP = 10_000


@dataclass
class ResultTable:
    column_labels: list[str]
    rows: list[list]
    truncated: bool = False

    def to_dict(self) -> dict:
        return {"columns": list(self.column_labels), "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultTable":
        return cls(column_labels=list(d["columns"]), rows=[list(r) for r in d["rows"]])


class QueryExecutionError(Exception):
    def __init__(self, message: str, timed_out: bool = False):
        super().__init__(message)
        self.timed_out = timed_out


def execute_query(
    sql: str,
    db_path: str,
    timeout: float = DEFAULT_TIMEOUT,
    row_cap: int = DEFAULT_ROW_CAP,
) -> ResultTable:
    """Run one query read-only; returns up to row_cap rows with labels.

    Timeouts abort through the engine's progress handler; the database file
    is opened read-only, so no statement can mutate it.
    """
    try:
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    except sqlite3.Error as e:
        raise QueryExecutionError(f"cannot open database: {e}") from e
    deadline = time.monotonic() + timeout
    timed_out = False

    def guard():
        nonlocal timed_out
        if time.monotonic() > deadline:
            timed_out = True
            return 1  # abort
        return 0

    conn.set_progress_handler(guard, 2_000)
    try:
        cur = conn.cursor()
        try:
            cur.execute(sql)
            rows = cur.fetchmany(row_cap + 1)
            while not timed_out and len(rows) <= row_cap:
                more = cur.fetchmany(row_cap + 1 - len(rows))
                if not more:
                    break
                rows.extend(more)
        except sqlite3.Error as e:
            if timed_out:
                raise QueryExecutionError(f"query timed out after {timeout:g}s", timed_out=True) from e
            raise QueryExecutionError(str(e)) from e
        truncated = len(rows) > row_cap
        if truncated:
            rows = rows[:row_cap]
        labels = [d[0] for d in cur.description] if cur.description else []
        out_rows = [[_to_cell(v) for v in row] for row in rows]
        return ResultTable(column_labels=labels, rows=out_rows, truncated=truncated)
    finally:
        conn.close()


def _to_cell(value):
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    return value
