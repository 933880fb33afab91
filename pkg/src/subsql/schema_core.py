"""Database schema model, introspection, and the table join graph."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass, field


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnDef:
    name: str
    declared_type: str = ""
    description: str | None = None
    sample_values: tuple[str, ...] = ()


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple[ColumnDef, ...]
    primary_key: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.columns:
            raise SchemaError(f"table {self.name!r} has no columns")
        names = {c.name.casefold() for c in self.columns}
        if len(names) != len(self.columns):
            raise SchemaError(f"duplicate column names in table {self.name!r}")
        for pk in self.primary_key:
            if pk.casefold() not in names:
                raise SchemaError(f"primary key {pk!r} not a column of {self.name!r}")

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def has_column(self, name: str) -> bool:
        want = name.casefold()
        return any(c.name.casefold() == want for c in self.columns)


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass
class DatabaseSchema:
    db_id: str
    tables: list[TableDef]
    foreign_keys: list[ForeignKey] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for t in self.tables:
            key = t.name.casefold()
            if key in seen:
                raise SchemaError(f"duplicate table name {t.name!r}")
            seen.add(key)
        self._by_name = {t.name.casefold(): t for t in self.tables}
        for fk in self.foreign_keys:
            self._check_endpoint(fk.from_table, fk.from_column)
            self._check_endpoint(fk.to_table, fk.to_column)
            if (fk.from_table.casefold(), fk.from_column.casefold()) == (
                fk.to_table.casefold(),
                fk.to_column.casefold(),
            ):
                raise SchemaError(f"self-loop foreign key on {fk.from_table}.{fk.from_column}")

    def _check_endpoint(self, table: str, column: str):
        t = self._by_name.get(table.casefold())
        if t is None:
            raise SchemaError(f"foreign key references unknown table {table!r}")
        if not t.has_column(column):
            raise SchemaError(f"foreign key references unknown column {table}.{column}")

    def table(self, name: str) -> TableDef:
        t = self._by_name.get(name.casefold())
        if t is None:
            raise SchemaError(f"unknown table {name!r}")
        return t

    def has_table(self, name: str) -> bool:
        return name.casefold() in self._by_name

    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    def all_columns(self) -> list[tuple[str, str]]:
        """Every (table, column) pair in schema order."""
        return [(t.name, c.name) for t in self.tables for c in t.columns]

    def to_dict(self) -> dict:
        return {
            "db_id": self.db_id,
            "tables": [
                {
                    "name": t.name,
                    "columns": [
                        {
                            "name": c.name,
                            "declared_type": c.declared_type,
                            "description": c.description,
                            "sample_values": list(c.sample_values),
                        }
                        for c in t.columns
                    ],
                    "primary_key": list(t.primary_key),
                }
                for t in self.tables
            ],
            "foreign_keys": [
                {
                    "from_table": fk.from_table,
                    "from_column": fk.from_column,
                    "to_table": fk.to_table,
                    "to_column": fk.to_column,
                }
                for fk in self.foreign_keys
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatabaseSchema":
        tables = [
            TableDef(
                name=t["name"],
                columns=tuple(
                    ColumnDef(
                        name=c["name"],
                        declared_type=c.get("declared_type", ""),
                        description=c.get("description"),
                        sample_values=tuple(c.get("sample_values", ())),
                    )
                    for c in t["columns"]
                ),
                primary_key=tuple(t.get("primary_key", ())),
            )
            for t in d["tables"]
        ]
        fks = [
            ForeignKey(f["from_table"], f["from_column"], f["to_table"], f["to_column"])
            for f in d.get("foreign_keys", ())
        ]
        return cls(db_id=d["db_id"], tables=tables, foreign_keys=fks)


SAMPLE_VALUE_CAP = 5
SAMPLE_VALUE_MAXLEN = 64


def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def introspect_schema(
    db_path: str,
    overrides: str | None = None,
    sample_cap: int = SAMPLE_VALUE_CAP,
) -> DatabaseSchema:
    """Read tables, columns, keys, and FKs from a SQLite file.

    `overrides` optionally names a JSON file with a list of
    {from_table, from_column, to_table, to_column} entries; these FKs are
    merged with the natively declared ones (validated, deduplicated).
    Views and virtual tables are excluded.
    """
    import os

    db_id = os.path.splitext(os.path.basename(db_path))[0]
    try:
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    except sqlite3.Error as e:
        raise SchemaError(f"cannot open database {db_path!r}: {e}") from e
    try:
        cur = conn.cursor()
        try:
            rows = cur.execute(
                "SELECT name FROM sqlite_master "
                "WHERE type='table' AND name NOT LIKE 'sqlite_%' "
                "AND sql NOT LIKE 'CREATE VIRTUAL%'"
            ).fetchall()
        except sqlite3.DatabaseError as e:
            raise SchemaError(f"cannot read database {db_path!r}: {e}") from e
        table_names = [r[0] for r in rows]

        tables = []
        fks: list[ForeignKey] = []
        for tname in table_names:
            cols = []
            pk_cols: list[tuple[int, str]] = []
            for _, cname, ctype, _notnull, _dflt, pk in cur.execute(
                f"PRAGMA table_info({_quote_ident(tname)})"
            ).fetchall():
                samples = _sample_values(cur, tname, cname, sample_cap)
                cols.append(ColumnDef(name=cname, declared_type=ctype or "", sample_values=samples))
                if pk:
                    pk_cols.append((pk, cname))
            pk_cols.sort()
            tables.append(
                TableDef(
                    name=tname,
                    columns=tuple(cols),
                    primary_key=tuple(name for _, name in pk_cols),
                )
            )
        schema = DatabaseSchema(db_id=db_id, tables=tables, foreign_keys=[])

        for tname in table_names:
            for row in cur.execute(f"PRAGMA foreign_key_list({_quote_ident(tname)})").fetchall():
                # row: (id, seq, target_table, from_col, to_col, ...)
                _, _, target, from_col, to_col = row[:5]
                if to_col is None:
                    # implicit reference to the target's primary key
                    target_def = schema.table(target)
                    if not target_def.primary_key:
                        continue
                    to_col = target_def.primary_key[0]
                fks.append(ForeignKey(tname, from_col, target, to_col))
    finally:
        conn.close()

    if overrides:
        with open(overrides, encoding="utf-8") as f:
            extra = json.load(f)
        for entry in extra:
            fks.append(
                ForeignKey(
                    entry["from_table"],
                    entry["from_column"],
                    entry["to_table"],
                    entry["to_column"],
                )
            )

    deduped: list[ForeignKey] = []
    seen: set[tuple] = set()
    for fk in fks:
        key = (
            fk.from_table.casefold(),
            fk.from_column.casefold(),
            fk.to_table.casefold(),
            fk.to_column.casefold(),
        )
        if key not in seen:
            seen.add(key)
            deduped.append(fk)

    return DatabaseSchema(db_id=schema.db_id, tables=schema.tables, foreign_keys=deduped)


def _sample_values(cur, table: str, column: str, cap: int) -> tuple[str, ...]:
    if cap <= 0:
        return ()
    try:
        rows = cur.execute(
            f"SELECT DISTINCT {_quote_ident(column)} FROM {_quote_ident(table)} "
            f"WHERE {_quote_ident(column)} IS NOT NULL ORDER BY 1 LIMIT ?",
            (cap,),
        ).fetchall()
    except sqlite3.Error:
        return ()
    return tuple(str(r[0])[:SAMPLE_VALUE_MAXLEN] for r in rows)


def connection_columns(schema: DatabaseSchema, table: str) -> set[str]:
    """PK columns plus any column on either side of an FK touching the table."""
    t = schema.table(table)
    want = t.name.casefold()
    out = {pk for pk in t.primary_key}
    for fk in schema.foreign_keys:
        if fk.from_table.casefold() == want:
            out.add(_original_case(t, fk.from_column))
        if fk.to_table.casefold() == want:
            out.add(_original_case(t, fk.to_column))
    return out


def _original_case(table: TableDef, column: str) -> str:
    want = column.casefold()
    for c in table.columns:
        if c.name.casefold() == want:
            return c.name
    return column


def joinable_graph(schema: DatabaseSchema) -> dict[str, set[str]]:
    """Undirected graph over table names; edge iff an FK connects the pair."""
    adj: dict[str, set[str]] = {t.name: set() for t in schema.tables}
    for fk in schema.foreign_keys:
        a = schema.table(fk.from_table).name
        b = schema.table(fk.to_table).name
        if a != b:
            adj[a].add(b)
            adj[b].add(a)
    return adj


def equijoin_graph(schema: DatabaseSchema) -> dict[str, set[str]]:
    """Join graph including derived edges through shared FK targets.

    Two tables are joinable if an FK links them directly, or if both hold FK
    columns referencing the same column of a third table — their rows can be
    equi-joined on the shared referenced value even without a direct FK.
    """
    adj = joinable_graph(schema)
    by_target: dict[tuple[str, str], set[str]] = {}
    for fk in schema.foreign_keys:
        target = (fk.to_table.casefold(), fk.to_column.casefold())
        by_target.setdefault(target, set()).add(schema.table(fk.from_table).name)
    for referrers in by_target.values():
        names = sorted(referrers)
        for i, a in enumerate(names):
            for b in names[i + 1 :]:
                adj[a].add(b)
                adj[b].add(a)
    return adj


def format_schema_text(schema: DatabaseSchema, per_table_columns: dict[str, list[str]] | None = None) -> str:
    """Human/LLM-readable schema block for prompts.

    per_table_columns restricts to a sub-schema view: only the listed tables
    (in schema order) and only their listed columns. Foreign keys with both
    endpoints visible are included.
    """
    if per_table_columns is None:
        views = {t.name: t.column_names() for t in schema.tables}
    else:
        lookup = {t.casefold(): list(cols) for t, cols in per_table_columns.items()}
        views = {}
        for table in schema.tables:
            if table.name.casefold() in lookup:
                views[table.name] = lookup[table.name.casefold()]

    lines = [f"Database: {schema.db_id}"]
    visible: set[tuple[str, str]] = set()
    for table_name, col_names in views.items():
        table = schema.table(table_name)
        wanted = {c.casefold() for c in col_names}
        lines.append(f"Table: {_quote_ident(table.name)}")
        for col in table.columns:
            if col.name.casefold() not in wanted:
                continue
            visible.add((table.name.casefold(), col.name.casefold()))
            parts = [f"  - {_quote_ident(col.name)}"]
            if col.declared_type:
                parts.append(col.declared_type)
            if col.name in table.primary_key:
                parts.append("[primary key]")
            if col.description:
                parts.append(f"-- {col.description}")
            if col.sample_values:
                shown = ", ".join(repr(v) for v in col.sample_values[:3])
                parts.append(f"(examples: {shown})")
            lines.append(" ".join(parts))
    fk_lines = []
    for fk in schema.foreign_keys:
        if (fk.from_table.casefold(), fk.from_column.casefold()) in visible and (
            fk.to_table.casefold(), fk.to_column.casefold()) in visible:
            fk_lines.append(
                f"  - {fk.from_table}.{_quote_ident(fk.from_column)} -> {fk.to_table}.{_quote_ident(fk.to_column)}"
            )
    if fk_lines:
        lines.append("Foreign keys:")
        lines.extend(fk_lines)
    return "\n".join(lines)
