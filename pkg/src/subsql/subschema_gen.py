"""Sub-schema construction: connected table subsets x sliding column windows."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from itertools import combinations, product

from .schema_core import DatabaseSchema, connection_columns, equijoin_graph

MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood); portable 64-bit stream."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def shuffle(self, items: list) -> None:
        # Fisher-Yates; modulo reduction keeps the stream consumption fixed
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def _table_seed(seed: int, table: str) -> int:
    digest = hashlib.sha256(f"{seed}:{table.casefold()}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class SubSchemaConfig:
    window_w: int = 3
    stride_s: int = 2
    table_counts_tc: tuple[int, ...] = (3, 2, 1)
    shuffle_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "table_counts_tc", tuple(self.table_counts_tc))
        if self.window_w < 1:
            raise ValueError("window_w must be >= 1")
        if self.stride_s < 1:
            raise ValueError("stride_s must be >= 1")
        if not self.table_counts_tc or any(n < 1 for n in self.table_counts_tc):
            raise ValueError("table_counts_tc must be non-empty positive ints")


@dataclass(frozen=True)
class TableLevelSubSchema:
    tables: tuple[str, ...]  # sorted


@dataclass
class SubSchema:
    id: str
    per_table_columns: dict[str, list[str]]
    parent_tables: TableLevelSubSchema

    def all_columns(self) -> list[tuple[str, str]]:
        return [(t, c) for t, cols in self.per_table_columns.items() for c in cols]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "tables": list(self.parent_tables.tables),
            "columns": {t: list(cols) for t, cols in self.per_table_columns.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubSchema":
        return cls(
            id=d["id"],
            per_table_columns={t: list(cols) for t, cols in d["columns"].items()},
            parent_tables=TableLevelSubSchema(tuple(sorted(d["tables"]))),
        )


def window_count(n: int, w: int, s: int) -> int:
    """Number of sliding windows over n items (always >= 1, even for n = 0)."""
    if n <= w:
        return 1
    return -(-(n - w) // s) + 1


def column_windows(non_conn: list[str], w: int, s: int) -> list[list[str]]:
    """Windows of width w at offsets stepping by s.

    Emission stops after the first window whose end reaches the end of the
    list, so the tail is covered exactly once; an empty input yields one
    empty window (the sub-schema reduces to connection columns only).
    """
    if w < 1 or s < 1:
        raise ValueError("w and s must be >= 1")
    windows = []
    i = 0
    while True:
        windows.append(non_conn[i : i + w])
        if i + w >= len(non_conn):
            break
        i += s
    return windows


def _connected(tables: tuple[str, ...], adj: dict[str, set[str]]) -> bool:
    if len(tables) <= 1:
        return True
    members = set(tables)
    seen = {tables[0]}
    frontier = [tables[0]]
    while frontier:
        cur = frontier.pop()
        for nxt in adj[cur] & members:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(members)


def gen_table_level(schema: DatabaseSchema, tc: list[int] | tuple[int, ...]) -> list[TableLevelSubSchema]:
    """All table subsets with size in tc whose induced join subgraph is connected."""
    if any(n < 1 for n in tc):
        raise ValueError("table counts must be >= 1")
    adj = equijoin_graph(schema)
    names = schema.table_names()
    sizes = sorted(set(n for n in tc if n <= len(names)))
    out = []
    for size in sizes:
        for combo in combinations(names, size):
            key = tuple(sorted(combo))
            if _connected(key, adj):
                out.append(TableLevelSubSchema(key))
    out.sort(key=lambda t: (t.tables, len(t.tables)))
    return out


def _shuffled_windows(schema: DatabaseSchema, config: SubSchemaConfig) -> dict[str, list[list[str]]]:
    """Per table: connection columns prepended to each shuffled window."""
    per_table: dict[str, list[list[str]]] = {}
    for table in schema.tables:
        conn = connection_columns(schema, table.name)
        conn_ordered = [c.name for c in table.columns if c.name in conn]
        non_conn = [c.name for c in table.columns if c.name not in conn]
        rng = SplitMix64(_table_seed(config.shuffle_seed, table.name))
        rng.shuffle(non_conn)
        per_table[table.name] = [
            conn_ordered + win for win in column_windows(non_conn, config.window_w, config.stride_s)
        ]
    return per_table


def gen_column_level(
    tlss: list[TableLevelSubSchema],
    schema: DatabaseSchema,
    config: SubSchemaConfig,
) -> list[SubSchema]:
    """Cartesian product of per-table column windows across each table set."""
    windows = _shuffled_windows(schema, config)
    schema_order = {name: i for i, name in enumerate(schema.table_names())}
    out: list[SubSchema] = []
    for ts in tlss:
        tables = sorted(ts.tables, key=lambda n: schema_order[n])
        for chosen in product(*(windows[t] for t in tables)):
            ss_id = f"{schema.db_id}:{len(out):06d}"
            out.append(
                SubSchema(
                    id=ss_id,
                    per_table_columns={t: list(cols) for t, cols in zip(tables, chosen)},
                    parent_tables=ts,
                )
            )
    return out


def construct_sub_schemas(schema: DatabaseSchema, config: SubSchemaConfig) -> list[SubSchema]:
    """Table-level enumeration followed by column-level windowing."""
    tlss = gen_table_level(schema, config.table_counts_tc)
    return gen_column_level(tlss, schema, config)
