"""Two-table SQLite fixture for pipeline end-to-end runs."""

import sqlite3

ROWS_A = [(1, 10, "x", 1.5), (2, 20, "y", 2.5), (3, 30, "z", 3.5), (4, 40, "x", 4.5)]
ROWS_B = [(1, 1, "u", 100), (2, 1, "v", 200), (3, 2, "w", 300)]

DDL = """
CREATE TABLE A (
  pk INTEGER PRIMARY KEY,
  a1 INTEGER,
  a2 TEXT,
  a3 REAL
);
CREATE TABLE B (
  pk INTEGER PRIMARY KEY,
  fkA INTEGER REFERENCES A(pk),
  b1 TEXT,
  b2 INTEGER
);
"""


def build_pipeline_db(path) -> None:
    con = sqlite3.connect(path)
    try:
        con.executescript(DDL)
        con.executemany("INSERT INTO A VALUES (?,?,?,?)", ROWS_A)
        con.executemany("INSERT INTO B VALUES (?,?,?,?)", ROWS_B)
        con.commit()
    finally:
        con.close()

# knobs shared by the replay-store authoring script, the tests, and the CLI
# invocations that replay against the committed store — they must agree or
# the replay keys drift
PIPELINE_SUBSCHEMA_KW = dict(window_w=2, stride_s=1, table_counts_tc=(2, 1), shuffle_seed=0)
PIPELINE_GENERATION_KW = dict(n_per_level=2, min_col_example_count=4, max_repair_attempts=1)
