"""Execution accuracy, soft cell-level F1, candidate-set bounds, and
schema-linking metrics over filtered schemas."""

import logging
import math
from dataclasses import dataclass, field

from .dataset_io import read_jsonl
from .schema_core import DatabaseSchema
from .sql_analysis import (
    QueryExecutionError,
    ResultTable,
    SqlParseError,
    execute_query,
    extract_schema_elements,
    tokenize,
)

log = logging.getLogger(__name__)

REL_TOL = 1e-6
ABS_TOL = 1e-9


class EvaluationError(ValueError):
    pass


# ------------------------------------------------------------ cell comparison


def _as_number(value):
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value)
    return None


def cells_equal(a, b) -> bool:
    """Null equals only null; numbers within relative 1e-6 (absolute 1e-9 near
    zero); text after trailing-whitespace strip; classes never cross-match."""
    if a is None or b is None:
        return a is None and b is None
    na, nb = _as_number(a), _as_number(b)
    if na is not None and nb is not None:
        return math.isclose(na, nb, rel_tol=REL_TOL, abs_tol=ABS_TOL)
    if na is not None or nb is not None:
        return False
    return str(a).rstrip() == str(b).rstrip()


def _cell_key(value):
    """Exact-equality bucket key; tolerant comparison handles the leftovers."""
    if value is None:
        return (0,)
    n = _as_number(value)
    if n is not None:
        return (1, n)
    return (2, str(value).rstrip())


def _rows_equal(a: list, b: list) -> bool:
    return len(a) == len(b) and all(cells_equal(x, y) for x, y in zip(a, b))


def has_top_level_order_by(sql: str) -> bool:
    """ORDER BY in the outermost statement (not inside any parentheses)."""
    try:
        tokens = tokenize(sql)
    except SqlParseError:
        return False
    depth = 0
    for i, tok in enumerate(tokens):
        if tok.kind == "op" and tok.value == "(":
            depth += 1
        elif tok.kind == "op" and tok.value == ")":
            depth -= 1
        elif (
            depth == 0
            and tok.kind == "word"
            and tok.value.upper() == "ORDER"
            and i + 1 < len(tokens)
            and tokens[i + 1].kind == "word"
            and tokens[i + 1].value.upper() == "BY"
        ):
            return True
    return False


# -------------------------------------------------------- execution accuracy


def _multiset_rows_match(pred_rows: list[list], gold_rows: list[list]) -> bool:
    if len(pred_rows) != len(gold_rows):
        return False
    # exact-key buckets clear identical rows fast, tolerant pass mops up
    buckets: dict[tuple, int] = {}
    for row in gold_rows:
        key = tuple(_cell_key(c) for c in row)
        buckets[key] = buckets.get(key, 0) + 1
    leftovers_pred = []
    for row in pred_rows:
        key = tuple(_cell_key(c) for c in row)
        if buckets.get(key, 0) > 0:
            buckets[key] -= 1
        else:
            leftovers_pred.append(row)
    leftovers_gold = []
    for row in gold_rows:
        key = tuple(_cell_key(c) for c in row)
        if buckets.get(key, 0) > 0:
            buckets[key] -= 1
            leftovers_gold.append(row)
    unmatched = list(leftovers_gold)
    for row in leftovers_pred:
        hit = next((k for k, g in enumerate(unmatched) if _rows_equal(row, g)), None)
        if hit is None:
            return False
        unmatched.pop(hit)
    return not unmatched


def execution_accuracy(pred: ResultTable, gold: ResultTable, gold_ordered: bool = False) -> int:
    """1 iff the result tables match with column order significant; row order
    ignored (multiset comparison) unless gold_ordered."""
    if len(pred.rows) != len(gold.rows):
        return 0
    if pred.rows and len(pred.rows[0]) != len(gold.rows[0]):
        return 0
    if gold_ordered:
        return int(all(_rows_equal(p, g) for p, g in zip(pred.rows, gold.rows)))
    return int(_multiset_rows_match(pred.rows, gold.rows))


# ------------------------------------------------------------------- soft F1


def _row_overlap(pred_row: list, gold_row: list) -> int:
    """Cells matchable one-to-one between two rows, column order ignored."""
    # exact keys first
    counts: dict[tuple, int] = {}
    for c in gold_row:
        k = _cell_key(c)
        counts[k] = counts.get(k, 0) + 1
    overlap = 0
    left_pred = []
    for c in pred_row:
        k = _cell_key(c)
        if counts.get(k, 0) > 0:
            counts[k] -= 1
            overlap += 1
        else:
            left_pred.append(c)
    return overlap + _tolerant_overlap(left_pred, _leftover_cells(gold_row, pred_row))


def _leftover_cells(gold_row: list, pred_row: list) -> list:
    counts: dict[tuple, int] = {}
    for c in pred_row:
        k = _cell_key(c)
        counts[k] = counts.get(k, 0) + 1
    out = []
    for c in gold_row:
        k = _cell_key(c)
        if counts.get(k, 0) > 0:
            counts[k] -= 1
        else:
            out.append(c)
    return out


def _tolerant_overlap(pred_cells: list, gold_cells: list) -> int:
    remaining = list(gold_cells)
    hits = 0
    for c in pred_cells:
        j = next((i for i, g in enumerate(remaining) if cells_equal(c, g)), None)
        if j is not None:
            remaining.pop(j)
            hits += 1
    return hits


def soft_f1_counts(pred: ResultTable, gold: ResultTable) -> tuple[int, int, int]:
    """(tp, fp, fn) cells under greedy maximum-overlap row matching, ties by
    smallest (pred, gold) row index."""
    pred_rows, gold_rows = pred.rows, gold.rows
    overlaps = []
    for i, p in enumerate(pred_rows):
        for j, g in enumerate(gold_rows):
            o = _row_overlap(p, g)
            if o:
                overlaps.append((-o, i, j))
    # pair scores are static, so greedy max-overlap is one sorted sweep
    overlaps.sort()
    free_pred = set(range(len(pred_rows)))
    free_gold = set(range(len(gold_rows)))
    tp = 0
    for neg_o, i, j in overlaps:
        if i in free_pred and j in free_gold:
            tp += -neg_o
            free_pred.discard(i)
            free_gold.discard(j)
    total_pred = sum(len(r) for r in pred_rows)
    total_gold = sum(len(r) for r in gold_rows)
    return tp, total_pred - tp, total_gold - tp


def soft_f1(pred: ResultTable, gold: ResultTable) -> float:
    """Cell-level F1 tolerating column reordering and row reordering.
    Both tables empty -> 1.0; exactly one empty -> 0.0."""
    if not pred.rows and not gold.rows:
        return 1.0
    if not pred.rows or not gold.rows:
        return 0.0
    tp, fp, fn = soft_f1_counts(pred, gold)
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


# --------------------------------------------------------- candidate scoring


@dataclass
class CandidateScore:
    ex: int
    soft_f1: float
    error: str | None = None
    truncated: bool = False

    def to_dict(self) -> dict:
        return {"ex": self.ex, "soft_f1": self.soft_f1,
                "error": self.error, "truncated": self.truncated}


def score_candidate(pred_sql: str, gold_sql: str, db_path, *, gold_table: ResultTable | None = None) -> CandidateScore:
    """Execute both queries and score the prediction. A failing prediction
    scores zero; a failing gold query is an input error and raises."""
    if gold_table is None:
        try:
            gold_table = execute_query(gold_sql, db_path)
        except QueryExecutionError as exc:
            raise EvaluationError(f"gold SQL failed to execute: {exc}") from None
    try:
        pred_table = execute_query(pred_sql, db_path)
    except QueryExecutionError as exc:
        return CandidateScore(ex=0, soft_f1=0.0, error=str(exc))
    ex = execution_accuracy(pred_table, gold_table, has_top_level_order_by(gold_sql))
    f1 = soft_f1(pred_table, gold_table)
    return CandidateScore(ex=ex, soft_f1=f1,
                          truncated=pred_table.truncated or gold_table.truncated)


# ------------------------------------------------------------- bound metrics


@dataclass
class QuestionBounds:
    question_id: str
    ex_ub: int
    ex_lb: int
    f1_ub: float
    f1_lb: float

    def to_dict(self) -> dict:
        return {"question_id": self.question_id, "ex_ub": self.ex_ub,
                "ex_lb": self.ex_lb, "f1_ub": self.f1_ub, "f1_lb": self.f1_lb}


@dataclass
class EvalOutcome:
    per_question: list[QuestionBounds]
    ex_ub: float
    ex_lb: float
    f1_ub: float
    f1_lb: float

    def to_dict(self) -> dict:
        return {
            "aggregates": {"ex_ub": self.ex_ub, "ex_lb": self.ex_lb,
                           "f1_ub": self.f1_ub, "f1_lb": self.f1_lb},
            "per_question": [q.to_dict() for q in self.per_question],
        }

    def to_markdown(self) -> str:
        return (
            "| Questions | EX UB | EX LB | F1 UB | F1 LB |\n"
            "| ---: | ---: | ---: | ---: | ---: |\n"
            f"| {len(self.per_question)} | {self.ex_ub:.2f} | {self.ex_lb:.2f}"
            f" | {self.f1_ub:.2f} | {self.f1_lb:.2f} |\n"
        )


def _score_pair(score) -> tuple[int, float]:
    if isinstance(score, CandidateScore):
        return score.ex, score.soft_f1
    ex, f1 = score
    return int(ex), float(f1)


def aggregate_bounds(scores_by_question: dict) -> EvalOutcome:
    """Per question: upper bound = best candidate, lower bound = worst, for
    both metrics; aggregates are macro means scaled to percentages."""
    if not scores_by_question:
        raise EvaluationError("no questions to aggregate")
    per_question = []
    for qid, scores in scores_by_question.items():
        pairs = [_score_pair(s) for s in scores]
        if not pairs:
            raise EvaluationError(f"question {qid!r} has no scored candidates")
        per_question.append(QuestionBounds(
            question_id=str(qid),
            ex_ub=max(ex for ex, _ in pairs),
            ex_lb=min(ex for ex, _ in pairs),
            f1_ub=max(f1 for _, f1 in pairs),
            f1_lb=min(f1 for _, f1 in pairs),
        ))
    n = len(per_question)
    return EvalOutcome(
        per_question=per_question,
        ex_ub=100.0 * sum(q.ex_ub for q in per_question) / n,
        ex_lb=100.0 * sum(q.ex_lb for q in per_question) / n,
        f1_ub=100.0 * sum(q.f1_ub for q in per_question) / n,
        f1_lb=100.0 * sum(q.f1_lb for q in per_question) / n,
    )


# ------------------------------------------------------- prediction pipeline


def read_gold(path) -> list[dict]:
    rows = read_jsonl(path)
    for lineno, row in enumerate(rows, start=1):
        if "question_id" not in row or "sql" not in row:
            raise EvaluationError(f"{path}: line {lineno}: gold rows need question_id and sql")
    return rows


def read_predictions(path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for lineno, row in enumerate(read_jsonl(path), start=1):
        if "question_id" not in row or "candidates" not in row:
            raise EvaluationError(f"{path}: line {lineno}: prediction rows need question_id and candidates")
        cands = row["candidates"]
        if not isinstance(cands, list) or not cands or not all(isinstance(c, str) for c in cands):
            raise EvaluationError(f"{path}: line {lineno}: candidates must be a non-empty list of SQL strings")
        qid = str(row["question_id"])
        if qid in out:
            raise EvaluationError(f"{path}: line {lineno}: duplicate question_id {qid!r}")
        out[qid] = cands
    return out


def evaluate_predictions(predictions: dict[str, list[str]], golds: list[dict], db_path) -> tuple[EvalOutcome, dict]:
    """Score every candidate against its gold query on one database; returns
    the aggregate outcome plus per-question candidate scores."""
    detail: dict[str, list[CandidateScore]] = {}
    for row in golds:
        qid = str(row["question_id"])
        if qid not in predictions:
            raise EvaluationError(f"no prediction for question {qid!r}")
        try:
            gold_table = execute_query(row["sql"], db_path)
        except QueryExecutionError as exc:
            raise EvaluationError(f"gold SQL for question {qid!r} failed: {exc}") from None
        detail[qid] = [
            score_candidate(c, row["sql"], db_path, gold_table=gold_table)
            for c in predictions[qid]
        ]
    extra = set(predictions) - set(detail)
    if extra:
        log.warning("%d predictions have no gold question (e.g. %s)", len(extra), sorted(extra)[0])
    return aggregate_bounds(detail), detail


# ------------------------------------------------------------ linking scores


@dataclass
class LinkingGold:
    tables: set[str] = field(default_factory=set)
    columns: set[tuple[str, str]] = field(default_factory=set)

    @classmethod
    def from_sql(cls, sql: str, schema: DatabaseSchema) -> "LinkingGold":
        parsed = extract_schema_elements(sql, schema)
        return cls(tables=set(parsed.referenced_tables), columns=set(parsed.referenced))


def _fold_tables(tables) -> set[str]:
    return {t.casefold() for t in tables}


def _fold_columns(columns) -> set[tuple[str, str]]:
    return {(t.casefold(), c.casefold()) for t, c in columns}


def _recall(gold: set, pred: set) -> float:
    if not gold:
        return 1.0
    return len(gold & pred) / len(gold)


def _precision(gold: set, pred: set) -> float:
    if not pred:
        return 1.0 if not gold else 0.0
    return len(gold & pred) / len(pred)


def linking_metrics(filtered_schemas, golds) -> dict[str, float]:
    """Macro-averaged table/column recall and precision plus the strict
    schema recall rate (gold columns fully contained), as percentages."""
    if len(filtered_schemas) != len(golds):
        raise EvaluationError(
            f"{len(filtered_schemas)} filtered schemas vs {len(golds)} golds"
        )
    if not golds:
        raise EvaluationError("no questions to score")
    tr = tp = cr = cp = srr = 0.0
    for filtered, gold in zip(filtered_schemas, golds):
        pred_tables = _fold_tables(filtered.columns.keys())
        pred_cols = _fold_columns(filtered.column_set())
        gold_tables = _fold_tables(gold.tables)
        gold_cols = _fold_columns(gold.columns)
        tr += _recall(gold_tables, pred_tables)
        tp += _precision(gold_tables, pred_tables)
        cr += _recall(gold_cols, pred_cols)
        cp += _precision(gold_cols, pred_cols)
        srr += 1.0 if gold_cols <= pred_cols else 0.0
    n = len(golds)
    return {
        "TR": 100.0 * tr / n,
        "TP": 100.0 * tp / n,
        "CR": 100.0 * cr / n,
        "CP": 100.0 * cp / n,
        "SRR": 100.0 * srr / n,
    }


def render_linking_metrics(metrics: dict[str, float]) -> str:
    names = ["TR", "TP", "CR", "CP", "SRR"]
    return (
        "| " + " | ".join(names) + " |\n"
        + "|" + " ---: |" * len(names) + "\n"
        + "| " + " | ".join(f"{metrics[n]:.2f}" for n in names) + " |\n"
    )
