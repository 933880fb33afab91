"""Per-sub-schema synthesis pipeline: complexity-controlled SQL generation,
SQL-to-text translation, judge filtering, executability check with repair,
reasoning traces, and column-frequency balancing.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .llm_gateway import (
    GatewayError,
    JsonParseError,
    LlmGateway,
    TaggedParseError,
    make_request,
    parse_json_object,
    parse_tagged,
)
from .schema_core import DatabaseSchema, format_schema_text
from .sql_analysis import (
    QueryExecutionError,
    classify_features,
    execute_query,
    extract_schema_elements,
)
from .subschema_gen import SubSchema
from .templates import LEVEL_GUIDANCE

log = logging.getLogger("subsql.synthesis")

LEVELS = ("simple", "moderate", "challenging", "window")
ROUND_INITIAL = "initial"
ROUND_FOCUSED = "column_focused"


@dataclass(frozen=True)
class GenerationConfig:
    n_per_level: int = 3
    levels: tuple[str, ...] = LEVELS
    min_col_example_count: int = 400
    max_repair_attempts: int = 1

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.n_per_level < 1:
            raise ValueError("n_per_level must be >= 1")
        if self.min_col_example_count < 0:
            raise ValueError("min_col_example_count must be >= 0")
        unknown = set(self.levels) - set(LEVELS)
        if unknown:
            raise ValueError(f"unknown difficulty levels: {sorted(unknown)}")


@dataclass
class T2SExample:
    id: str
    db_id: str
    subschema_id: str
    sql: str
    question: str
    difficulty: str
    reasoning: str | None = None
    judge_verdict: bool = False
    executable: bool = False
    repaired: bool = False
    round: str = ROUND_INITIAL
    # unknown JSONL fields ride along here so read -> write is lossless
    extra: dict = field(default_factory=dict)

    _CORE = ("id", "db_id", "subschema_id", "sql", "question", "difficulty",
             "reasoning", "judge_verdict", "executable", "repaired", "round")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self._CORE}
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "T2SExample":
        known = {k: d[k] for k in cls._CORE if k in d}
        extra = {k: v for k, v in d.items() if k not in cls._CORE}
        return cls(**known, extra=extra)


def _diag(diagnostics: list[dict] | None, stage: str, subschema_id: str, reason: str) -> None:
    if diagnostics is not None:
        diagnostics.append({"stage": stage, "subschema_id": subschema_id, "reason": reason})
    log.debug("diagnostic [%s] %s: %s", stage, subschema_id, reason)


def _normalize_ws(text: str) -> str:
    return " ".join(text.split())


def _focus_block(focus_columns) -> str:
    return "\n".join(f"  - {t}.{c}" for t, c in sorted(focus_columns))


def generate_for_subschema(
    subschema: SubSchema,
    config: GenerationConfig,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    *,
    focus_columns=None,
    diagnostics: list[dict] | None = None,
) -> list[tuple[str, str, str]]:
    """Raw (sql, question, difficulty) triples for one sub-schema.

    One generation request per difficulty level asking for n_per_level queries
    (SQL first), then one translation request per query (SQL-to-text).
    Malformed model output drops the affected items with a diagnostic.
    """
    schema_block = format_schema_text(schema, subschema.per_table_columns)
    raw: list[tuple[str, str, str]] = []
    for level in config.levels:
        bindings = {
            "DB_ID": schema.db_id,
            "SCHEMA": schema_block,
            "LEVEL": level,
            "LEVEL_GUIDANCE": LEVEL_GUIDANCE[level],
            "N": str(config.n_per_level),
        }
        if focus_columns:
            bindings["FOCUS_COLUMNS"] = _focus_block(focus_columns)
            template = "generate_sql_focus"
        else:
            template = "generate_sql"
        request = make_request(template, bindings, "generate_sql")
        response = gateway.complete(request)
        try:
            answer = parse_tagged(response.text)["answer"]
            sqls = json.loads(answer)
            if not isinstance(sqls, list):
                raise TaggedParseError(f"expected a JSON array of SQL strings, got {type(sqls).__name__}")
        except (TaggedParseError, json.JSONDecodeError) as exc:
            _diag(diagnostics, "generate_sql", subschema.id, f"level {level}: malformed generation: {exc}")
            continue

        for item in sqls:
            if not isinstance(item, str) or not item.strip():
                _diag(diagnostics, "generate_sql", subschema.id, f"level {level}: non-string SQL entry dropped")
                continue
            sql = item.strip().rstrip(";").strip()
            if level == "window":
                try:
                    _, _, has_window = classify_features(sql)
                    if not has_window:
                        _diag(diagnostics, "generate_sql", subschema.id,
                              "window-level query has no OVER clause")
                except Exception as exc:  # unparseable SQL is still passed downstream
                    _diag(diagnostics, "generate_sql", subschema.id, f"window check failed: {exc}")
            question = _sql_to_text(sql, schema_block, schema.db_id, gateway, subschema.id, diagnostics)
            if question is None:
                continue
            raw.append((sql, question, level))
    return raw


def _sql_to_text(sql: str, schema_block: str, db_id: str, gateway: LlmGateway,
                 subschema_id: str, diagnostics: list[dict] | None) -> str | None:
    request = make_request(
        "sql_to_text",
        {"DB_ID": db_id, "SCHEMA": schema_block, "SQL": sql},
        "sql_to_text",
    )
    try:
        response = gateway.complete(request)
        question = parse_tagged(response.text)["answer"].strip()
    except (TaggedParseError, GatewayError) as exc:
        _diag(diagnostics, "sql_to_text", subschema_id, f"translation failed: {exc}")
        return None
    if not question:
        _diag(diagnostics, "sql_to_text", subschema_id, "empty question dropped")
        return None
    return question


def judge_pair(
    example: T2SExample,
    subschema: SubSchema,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    diagnostics: list[dict] | None = None,
) -> bool:
    """LLM-as-judge verdict on one (sql, question) pair within its sub-schema.

    Anything that prevents a clean "logical" verdict — unparseable output,
    gateway failure — is conservatively treated as illogical.
    """
    request = make_request(
        "judge",
        {
            "DB_ID": schema.db_id,
            "SCHEMA": format_schema_text(schema, subschema.per_table_columns),
            "SQL": example.sql,
            "QUESTION": example.question,
        },
        "judge",
    )
    try:
        response = gateway.complete(request)
    except GatewayError as exc:
        _diag(diagnostics, "judge", example.subschema_id, f"gateway failure: {exc}")
        return False
    try:
        verdict = parse_json_object(response.text, ["verdict", "reason"], list_keys=())
    except JsonParseError as exc:
        _diag(diagnostics, "judge", example.subschema_id, f"unparseable verdict treated as illogical: {exc}")
        return False
    return str(verdict["verdict"]).strip().lower() == "logical"


def repair_sql(
    example: T2SExample,
    error_message: str,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    subschema: SubSchema,
    db_path,
    config: GenerationConfig,
    diagnostics: list[dict] | None = None,
) -> T2SExample | None:
    """Try up to max_repair_attempts LLM fixes, re-executing each.

    Returns the repaired example (executable=True, repaired=True) or None when
    the query stays broken and must be dropped.
    """
    if example.executable:
        raise ValueError("repair_sql called on an already-executable example")
    schema_block = format_schema_text(schema, subschema.per_table_columns)
    current_sql = example.sql
    current_error = error_message
    for _ in range(config.max_repair_attempts):
        request = make_request(
            "repair",
            {"DB_ID": schema.db_id, "SCHEMA": schema_block, "SQL": current_sql, "ERROR": current_error},
            "repair",
        )
        try:
            response = gateway.complete(request)
            fixed = parse_tagged(response.text)["answer"].strip().rstrip(";").strip()
        except (TaggedParseError, GatewayError) as exc:
            _diag(diagnostics, "repair", example.subschema_id, f"repair call failed: {exc}")
            break
        if not fixed or _normalize_ws(fixed) == _normalize_ws(current_sql):
            _diag(diagnostics, "repair", example.subschema_id, "repair returned the same broken SQL")
            continue
        try:
            execute_query(fixed, db_path)
        except QueryExecutionError as exc:
            current_sql, current_error = fixed, str(exc)
            _diag(diagnostics, "repair", example.subschema_id, f"repaired SQL still fails: {exc}")
            continue
        example.sql = fixed
        example.executable = True
        example.repaired = True
        return example
    _diag(diagnostics, "repair", example.subschema_id, "dropped: not executable after repair attempts")
    return None


def generate_reasoning(
    example: T2SExample,
    subschema: SubSchema,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    diagnostics: list[dict] | None = None,
) -> str:
    """Divide-and-conquer trace for a retained example.

    The trace's final SQL must match example.sql after whitespace
    normalization; one regeneration is attempted on mismatch. Reasoning is
    enrichment — failures leave it empty without dropping the example.
    """
    if not (example.judge_verdict and example.executable):
        raise ValueError("generate_reasoning requires a judged-logical, executable example")
    request = make_request(
        "reasoning",
        {
            "DB_ID": schema.db_id,
            "SCHEMA": format_schema_text(schema, subschema.per_table_columns),
            "QUESTION": example.question,
            "SQL": example.sql,
        },
        "reasoning",
    )
    want = _normalize_ws(example.sql)
    for attempt in range(2):
        try:
            response = gateway.complete(request)
            parsed = parse_tagged(response.text)
        except GatewayError as exc:
            _diag(diagnostics, "reasoning", example.subschema_id, f"gateway failure, reasoning left empty: {exc}")
            return ""
        except TaggedParseError as exc:
            _diag(diagnostics, "reasoning", example.subschema_id, f"attempt {attempt + 1}: unparseable trace: {exc}")
            continue
        if _normalize_ws(parsed["answer"]) == want:
            return parsed["reasoning"]
        _diag(diagnostics, "reasoning", example.subschema_id,
              f"attempt {attempt + 1}: trace final SQL does not match example SQL")
    return ""


def count_column_usage(
    examples,
    schema: DatabaseSchema,
    diagnostics: list[dict] | None = None,
) -> dict[tuple[str, str], int]:
    """Usage count per (table, column) over the given examples.

    Every schema column appears as a key, possibly 0. Unparseable SQL is
    counted as a diagnostic, not silently skipped.
    """
    counts: dict[tuple[str, str], int] = {key: 0 for key in schema.all_columns()}
    for example in examples:
        sql = example.sql if isinstance(example, T2SExample) else example
        try:
            parsed = extract_schema_elements(sql, schema)
        except Exception as exc:
            subschema_id = example.subschema_id if isinstance(example, T2SExample) else ""
            _diag(diagnostics, "count_columns", subschema_id, f"unparseable SQL skipped: {exc}")
            continue
        for key in parsed.referenced:
            if key in counts:
                counts[key] += 1
    return counts


def select_focus_columns(counts: dict[tuple[str, str], int], threshold: int) -> set[tuple[str, str]]:
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    return {key for key, n in counts.items() if n < threshold}


def find_focus_subschemas(
    focus_cols: set[tuple[str, str]],
    all_subschemas: list[SubSchema],
) -> list[tuple[SubSchema, set[tuple[str, str]]]]:
    """Greedy minimum cover of the focus columns by sub-schemas.

    Largest uncovered-focus-column count first, ties broken by sub-schema id.
    Each selected sub-schema is paired with all focus columns it contains.
    """
    focus = {(t.casefold(), c.casefold()) for t, c in focus_cols}
    original = {(t.casefold(), c.casefold()): (t, c) for t, c in focus_cols}
    membership = []
    for ss in all_subschemas:
        cols = {(t.casefold(), c.casefold()) for t, c in ss.all_columns()} & focus
        if cols:
            membership.append((ss, cols))

    uncovered = set(focus)
    selected: list[tuple[SubSchema, set[tuple[str, str]]]] = []
    chosen_ids = set()
    while uncovered:
        candidates = [m for m in membership if m[0].id not in chosen_ids]
        best = min(
            candidates,
            key=lambda m: (-len(m[1] & uncovered), m[0].id),
            default=None,
        )
        if best is None or not best[1] & uncovered:
            missing = sorted(original[k] for k in uncovered)
            raise AssertionError(f"focus columns not present in any sub-schema: {missing}")
        ss, cols = best
        chosen_ids.add(ss.id)
        selected.append((ss, {original[k] for k in cols}))
        uncovered -= cols
    return selected


def _process_pairs(
    raw_pairs,
    subschema: SubSchema,
    config: GenerationConfig,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    db_path,
    round_name: str,
    diagnostics: list[dict] | None,
) -> list[T2SExample]:
    """Judge → execute → repair → reasoning for each raw pair, in order."""
    results = []
    for sql, question, difficulty in raw_pairs:
        example = T2SExample(
            id="",  # assigned after the full merge so ids stay deterministic
            db_id=schema.db_id,
            subschema_id=subschema.id,
            sql=sql,
            question=question,
            difficulty=difficulty,
            round=round_name,
        )
        example.judge_verdict = judge_pair(example, subschema, gateway, schema, diagnostics)
        if not example.judge_verdict:
            results.append(example)
            continue
        try:
            execute_query(example.sql, db_path)
            example.executable = True
        except QueryExecutionError as exc:
            repaired = repair_sql(example, str(exc), gateway, schema, subschema,
                                  db_path, config, diagnostics)
            if repaired is None:
                continue  # dropped outright
            example = repaired
        example.reasoning = generate_reasoning(example, subschema, gateway, schema, diagnostics) or None
        results.append(example)
    return results


def _process_subschema(
    subschema: SubSchema,
    config: GenerationConfig,
    gateway: LlmGateway,
    schema: DatabaseSchema,
    db_path,
    round_name: str,
    focus_columns,
    diagnostics: list[dict] | None,
) -> list[T2SExample]:
    try:
        raw = generate_for_subschema(
            subschema, config, gateway, schema,
            focus_columns=focus_columns, diagnostics=diagnostics,
        )
    except GatewayError as exc:
        _diag(diagnostics, "generate_sql", subschema.id, f"sub-schema skipped on gateway error: {exc}")
        return []
    return _process_pairs(raw, subschema, config, gateway, schema, db_path, round_name, diagnostics)


def _load_checkpoint(path) -> dict[str, list[T2SExample]]:
    done: dict[str, list[T2SExample]] = {}
    path = Path(path)
    if not path.exists():
        return done
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            done[row["subschema_id"]] = [T2SExample.from_dict(d) for d in row["examples"]]
    return done


def run_initial_round(
    schema: DatabaseSchema,
    sub_schemas: list[SubSchema],
    config: GenerationConfig,
    gateway: LlmGateway,
    db_path,
    *,
    jobs: int = 1,
    diagnostics: list[dict] | None = None,
    checkpoint_path=None,
) -> list[T2SExample]:
    """One pass over every sub-schema. Keeps judged-but-rejected examples too;
    the final filter happens in finalize_dataset so the balance stage can run
    separately over this output."""
    checkpoint = _load_checkpoint(checkpoint_path) if checkpoint_path else {}
    checkpoint_fh = open(checkpoint_path, "a", encoding="utf-8") if checkpoint_path else None

    def worker(ss: SubSchema) -> list[T2SExample]:
        if ss.id in checkpoint:
            return checkpoint[ss.id]
        examples = _process_subschema(ss, config, gateway, schema, db_path,
                                      ROUND_INITIAL, None, diagnostics)
        if checkpoint_fh is not None:
            row = {"subschema_id": ss.id, "examples": [e.to_dict() for e in examples]}
            checkpoint_fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            checkpoint_fh.flush()
        return examples

    try:
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                per_subschema = list(pool.map(worker, sub_schemas))
        else:
            per_subschema = [worker(ss) for ss in sub_schemas]
    finally:
        if checkpoint_fh is not None:
            checkpoint_fh.close()

    out = [e for batch in per_subschema for e in batch]
    log.info("initial round: %d examples (%d retained-quality)",
             len(out), sum(1 for e in out if e.judge_verdict and e.executable))
    return out


def run_balance_round(
    schema: DatabaseSchema,
    sub_schemas: list[SubSchema],
    initial_examples: list[T2SExample],
    config: GenerationConfig,
    gateway: LlmGateway,
    db_path,
    *,
    jobs: int = 1,
    diagnostics: list[dict] | None = None,
) -> list[T2SExample]:
    """Column-usage balancing: one focused pass over a greedy cover of the
    underused columns. Returns only the newly generated examples. Counts are
    taken over retained-quality examples of the initial round — a global
    barrier, so this needs the complete first round."""
    retained = [e for e in initial_examples if e.judge_verdict and e.executable]
    counts = count_column_usage(retained, schema, diagnostics)
    focus = select_focus_columns(counts, config.min_col_example_count)
    if not focus:
        log.info("balancing round: no columns below threshold %d", config.min_col_example_count)
        return []
    targets = find_focus_subschemas(focus, sub_schemas)
    log.info("balancing round: %d focus columns over %d sub-schemas", len(focus), len(targets))

    def worker(item):
        ss, cols = item
        return _process_subschema(ss, config, gateway, schema, db_path,
                                  ROUND_FOCUSED, cols, diagnostics)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            batches = list(pool.map(worker, targets))
    else:
        batches = [worker(item) for item in targets]
    return [e for batch in batches for e in batch]


def finalize_dataset(
    examples: list[T2SExample],
    db_id: str,
    diagnostics: list[dict] | None = None,
) -> list[T2SExample]:
    """Final filter (judged logical AND executable), exact-duplicate dedup on
    whitespace-normalized (sql, question), then deterministic sequential ids."""
    seen: set[tuple[str, str]] = set()
    out: list[T2SExample] = []
    for example in examples:
        if not (example.judge_verdict and example.executable):
            continue
        key = (_normalize_ws(example.sql), _normalize_ws(example.question))
        if key in seen:
            _diag(diagnostics, "dedup", example.subschema_id, "exact duplicate (sql, question) dropped")
            continue
        seen.add(key)
        out.append(example)
    for index, example in enumerate(out):
        example.id = f"{db_id}-{index:06d}"
    return out


def run_pipeline(
    schema: DatabaseSchema,
    sub_schemas: list[SubSchema],
    config: GenerationConfig,
    gateway: LlmGateway,
    db_path,
    *,
    jobs: int = 1,
    diagnostics: list[dict] | None = None,
    checkpoint_path=None,
) -> list[T2SExample]:
    """Initial round over all sub-schemas, column-usage balancing round over
    focus sub-schemas, then the final logical+executable filter and exact-pair
    dedup. Deterministic for a fixed replay store when jobs=1.
    """
    if diagnostics is None:
        diagnostics = []
    initial = run_initial_round(schema, sub_schemas, config, gateway, db_path,
                                jobs=jobs, diagnostics=diagnostics,
                                checkpoint_path=checkpoint_path)
    focused = run_balance_round(schema, sub_schemas, initial, config, gateway, db_path,
                                jobs=jobs, diagnostics=diagnostics)
    return finalize_dataset(initial + focused, schema.db_id, diagnostics)
