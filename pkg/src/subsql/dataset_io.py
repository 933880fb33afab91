"""Dataset persistence, coverage-aware splitting, statistics, and SFT export."""

import json
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .linking import select_topk
from .llm_gateway import format_tagged, render_prompt
from .schema_core import DatabaseSchema, format_schema_text
from .sql_analysis import SqlParseError, extract_schema_elements
from .synthesis import LEVELS, T2SExample

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "dev", "test")
DATASET_KINDS = ("T2S", "T2SWS")


class DatasetError(ValueError):
    pass


# --------------------------------------------------------------------- JSONL


def read_jsonl(path) -> list[dict]:
    """All rows of a JSONL file; malformed input names the 1-based line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: malformed JSON on line {lineno}: {exc.msg}") from None
            if not isinstance(row, dict):
                raise DatasetError(f"{path}: line {lineno} is not a JSON object")
            rows.append(row)
    return rows


def write_jsonl(path, rows) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_examples(path) -> list[T2SExample]:
    rows = read_jsonl(path)
    examples = []
    for lineno, row in enumerate(rows, start=1):
        try:
            examples.append(T2SExample.from_dict(row))
        except TypeError as exc:
            raise DatasetError(f"{path}: line {lineno}: {exc}") from None
    return examples


def write_examples(path, examples) -> int:
    return write_jsonl(path, (e.to_dict() for e in examples))


# ------------------------------------------------------------------ splitting


@dataclass
class DatasetSplit:
    name: str
    examples: list[T2SExample]

    def __len__(self):
        return len(self.examples)


def _largest_remainder_sizes(n: int, ratios) -> list[int]:
    exact = [n * r for r in ratios]
    sizes = [int(x) for x in exact]
    # hand out the leftover units to the largest fractional parts, train first
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _referenced_columns(example, schema) -> set[tuple[str, str]]:
    try:
        return extract_schema_elements(example.sql, schema).referenced
    except SqlParseError:
        return set()


def split_dataset(
    examples: list[T2SExample],
    ratios=(0.94, 0.03, 0.03),
    seed: int = 0,
    schema: DatabaseSchema | None = None,
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Train/dev/test split: a greedy column-coverage pass first (one covering
    example per column per split where available), then difficulty-stratified
    seeded fill. Sizes follow the ratios by largest remainder and are exact;
    deterministic under seed.
    """
    if len(ratios) != len(SPLIT_NAMES):
        raise DatasetError(f"need {len(SPLIT_NAMES)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DatasetError("ratios must be non-negative and sum to 1")
    if not examples:
        raise DatasetError("cannot split an empty dataset")

    n = len(examples)
    sizes = _largest_remainder_sizes(n, ratios)
    assignment: dict[int, int] = {}
    counts = [0] * len(SPLIT_NAMES)

    if schema is not None:
        refs = [_referenced_columns(e, schema) for e in examples]
        by_column: dict[tuple[str, str], list[int]] = {}
        for i, r in enumerate(refs):
            for col in r:
                by_column.setdefault(col, []).append(i)
        covered: list[set] = [set() for _ in SPLIT_NAMES]
        for si in range(len(SPLIT_NAMES)):
            missed = []
            for col in sorted(schema.all_columns()):
                if col in covered[si]:
                    continue
                if counts[si] >= sizes[si]:
                    missed.append(col)
                    continue
                pick = next((i for i in by_column.get(col, ()) if i not in assignment), None)
                if pick is None:
                    missed.append(col)
                    continue
                assignment[pick] = si
                counts[si] += 1
                covered[si] |= refs[pick]
            if missed:
                log.warning(
                    "split %s: %d columns not coverable (e.g. %s)",
                    SPLIT_NAMES[si], len(missed), ".".join(missed[0]),
                )

    # stratified fill: per difficulty, assign to the relatively emptiest split
    rng = random.Random(seed)
    by_level: dict[str, list[int]] = {}
    for i, example in enumerate(examples):
        if i not in assignment:
            by_level.setdefault(example.difficulty, []).append(i)
    for level in sorted(by_level):
        pool = by_level[level]
        rng.shuffle(pool)
        for i in pool:
            open_splits = [si for si in range(len(SPLIT_NAMES)) if counts[si] < sizes[si]]
            si = max(open_splits, key=lambda s: (Fraction(sizes[s] - counts[s], sizes[s]), -s))
            assignment[i] = si
            counts[si] += 1

    splits = []
    for si, name in enumerate(SPLIT_NAMES):
        members = [examples[i] for i in sorted(i for i, s in assignment.items() if s == si)]
        splits.append(DatasetSplit(name, members))
    return tuple(splits)


# ----------------------------------------------------------------- statistics


@dataclass
class StatsReport:
    total: int
    level_counts: dict[str, int]
    level_mean_joins: dict[str, float]
    level_agg_rates: dict[str, float]
    unused_column_count: int
    unused_column_rate: float
    column_histogram: dict[str, int]
    window_usage_count: int
    unparsed_count: int
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "level_counts": dict(self.level_counts),
            "level_mean_joins": dict(self.level_mean_joins),
            "level_agg_rates": dict(self.level_agg_rates),
            "unused_column_count": self.unused_column_count,
            "unused_column_rate": self.unused_column_rate,
            "column_histogram": dict(self.column_histogram),
            "window_usage_count": self.window_usage_count,
            "unparsed_count": self.unparsed_count,
            "empty": self.empty,
        }

    def window_column(self) -> int:
        """The rendered Window figure: the explicit label count when present,
        otherwise how many queries use a window function. Overlays the level
        table, so the level columns still sum to total."""
        if "window" in self.level_counts:
            return self.level_counts["window"]
        return self.window_usage_count

    def to_markdown(self) -> str:
        named = [lv for lv in LEVELS if lv != "window"]
        extra = sorted(set(self.level_counts) - set(LEVELS))
        lines = [
            "| " + " | ".join(lv.capitalize() for lv in named + extra) + " | Window | Total |",
            "|" + " ---: |" * (len(named) + len(extra) + 2),
            "| " + " | ".join(str(self.level_counts.get(lv, 0)) for lv in named + extra)
            + f" | {self.window_column()} | {self.total} |",
            "",
            "| Level | Questions | Mean Joins | Aggregation % |",
            "| --- | ---: | ---: | ---: |",
        ]
        for lv in list(LEVELS) + extra:
            if lv not in self.level_counts:
                continue
            lines.append(
                f"| {lv} | {self.level_counts[lv]} | {self.level_mean_joins.get(lv, 0.0):.2f}"
                f" | {self.level_agg_rates.get(lv, 0.0):.2f} |"
            )
        lines += [
            "",
            "| Unused Columns | Unused Rate % | Unparsed |",
            "| ---: | ---: | ---: |",
            f"| {self.unused_column_count} | {self.unused_column_rate:.2f} | {self.unparsed_count} |",
        ]
        return "\n".join(lines) + "\n"


def compute_stats(examples, schema: DatabaseSchema) -> StatsReport:
    """Per-difficulty counts and SQL feature rates, plus column-usage figures
    against the full schema. Unparseable SQL is tallied separately and only
    counts toward the level totals."""
    if hasattr(examples, "examples"):
        examples = examples.examples
    if not examples:
        return StatsReport(0, {}, {}, {}, 0, 0.0, {}, 0, 0, empty=True)

    level_counts: dict[str, int] = {}
    joins: dict[str, list[int]] = {}
    aggs: dict[str, int] = {}
    histogram: dict[str, int] = {}
    used: set[tuple[str, str]] = set()
    window_usage = 0
    unparsed = 0

    for example in examples:
        level = example.difficulty or "unknown"
        level_counts[level] = level_counts.get(level, 0) + 1
        try:
            parsed = extract_schema_elements(example.sql, schema)
        except SqlParseError:
            unparsed += 1
            continue
        joins.setdefault(level, []).append(parsed.join_count)
        if parsed.has_aggregation:
            aggs[level] = aggs.get(level, 0) + 1
        if parsed.has_window:
            window_usage += 1
        used |= parsed.referenced
        for t, c in parsed.referenced:
            key = f"{t}.{c}"
            histogram[key] = histogram.get(key, 0) + 1

    all_columns = schema.all_columns()
    unused = len(all_columns) - len(used & set(all_columns))
    return StatsReport(
        total=len(examples),
        level_counts=level_counts,
        level_mean_joins={lv: sum(js) / len(js) for lv, js in joins.items()},
        level_agg_rates={lv: 100.0 * aggs.get(lv, 0) / len(js) for lv, js in joins.items()},
        unused_column_count=unused,
        unused_column_rate=100.0 * unused / len(all_columns),
        column_histogram=dict(sorted(histogram.items())),
        window_usage_count=window_usage,
        unparsed_count=unparsed,
    )


# ----------------------------------------------------------------- SFT export


@dataclass(frozen=True)
class ExportConfig:
    dataset_kind: str
    fs_count: int = 0
    fs_reasoning: bool = False

    def __post_init__(self):
        if self.dataset_kind not in DATASET_KINDS:
            raise DatasetError(f"dataset_kind must be one of {DATASET_KINDS}")
        if self.fs_count < 0:
            raise DatasetError("fs_count must be >= 0")

    def to_dict(self) -> dict:
        return {
            "dataset_kind": self.dataset_kind,
            "fs_count": self.fs_count,
            "fs_reasoning": self.fs_reasoning,
        }


@dataclass
class SftRecord:
    prompt: str
    completion: str
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"prompt": self.prompt, "completion": self.completion, "config": dict(self.config)}


def _shot_field(shot, name: str):
    if isinstance(shot, dict):
        return shot.get(name)
    return getattr(shot, name, None)


def _render_few_shots(shots, with_reasoning: bool) -> str:
    parts = ["### Examples"]
    for k, shot in enumerate(shots, start=1):
        block = [f"### Example {k}", f"Question: {_shot_field(shot, 'question')}"]
        reasoning = _shot_field(shot, "reasoning")
        if with_reasoning and reasoning:
            block.append(f"Reasoning: {reasoning}")
        block.append(f"SQL: {_shot_field(shot, 'sql')}")
        parts.append("\n".join(block))
    return "\n\n".join(parts)


def export_sft(
    examples,
    config: ExportConfig,
    schema: DatabaseSchema,
    *,
    filtered_schemas: dict | None = None,
    index=None,
    corpus_by_id: dict | None = None,
) -> list[SftRecord]:
    """SFT records in one of the context configurations: T2SWS prompts embed
    the example's filtered schema, fs_count nearest questions become few-shot
    blocks (with reasoning sections when fs_reasoning), the completion is the
    tagged reasoning/answer pair."""
    if hasattr(examples, "examples"):
        examples = examples.examples
    if config.dataset_kind == "T2SWS":
        have = filtered_schemas or {}
        missing = [e.id for e in examples if e.id not in have]
        if missing:
            raise DatasetError("missing filtered schema for: " + ", ".join(missing))
    if config.fs_count > 0 and (index is None or corpus_by_id is None):
        raise DatasetError("few-shot export needs a retrieval index and its corpus")

    records = []
    for example in examples:
        augmentation = ""
        if config.dataset_kind == "T2SWS":
            filtered = filtered_schemas[example.id]
            augmentation = "### Database Schema\n" + format_schema_text(schema, filtered.columns)
        few_shots = ""
        if config.fs_count > 0:
            candidates = [i for i in corpus_by_id if i != example.id]
            chosen = select_topk(example.question, candidates, index, k=config.fs_count)
            if len(chosen) < config.fs_count:
                raise DatasetError(
                    f"{example.id}: only {len(chosen)} few-shot candidates, need {config.fs_count}"
                )
            few_shots = _render_few_shots([corpus_by_id[i] for i in chosen], config.fs_reasoning)
        prompt = render_prompt("question_to_sql", {
            "DB_ID": example.db_id or schema.db_id,
            "AUGMENTATION": augmentation,
            "FEW_SHOTS": few_shots,
            "QUESTION": example.question,
        })
        if example.reasoning:
            completion = format_tagged(example.reasoning, example.sql)
        else:
            completion = f"<answer>{example.sql}</answer>"
        records.append(SftRecord(prompt=prompt, completion=completion, config=config.to_dict()))
    return records
