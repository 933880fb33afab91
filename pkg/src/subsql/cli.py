"""Pipeline orchestrator: one subcommand per stage, each writing its outputs
plus a manifest (config digest, seeds, counts, output hashes) into --out.

Data goes to files, logs to stderr. Any flag can instead come from a JSON or
TOML file passed as --config; explicit flags win.
"""

import functools
import hashlib
import json
import logging
import sys
from pathlib import Path

import click

from . import dataset_io, evaluation
from .linking import LINKING_MODES, Bm25Index, FilteredSchema, VectorIndex, build_value_index, run_linking
from .llm_gateway import GatewayError, HttpProvider, LlmGateway, ReplayStore
from .schema_core import SchemaError, introspect_schema
from .sql_analysis import QueryExecutionError, SqlParseError
from .subschema_gen import SubSchema, SubSchemaConfig, construct_sub_schemas
from .synthesis import (
    LEVELS,
    GenerationConfig,
    finalize_dataset,
    run_balance_round,
    run_initial_round,
    run_pipeline,
)

log = logging.getLogger("subsql")

_FAILURES = (
    GatewayError,
    dataset_io.DatasetError,
    evaluation.EvaluationError,
    SchemaError,
    SqlParseError,
    QueryExecutionError,
    ValueError,
    OSError,
)


def _run(fn):
    """Uniform failure surface: structured error on stderr, exit 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except _FAILURES as exc:
            click.echo(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), err=True)
            sys.exit(1)

    return wrapper


# ------------------------------------------------------------------ plumbing


def _load_config_file(path: str) -> dict:
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix.lower() == ".toml":
        import tomllib

        data = tomllib.loads(raw.decode("utf-8"))
    else:
        data = json.loads(raw.decode("utf-8"))
    if not isinstance(data, dict):
        raise click.UsageError(f"{path}: config file must hold an object/table")
    return data


def _opt(ctx, key: str, value, default=None, required: bool = False):
    """Flag value, else config-file value, else default."""
    if value is not None:
        return value
    if key in ctx.obj["cfg"]:
        return ctx.obj["cfg"][key]
    if required:
        raise click.UsageError(f"missing --{key.replace('_', '-')} (flag or config file)")
    return default


def _out_dir(ctx, value) -> Path:
    out = Path(_opt(ctx, "out", value, required=True))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out: Path, command: str, config: dict, seeds: dict, counts: dict, outputs) -> None:
    manifest = {
        "command": command,
        "config": config,
        "config_digest": hashlib.sha256(
            json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ).hexdigest(),
        "seeds": seeds,
        "counts": counts,
        "outputs": {name: _sha256_file(out / name) for name in outputs},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _parse_ints(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    return tuple(int(part) for part in str(text).split(",") if part.strip())


def _parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(part) for part in str(text).split(",") if part.strip())


def _parse_names(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(str(x) for x in text)
    return tuple(part.strip() for part in str(text).split(",") if part.strip())


def _make_gateway(replay_path) -> LlmGateway:
    if replay_path:
        return LlmGateway(store=ReplayStore.load(replay_path), provider=None, mode="replay")
    return LlmGateway(store=None, provider=HttpProvider(), mode="live")


# ------------------------------------------------------------- shared flags


def _subschema_options(fn):
    fn = click.option("--subschemas", "subschemas_path", default=None,
                      help="sub-schemas JSONL written by the subschemas command")(fn)
    fn = click.option("--tc", default=None, help="table-count ladder, e.g. 3,2,1")(fn)
    fn = click.option("-w", "--window", type=int, default=None, help="column window width")(fn)
    fn = click.option("-s", "--stride", type=int, default=None, help="column window stride")(fn)
    fn = click.option("--seed", type=int, default=None, help="column shuffle seed")(fn)
    return fn


def _generation_options(fn):
    fn = click.option("--n-per-level", type=int, default=None)(fn)
    fn = click.option("--levels", default=None, help="comma list of difficulty levels")(fn)
    fn = click.option("--min-col-count", type=int, default=None,
                      help="column usage threshold that triggers the balance round")(fn)
    fn = click.option("--max-repair", type=int, default=None)(fn)
    return fn


def _resolve_subschema_config(ctx, tc, window, stride, seed) -> SubSchemaConfig:
    return SubSchemaConfig(
        window_w=int(_opt(ctx, "window", window, 3)),
        stride_s=int(_opt(ctx, "stride", stride, 2)),
        table_counts_tc=_parse_ints(_opt(ctx, "tc", tc, "3,2,1")),
        shuffle_seed=int(_opt(ctx, "seed", seed, 0)),
    )


def _load_subschemas(ctx, schema, subschemas_path, tc, window, stride, seed):
    """(sub_schemas, config-fragment, seeds) from a file or constructed fresh."""
    path = _opt(ctx, "subschemas", subschemas_path)
    if path:
        subs = [SubSchema.from_dict(row) for row in dataset_io.read_jsonl(path)]
        return subs, {"subschemas": str(path)}, {}
    cfg = _resolve_subschema_config(ctx, tc, window, stride, seed)
    subs = construct_sub_schemas(schema, cfg)
    fragment = {
        "tc": list(cfg.table_counts_tc),
        "window": cfg.window_w,
        "stride": cfg.stride_s,
        "seed": cfg.shuffle_seed,
    }
    return subs, fragment, {"shuffle_seed": cfg.shuffle_seed}


def _resolve_generation_config(ctx, n_per_level, levels, min_col_count, max_repair) -> GenerationConfig:
    return GenerationConfig(
        n_per_level=int(_opt(ctx, "n_per_level", n_per_level, 3)),
        levels=_parse_names(_opt(ctx, "levels", levels, ",".join(LEVELS))),
        min_col_example_count=int(_opt(ctx, "min_col_count", min_col_count, 400)),
        max_repair_attempts=int(_opt(ctx, "max_repair", max_repair, 1)),
    )


def _generation_fragment(cfg: GenerationConfig) -> dict:
    return {
        "n_per_level": cfg.n_per_level,
        "levels": list(cfg.levels),
        "min_col_count": cfg.min_col_example_count,
        "max_repair": cfg.max_repair_attempts,
    }


# ------------------------------------------------------------------ commands


@click.group(invoke_without_command=True)
@click.option("--config", "config_path", default=None,
              help="JSON or TOML file supplying defaults for any flag")
@click.option("--jobs", type=int, default=None, help="worker cap for parallel stages")
@click.option("-v", "--verbose", is_flag=True, help="debug logging")
@click.pass_context
def main(ctx, config_path, jobs, verbose):
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    cfg = _load_config_file(config_path) if config_path else {}
    ctx.obj = {"cfg": cfg, "jobs": int(jobs if jobs is not None else cfg.get("jobs", 1))}
    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())
        ctx.exit(2)


@main.command()
@click.option("--db", "db_path", default=None, help="SQLite database file")
@click.option("--out", "out_path", default=None, help="output directory")
@click.pass_context
@_run
def introspect(ctx, db_path, out_path):
    """Snapshot a database schema (tables, columns, keys, samples) to JSON."""
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    schema = introspect_schema(db)
    _write_json(out / "schema.json", schema.to_dict())
    counts = {
        "tables": len(schema.tables),
        "columns": len(schema.all_columns()),
        "foreign_keys": len(schema.foreign_keys),
    }
    _write_manifest(out, "introspect", {"db": str(db)}, {}, counts, ["schema.json"])
    log.info("introspect: %s", counts)


@main.command()
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--tc", default=None, help="table-count ladder, e.g. 3,2,1")
@click.option("-w", "--window", type=int, default=None)
@click.option("-s", "--stride", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
@_run
def subschemas(ctx, db_path, out_path, tc, window, stride, seed):
    """Enumerate table-level x column-window sub-schemas."""
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    cfg = _resolve_subschema_config(ctx, tc, window, stride, seed)
    schema = introspect_schema(db)
    subs = construct_sub_schemas(schema, cfg)
    dataset_io.write_jsonl(out / "subschemas.jsonl", (s.to_dict() for s in subs))
    config = {
        "db": str(db),
        "tc": list(cfg.table_counts_tc),
        "window": cfg.window_w,
        "stride": cfg.stride_s,
        "seed": cfg.shuffle_seed,
    }
    counts = {"subschema_count": len(subs), "tables": len(schema.tables)}
    _write_manifest(out, "subschemas", config, {"shuffle_seed": cfg.shuffle_seed},
                    counts, ["subschemas.jsonl"])
    log.info("subschemas: %d for %s", len(subs), schema.db_id)


@main.command()
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--replay", "replay_path", default=None, help="replay store for offline runs")
@click.option("--checkpoint", "checkpoint_path", default=None,
              help="JSONL checkpoint; reruns skip finished sub-schemas")
@_subschema_options
@_generation_options
@click.pass_context
@_run
def generate(ctx, db_path, out_path, replay_path, checkpoint_path,
             subschemas_path, tc, window, stride, seed,
             n_per_level, levels, min_col_count, max_repair):
    """Initial synthesis round over every sub-schema (judge, execute, repair,
    reasoning); keeps rejected examples so balance can recount them."""
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    replay = _opt(ctx, "replay", replay_path)
    schema = introspect_schema(db)
    subs, sub_fragment, seeds = _load_subschemas(ctx, schema, subschemas_path, tc, window, stride, seed)
    gen_cfg = _resolve_generation_config(ctx, n_per_level, levels, min_col_count, max_repair)
    gateway = _make_gateway(replay)
    diagnostics: list[dict] = []
    examples = run_initial_round(
        schema, subs, gen_cfg, gateway, db,
        jobs=ctx.obj["jobs"], diagnostics=diagnostics,
        checkpoint_path=_opt(ctx, "checkpoint", checkpoint_path),
    )
    dataset_io.write_examples(out / "initial.jsonl", examples)
    dataset_io.write_jsonl(out / "diagnostics.jsonl", diagnostics)
    config = {"db": str(db), "replay": str(replay) if replay else None,
              **sub_fragment, **_generation_fragment(gen_cfg)}
    counts = {
        "subschemas": len(subs),
        "examples": len(examples),
        "retained": sum(1 for e in examples if e.judge_verdict and e.executable),
        "diagnostics": len(diagnostics),
    }
    _write_manifest(out, "generate", config, seeds, counts,
                    ["initial.jsonl", "diagnostics.jsonl"])
    log.info("generate: %s", counts)


@main.command()
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--initial", "initial_path", default=None, help="initial.jsonl from generate")
@click.option("--replay", "replay_path", default=None)
@_subschema_options
@_generation_options
@click.pass_context
@_run
def balance(ctx, db_path, out_path, initial_path, replay_path,
            subschemas_path, tc, window, stride, seed,
            n_per_level, levels, min_col_count, max_repair):
    """Column-usage balancing round over the initial examples, then the final
    filter, dedup, and id assignment."""
    db = _opt(ctx, "db", db_path, required=True)
    initial_file = _opt(ctx, "initial", initial_path, required=True)
    out = _out_dir(ctx, out_path)
    replay = _opt(ctx, "replay", replay_path)
    schema = introspect_schema(db)
    subs, sub_fragment, seeds = _load_subschemas(ctx, schema, subschemas_path, tc, window, stride, seed)
    gen_cfg = _resolve_generation_config(ctx, n_per_level, levels, min_col_count, max_repair)
    gateway = _make_gateway(replay)
    initial = dataset_io.read_examples(initial_file)
    diagnostics: list[dict] = []
    focused = run_balance_round(
        schema, subs, initial, gen_cfg, gateway, db,
        jobs=ctx.obj["jobs"], diagnostics=diagnostics,
    )
    final = finalize_dataset(initial + focused, schema.db_id, diagnostics)
    dataset_io.write_examples(out / "dataset.jsonl", final)
    dataset_io.write_jsonl(out / "diagnostics.jsonl", diagnostics)
    config = {"db": str(db), "initial": str(initial_file),
              "replay": str(replay) if replay else None,
              **sub_fragment, **_generation_fragment(gen_cfg)}
    counts = {
        "initial": len(initial),
        "focused": len(focused),
        "final": len(final),
        "diagnostics": len(diagnostics),
    }
    _write_manifest(out, "balance", config, seeds, counts,
                    ["dataset.jsonl", "diagnostics.jsonl"])
    log.info("balance: %s", counts)


@main.command()
@click.option("--data", "data_path", default=None, help="examples JSONL")
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.pass_context
@_run
def stats(ctx, data_path, db_path, out_path):
    """Difficulty/join/aggregation statistics and column-usage figures."""
    data = _opt(ctx, "data", data_path, required=True)
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    schema = introspect_schema(db)
    examples = dataset_io.read_examples(data)
    report = dataset_io.compute_stats(examples, schema)
    _write_json(out / "stats.json", report.to_dict())
    (out / "stats.md").write_text(report.to_markdown(), encoding="utf-8")
    config = {"db": str(db), "data": str(data)}
    counts = {
        "total": report.total,
        "unused_columns": report.unused_column_count,
        "window_usage": report.window_usage_count,
        "unparsed": report.unparsed_count,
    }
    _write_manifest(out, "stats", config, {}, counts, ["stats.json", "stats.md"])
    log.info("stats: %s", counts)


@main.command()
@click.option("--data", "data_path", default=None)
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--ratios", default=None, help="train,dev,test fractions, e.g. 0.94,0.03,0.03")
@click.option("--seed", type=int, default=None)
@click.pass_context
@_run
def split(ctx, data_path, db_path, out_path, ratios, seed):
    """Column-coverage-first stratified train/dev/test split."""
    data = _opt(ctx, "data", data_path, required=True)
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    ratio_values = _parse_floats(_opt(ctx, "ratios", ratios, "0.94,0.03,0.03"))
    seed_value = int(_opt(ctx, "seed", seed, 0))
    schema = introspect_schema(db)
    examples = dataset_io.read_examples(data)
    parts = dataset_io.split_dataset(examples, ratios=ratio_values, seed=seed_value, schema=schema)
    outputs = []
    counts = {}
    for part in parts:
        name = f"{part.name}.jsonl"
        dataset_io.write_examples(out / name, part.examples)
        outputs.append(name)
        counts[part.name] = len(part.examples)
    config = {"db": str(db), "data": str(data), "ratios": list(ratio_values), "seed": seed_value}
    _write_manifest(out, "split", config, {"split_seed": seed_value}, counts, outputs)
    log.info("split: %s", counts)


@main.command()
@click.option("--db", "db_path", default=None)
@click.option("--questions", "questions_path", default=None,
              help="JSONL of {question_id, question, hint?}")
@click.option("--corpus", "corpus_path", default=None,
              help="examples JSONL backing the retrieval index")
@click.option("--out", "out_path", default=None)
@click.option("--mode", type=click.Choice(LINKING_MODES), default=None)
@click.option("--topk", type=int, default=None)
@click.option("--replay", "replay_path", default=None)
@click.pass_context
@_run
def link(ctx, db_path, questions_path, corpus_path, out_path, mode, topk, replay_path):
    """Schema linking: keyword extraction, example retrieval, entity matching,
    and column filtering into a FilteredSchema per question."""
    db = _opt(ctx, "db", db_path, required=True)
    questions_file = _opt(ctx, "questions", questions_path, required=True)
    corpus_file = _opt(ctx, "corpus", corpus_path, required=True)
    out = _out_dir(ctx, out_path)
    mode_value = _opt(ctx, "mode", mode, "bm25-top6")
    if mode_value not in LINKING_MODES:
        raise click.UsageError(f"unknown linking mode {mode_value!r}")
    topk_value = int(_opt(ctx, "topk", topk, 6))
    replay = _opt(ctx, "replay", replay_path)

    schema = introspect_schema(db)
    corpus_rows = dataset_io.read_jsonl(corpus_file)
    corpus_by_id = {str(row["id"]): row for row in corpus_rows}
    if mode_value.startswith("vec"):
        index = VectorIndex.build(corpus_rows)
    else:
        index = Bm25Index.build(corpus_rows)
    value_index = build_value_index(db, schema)
    gateway = _make_gateway(replay) if mode_value.endswith("+llm") else None

    diagnostics: list[dict] = []
    results = []
    for row in dataset_io.read_jsonl(questions_file):
        outcome = run_linking(
            schema, row["question"], row.get("hint") or "", index, corpus_by_id,
            mode_value, gateway=gateway, value_index=value_index,
            topk=topk_value, diagnostics=diagnostics,
        )
        results.append({
            "question_id": row.get("question_id"),
            "keywords": list(outcome.keywords.keywords),
            "retrieved_ids": list(outcome.retrieved_ids),
            "selected_ids": list(outcome.selected_ids),
            "entity_hits": [list(hit) for hit in outcome.entity_hits],
            "filtered": outcome.filtered.to_dict(),
        })
    dataset_io.write_jsonl(out / "filtered.jsonl", results)
    dataset_io.write_jsonl(out / "diagnostics.jsonl", diagnostics)
    config = {"db": str(db), "questions": str(questions_file), "corpus": str(corpus_file),
              "mode": mode_value, "topk": topk_value,
              "replay": str(replay) if replay else None}
    counts = {"questions": len(results), "diagnostics": len(diagnostics)}
    _write_manifest(out, "link", config, {}, counts, ["filtered.jsonl", "diagnostics.jsonl"])
    log.info("link: %s via %s", counts, mode_value)


@main.command()
@click.option("--pred", "pred_path", default=None, help="JSONL of {question_id, candidates}")
@click.option("--gold", "gold_path", default=None, help="JSONL of {question_id, sql, db_id}")
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.pass_context
@_run
def evaluate(ctx, pred_path, gold_path, db_path, out_path):
    """Execution accuracy and soft F1 with per-question upper/lower bounds."""
    pred = _opt(ctx, "pred", pred_path, required=True)
    gold = _opt(ctx, "gold", gold_path, required=True)
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    predictions = evaluation.read_predictions(pred)
    golds = evaluation.read_gold(gold)
    outcome, detail = evaluation.evaluate_predictions(predictions, golds, db)
    bounds_by_qid = {q.question_id: q for q in outcome.per_question}
    rows = []
    for qid, scores in detail.items():
        row = {"question_id": qid, "candidates": [s.to_dict() for s in scores]}
        row.update(bounds_by_qid[qid].to_dict())
        rows.append(row)
    dataset_io.write_jsonl(out / "scores.jsonl", rows)
    _write_json(out / "aggregate.json", outcome.to_dict()["aggregates"])
    (out / "aggregate.md").write_text(outcome.to_markdown(), encoding="utf-8")
    config = {"db": str(db), "pred": str(pred), "gold": str(gold)}
    counts = {"questions": len(golds),
              "candidates": sum(len(s) for s in detail.values())}
    _write_manifest(out, "evaluate", config, {}, counts,
                    ["scores.jsonl", "aggregate.json", "aggregate.md"])
    log.info("evaluate: %s", counts)


@main.command(name="export-sft")
@click.option("--data", "data_path", default=None)
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--kind", type=click.Choice(dataset_io.DATASET_KINDS), default=None)
@click.option("--fs-count", type=int, default=None)
@click.option("--fs-reasoning/--no-fs-reasoning", "fs_reasoning", default=None)
@click.option("--filtered", "filtered_path", default=None,
              help="filtered.jsonl from link (required for T2SWS)")
@click.option("--corpus", "corpus_path", default=None,
              help="few-shot pool; defaults to --data")
@click.pass_context
@_run
def export_sft(ctx, data_path, db_path, out_path, kind, fs_count, fs_reasoning,
               filtered_path, corpus_path):
    """Prompt/completion records in one of the context configurations."""
    data = _opt(ctx, "data", data_path, required=True)
    db = _opt(ctx, "db", db_path, required=True)
    out = _out_dir(ctx, out_path)
    export_cfg = dataset_io.ExportConfig(
        dataset_kind=_opt(ctx, "kind", kind, required=True),
        fs_count=int(_opt(ctx, "fs_count", fs_count, 0)),
        fs_reasoning=bool(_opt(ctx, "fs_reasoning", fs_reasoning, False)),
    )
    schema = introspect_schema(db)
    examples = dataset_io.read_examples(data)

    filtered_schemas = None
    filtered_file = _opt(ctx, "filtered", filtered_path)
    if filtered_file:
        filtered_schemas = {}
        for row in dataset_io.read_jsonl(filtered_file):
            key = str(row.get("question_id") or row.get("id"))
            payload = row.get("filtered", row)
            filtered_schemas[key] = FilteredSchema.from_dict(payload)

    index = corpus_by_id = None
    if export_cfg.fs_count > 0:
        corpus_file = _opt(ctx, "corpus", corpus_path, data)
        corpus_rows = dataset_io.read_jsonl(corpus_file)
        corpus_by_id = {str(row["id"]): row for row in corpus_rows}
        index = Bm25Index.build(corpus_rows)

    records = dataset_io.export_sft(
        examples, export_cfg, schema,
        filtered_schemas=filtered_schemas, index=index, corpus_by_id=corpus_by_id,
    )
    dataset_io.write_jsonl(out / "sft.jsonl", (r.to_dict() for r in records))
    config = {"db": str(db), "data": str(data),
              "filtered": str(filtered_file) if filtered_file else None,
              **export_cfg.to_dict()}
    counts = {"records": len(records)}
    _write_manifest(out, "export-sft", config, {}, counts, ["sft.jsonl"])
    log.info("export-sft: %s", counts)


@main.command(name="replay-record")
@click.option("--db", "db_path", default=None)
@click.option("--out", "out_path", default=None)
@click.option("--store", "store_path", default=None, help="replay store to write")
@_subschema_options
@_generation_options
@click.pass_context
@_run
def replay_record(ctx, db_path, out_path, store_path,
                  subschemas_path, tc, window, stride, seed,
                  n_per_level, levels, min_col_count, max_repair):
    """Full pipeline against the live provider, recording every response into
    a replay store for offline reruns."""
    db = _opt(ctx, "db", db_path, required=True)
    store_file = _opt(ctx, "store", store_path, required=True)
    out = _out_dir(ctx, out_path)
    schema = introspect_schema(db)
    subs, sub_fragment, seeds = _load_subschemas(ctx, schema, subschemas_path, tc, window, stride, seed)
    gen_cfg = _resolve_generation_config(ctx, n_per_level, levels, min_col_count, max_repair)
    store = ReplayStore()
    gateway = LlmGateway(store=store, provider=HttpProvider(), mode="record")
    diagnostics: list[dict] = []
    examples = run_pipeline(
        schema, subs, gen_cfg, gateway, db,
        jobs=ctx.obj["jobs"], diagnostics=diagnostics,
    )
    store.save(store_file)
    dataset_io.write_examples(out / "dataset.jsonl", examples)
    dataset_io.write_jsonl(out / "diagnostics.jsonl", diagnostics)
    config = {"db": str(db), "store": str(store_file),
              **sub_fragment, **_generation_fragment(gen_cfg)}
    counts = {"examples": len(examples), "responses": len(store),
              "diagnostics": len(diagnostics)}
    _write_manifest(out, "replay-record", config, seeds, counts,
                    ["dataset.jsonl", "diagnostics.jsonl"])
    log.info("replay-record: %s", counts)


if __name__ == "__main__":
    main()
