"""Author the committed pipeline replay store.

Runs the synthesis pipeline in record mode against the scripted provider and
saves every exchanged response; tests then replay the store fully offline.
Rerun after any change to prompts, fixture data, or pipeline call order:

    python3 tests/fixtures/record_replay_store.py
"""

import sys
import tempfile
from pathlib import Path

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from pipeline_db import PIPELINE_GENERATION_KW, PIPELINE_SUBSCHEMA_KW, build_pipeline_db
from scripted_provider import ScriptedProvider

from subsql.llm_gateway import LlmGateway, ReplayStore
from subsql.schema_core import introspect_schema
from subsql.subschema_gen import SubSchemaConfig, construct_sub_schemas
from subsql.synthesis import GenerationConfig, run_pipeline


def main() -> None:
    tmp = Path(tempfile.mkdtemp())
    db = tmp / "pipeline_fixture.db"
    build_pipeline_db(db)
    schema = introspect_schema(db)
    subs = construct_sub_schemas(schema, SubSchemaConfig(**PIPELINE_SUBSCHEMA_KW))
    store = ReplayStore()
    gateway = LlmGateway(store=store, provider=ScriptedProvider(), mode="record")
    diagnostics = []
    examples = run_pipeline(
        schema, subs, GenerationConfig(**PIPELINE_GENERATION_KW), gateway, db,
        diagnostics=diagnostics,
    )
    out = HERE / "pipeline_replay.jsonl"
    store.save(out)
    print(f"{out.name}: {len(store)} recorded responses, "
          f"{len(examples)} retained examples, {len(diagnostics)} diagnostics")


if __name__ == "__main__":
    main()
