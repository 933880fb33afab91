"""Deterministic fake model for authoring and exercising pipeline replay stores.

Responses are a pure function of the request content, with a few content-keyed
misbehaviors so the pipeline's failure paths get exercised:
  - challenging-level generation for the A-only sub-schema holding a1 returns
    text with no <answer> tag (malformed generation),
  - the B-only moderate batch leads with AVG("pk"), which the judge then
    flags illogical (averaging identifiers),
  - simple-level A+B batches lead with a broken query: the variant holding a1
    is repairable (a9 -> fixed), the other one is not (b9 echoed back),
  - the reasoning trace for the repaired query ends with the wrong final SQL.
"""

import json
import re

from subsql.llm_gateway import LlmResponse
from subsql.synthesis import LEVELS

# broken column names stay unquoted: SQLite would read a double-quoted
# unknown identifier as a string literal and execute anyway
REPAIRED_SQL = 'SELECT "a1" FROM "A" WHERE "pk" > 0'
BROKEN_REPAIRABLE = 'SELECT a9 FROM "A"'
BROKEN_HOPELESS = 'SELECT b9 FROM "B"'
ILLOGICAL_SQL = 'SELECT AVG("pk") FROM "B"'

_N_RE = re.compile(r"Write (\d+) distinct")
_LEVEL_RE = re.compile(r'at the "(\w+)" complexity level')
_FK_RE = re.compile(r'^  - (\w+)\."([^"]+)" -> (\w+)\."([^"]+)"$', re.M)
_FOCUS_RE = re.compile(r"^  - (\w+)\.(\w+)$", re.M)


def _between(text: str, start: str, end: str) -> str:
    i = text.index(start) + len(start)
    j = text.index(end, i)
    return text[i:j].strip()


def _parse_schema(prompt: str):
    tables: dict[str, list[str]] = {}
    current = None
    for line in prompt.splitlines():
        if line.startswith('Table: "'):
            current = line[len('Table: "'):-1]
            tables[current] = []
        elif line.startswith('  - "') and current is not None:
            name = line[5:line.index('"', 5)]
            tables[current].append(name)
        elif line.startswith("Foreign keys:"):
            current = None
    fks = _FK_RE.findall(prompt)
    return tables, fks


class ScriptedProvider:
    """Callable provider: LlmRequest -> LlmResponse."""

    def __call__(self, request) -> LlmResponse:
        handler = {
            "generate_sql": self._generate,
            "generate_sql_focus": self._generate,
            "sql_to_text": self._sql_to_text,
            "judge": self._judge,
            "repair": self._repair,
            "reasoning": self._reasoning,
        }.get(request.template_id)
        if handler is None:
            raise ValueError(f"scripted provider has no handler for {request.template_id!r}")
        return LlmResponse(text=handler(request.rendered_prompt, request.template_id))

    # -- generation ---------------------------------------------------------

    def _generate(self, prompt: str, template_id: str) -> str:
        n = int(_N_RE.search(prompt).group(1))
        level = _LEVEL_RE.search(prompt).group(1)
        tables, fks = _parse_schema(prompt)
        names = list(tables)

        if template_id == "generate_sql_focus":
            focus_section = _between(prompt, "### FOCUS COLUMNS", "### REQUIREMENTS")
            focus = _FOCUS_RE.findall(focus_section)
            level_index = LEVELS.index(level)
            queries = []
            for i in range(n):
                t, c = focus[(n * level_index + i) % len(focus)]
                if level == "window":
                    queries.append(f'SELECT "{c}", COUNT(*) OVER () FROM "{t}"')
                else:
                    queries.append(f'SELECT "{c}" FROM "{t}" WHERE "{c}" IS NOT NULL')
            return self._batch(queries)

        if len(names) == 1:
            queries = self._single_table(names[0], tables[names[0]], level, n)
        else:
            queries = self._two_tables(names, tables, fks, level, n)
        if queries is None:  # scripted malformed-output case
            return "The model rambles here and never produces a tagged answer."
        return self._batch(queries)

    def _single_table(self, t: str, cols: list[str], level: str, n: int):
        queries = []
        for i in range(n):
            if level == "simple":
                c = cols[i % len(cols)]
                queries.append(f'SELECT "{c}" FROM "{t}" WHERE "{c}" IS NOT NULL LIMIT {i + 3}')
            elif level == "moderate":
                if i == 0 and t == "B" and "pk" in cols:
                    queries.append(ILLOGICAL_SQL)
                    continue
                c = cols[(i + 1) % len(cols)]
                queries.append(f'SELECT "{c}", COUNT(*) FROM "{t}" GROUP BY "{c}"')
            elif level == "challenging":
                if t == "A" and "a1" in cols:
                    return None  # malformed batch
                c = cols[i % len(cols)]
                c2 = cols[(i + 2) % len(cols)]
                queries.append(
                    f'SELECT "{c}" FROM "{t}" WHERE "{c}" IN (SELECT "{c}" FROM "{t}" WHERE "{c2}" IS NOT NULL)'
                )
            else:  # window
                c = cols[(i + 1) % len(cols)]
                queries.append(f'SELECT "{c}", ROW_NUMBER() OVER (ORDER BY "{c}") AS rn FROM "{t}"')
        return queries

    def _two_tables(self, names, tables, fks, level: str, n: int):
        if not fks:
            return self._single_table(names[0], tables[names[0]], level, n)
        src_t, src_c, dst_t, dst_c = fks[0]
        a_cols = tables[dst_t]
        b_cols = tables[src_t]
        fixture = set(names) == {"A", "B"}
        queries = []
        for i in range(n):
            if level == "simple":
                if i == 0 and fixture:
                    queries.append(BROKEN_REPAIRABLE if "a1" in a_cols else BROKEN_HOPELESS)
                    continue
                c = a_cols[(i + 1) % len(a_cols)]
                queries.append(f'SELECT "{c}" FROM "{dst_t}" WHERE "{c}" IS NOT NULL LIMIT {i + 4}')
            elif level == "moderate":
                ca = a_cols[1:][i % max(1, len(a_cols) - 1)] if len(a_cols) > 1 else a_cols[0]
                queries.append(
                    f'SELECT COUNT(*) FROM "{src_t}" JOIN "{dst_t}" ON {src_t}."{src_c}" = {dst_t}."{dst_c}" '
                    f'WHERE {dst_t}."{ca}" IS NOT NULL'
                )
            elif level == "challenging":
                ca = a_cols[(i + 1) % len(a_cols)]
                cb = b_cols[(i + 2) % len(b_cols)]
                queries.append(
                    f'SELECT {dst_t}."{ca}" FROM "{dst_t}" WHERE {dst_t}."{dst_c}" IN '
                    f'(SELECT {src_t}."{src_c}" FROM "{src_t}" WHERE {src_t}."{cb}" IS NOT NULL)'
                )
            else:  # window
                cb = b_cols[(i + 2) % len(b_cols)]
                queries.append(
                    f'SELECT {src_t}."{cb}", COUNT(*) OVER (PARTITION BY {src_t}."{src_c}") FROM "{src_t}"'
                )
        return queries

    @staticmethod
    def _batch(queries: list[str]) -> str:
        return (
            "<reasoning>Planned one query per slot using the listed schema.</reasoning>\n"
            f"<answer>\n{json.dumps(queries)}\n</answer>"
        )

    # -- translation, judging, repair, reasoning ----------------------------

    def _sql_to_text(self, prompt: str, template_id: str) -> str:
        sql = _between(prompt, "### SQL QUERY\n", "\n\nWrite the single")
        flat = " ".join(sql.split())
        return (
            "<reasoning>The query projects and filters as written.</reasoning>\n"
            f"<answer>What rows does the query `{flat}` return?</answer>"
        )

    def _judge(self, prompt: str, template_id: str) -> str:
        sql = _between(prompt, "SQL: ", "\nQuestion: ")
        if 'AVG("pk")' in sql:
            verdict = {"verdict": "illogical", "reason": "averages a unique identifier column"}
        else:
            verdict = {"verdict": "logical", "reason": "query matches the question"}
        return "Here is my assessment:\n" + json.dumps(verdict)

    def _repair(self, prompt: str, template_id: str) -> str:
        broken = _between(prompt, "### BROKEN SQL\n", "\n\n### ENGINE ERROR")
        fixed = REPAIRED_SQL if "a9" in broken else broken
        return (
            "<reasoning>Swapped the unknown column for an existing one.</reasoning>\n"
            f"<answer>\n```sql\n{fixed}\n```\n</answer>"
        )

    def _reasoning(self, prompt: str, template_id: str) -> str:
        target = _between(prompt, "### TARGET SQL\n", "\n\nDecompose")
        answer = target.replace("> 0", "> 1") if target == REPAIRED_SQL else target
        return (
            "<reasoning>Step 1: pick the tables. Step 2: apply the filters. "
            "Step 3: assemble the final query.</reasoning>\n"
            f"<answer>{answer}</answer>"
        )
