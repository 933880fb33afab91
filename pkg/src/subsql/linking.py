"""Schema linking: keyword extraction, keyword-pair retrieval over the
synthetic corpus (BM25 or a pluggable vector retriever), LSH entity matching
over database cell values, LLM column filtering, and filtered-schema assembly.
Tables are never filtered — only columns are narrowed.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import re
import sqlite3
from dataclasses import dataclass, field

from .llm_gateway import GatewayError, JsonParseError, make_request, parse_json_object
from .schema_core import DatabaseSchema, connection_columns, format_schema_text
from .sql_analysis import extract_schema_elements
from .subschema_gen import SplitMix64

LINKING_MODES = (
    "bm25-top6",
    "bm25-all",
    "bm25-top6+llm",
    "vec-top6",
    "vec-all",
    "vec-top6+llm",
)

DEFAULT_TOPK = 6

_TOKEN_RE = re.compile(r"[a-z0-9_]+")

_STOPWORDS = frozenset("""
a about above after again all am an and any are as at be because been before
being below between both but by can could did do does doing down during each
few find for from further get give had has have having he her here hers him
his how i if in into is it its itself just let list me more most my no nor
not now of off on once only or other our ours out over own per please same
she should show so some such tell than that the their theirs them then there
these they this those through to too under until up us very was we were what
when where which while who whom why will with would you your yours
""".split())


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# keywords


@dataclass(frozen=True)
class KeywordSet:
    keywords: tuple[str, ...]
    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        known = set(self.keywords)
        for a, b in self.pairs:
            if a not in known or b not in known:
                raise ValueError(f"pair ({a!r}, {b!r}) uses an unknown keyword")


def make_keyword_set(keywords) -> KeywordSet:
    """Deduplicate keywords preserving order; pairs are all unordered-unique
    combinations, sorted lexicographically (a single keyword pairs with
    itself)."""
    seen = []
    for k in keywords:
        k = k.strip()
        if k and k not in seen:
            seen.append(k)
    if not seen:
        return KeywordSet(keywords=(), pairs=())
    if len(seen) == 1:
        pairs = [(seen[0], seen[0])]
    else:
        pairs = sorted(tuple(sorted(p)) for p in itertools.combinations(seen, 2))
    return KeywordSet(keywords=tuple(seen), pairs=tuple(pairs))


def fallback_keywords(question: str, hint: str = "") -> list[str]:
    """Stopword-filtered content words, order-preserving and deduplicated."""
    out = []
    for token in tokenize(f"{question} {hint}"):
        if token not in _STOPWORDS and token not in out:
            out.append(token)
    return out


def extract_keywords(question: str, hint: str = "", gateway=None,
                     diagnostics: list | None = None) -> KeywordSet:
    """LLM keyword extraction with a deterministic fallback when there is no
    gateway or the call fails — extraction never errors out."""
    if not question:
        raise ValueError("question must be non-empty")
    if gateway is not None:
        text = question if not hint else f"{question}\nHint: {hint}"
        request = make_request("keywords", {"QUESTION_AND_HINT": text}, "keywords")
        try:
            response = gateway.complete(request)
            parsed = parse_json_object(response.text, ["reasoning", "keywords"])
            keywords = [k for k in parsed["keywords"] if k.strip()]
            if keywords:
                return make_keyword_set(keywords)
        except (GatewayError, JsonParseError) as exc:
            if diagnostics is not None:
                diagnostics.append({"stage": "keywords", "subschema_id": "",
                                    "reason": f"extraction fell back to tokenizer: {exc}"})
    return make_keyword_set(fallback_keywords(question, hint))


# ---------------------------------------------------------------------------
# BM25 retrieval


class Bm25Index:
    """Textbook Okapi BM25 over lowercase tokens of question + SQL."""

    def __init__(self, k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.doc_tokens: dict[str, dict[str, int]] = {}
        self.doc_len: dict[str, int] = {}
        self.df: dict[str, int] = {}
        self.avgdl = 0.0

    @classmethod
    def build(cls, corpus, k1: float = 1.2, b: float = 0.75) -> "Bm25Index":
        """corpus: iterable of objects with .id, .question, .sql (or dicts)."""
        index = cls(k1=k1, b=b)
        for item in corpus:
            if isinstance(item, dict):
                doc_id, question, sql = item["id"], item["question"], item["sql"]
            else:
                doc_id, question, sql = item.id, item.question, item.sql
            index._add(doc_id, f"{question} {sql}")
        if not index.doc_tokens:
            raise ValueError("cannot build an index over an empty corpus")
        index.avgdl = sum(index.doc_len.values()) / len(index.doc_len)
        return index

    def _add(self, doc_id: str, text: str) -> None:
        if doc_id in self.doc_tokens:
            raise ValueError(f"duplicate document id {doc_id!r}")
        tokens = tokenize(text)
        counts: dict[str, int] = {}
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
        self.doc_tokens[doc_id] = counts
        self.doc_len[doc_id] = len(tokens)
        for t in counts:
            self.df[t] = self.df.get(t, 0) + 1

    def __len__(self):
        return len(self.doc_tokens)

    def idf(self, token: str) -> float:
        n = len(self.doc_tokens)
        df = self.df.get(token, 0)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def score(self, query_tokens, doc_id: str) -> float:
        counts = self.doc_tokens[doc_id]
        dl = self.doc_len[doc_id]
        total = 0.0
        for token in query_tokens:
            tf = counts.get(token, 0)
            if tf == 0:
                continue
            norm = tf * (self.k1 + 1) / (tf + self.k1 * (1 - self.b + self.b * dl / self.avgdl))
            total += self.idf(token) * norm
        return total

    def search(self, query: str, k: int | None = None, candidates=None) -> list[tuple[str, float]]:
        """Ranked (id, score) with zero-score docs omitted; ties break by id."""
        query_tokens = tokenize(query)
        pool = self.doc_tokens if candidates is None else candidates
        scored = []
        for doc_id in pool:
            if doc_id not in self.doc_tokens:
                raise KeyError(f"candidate {doc_id!r} not in index")
            s = self.score(query_tokens, doc_id)
            if s > 0.0:
                scored.append((doc_id, s))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored if k is None else scored[:k]

    def to_dict(self) -> dict:
        return {
            "format": "bm25.v1",
            "k1": self.k1,
            "b": self.b,
            "docs": {d: counts for d, counts in sorted(self.doc_tokens.items())},
            "digest": self.digest(),
        }

    def digest(self) -> str:
        payload = json.dumps(sorted((d, sorted(c.items())) for d, c in self.doc_tokens.items()))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "Bm25Index":
        if d.get("format") != "bm25.v1":
            raise ValueError(f"unsupported index format: {d.get('format')!r}")
        index = cls(k1=d["k1"], b=d["b"])
        for doc_id, counts in d["docs"].items():
            index.doc_tokens[doc_id] = dict(counts)
            index.doc_len[doc_id] = sum(counts.values())
            for t in counts:
                index.df[t] = index.df.get(t, 0) + 1
        if index.doc_tokens:
            index.avgdl = sum(index.doc_len.values()) / len(index.doc_len)
        return index


# ---------------------------------------------------------------------------
# deterministic hashing embedder + vector retrieval (plug interface)

EMBED_DIM = 64


def hashing_embed(text: str, dim: int = EMBED_DIM) -> list[float]:
    """Deterministic bag-of-tokens embedding: each token hashes to a slot and
    a sign. No external model; stable across runs and platforms."""
    vec = [0.0] * dim
    for token in tokenize(text):
        h = int.from_bytes(hashlib.blake2b(token.encode(), digest_size=8).digest(), "big")
        slot = h % dim
        sign = 1.0 if (h >> 8) & 1 else -1.0
        vec[slot] += sign
    norm = math.sqrt(sum(v * v for v in vec))
    if norm > 0:
        vec = [v / norm for v in vec]
    return vec


def _cosine(u: list[float], v: list[float]) -> float:
    return sum(a * b for a, b in zip(u, v))


class VectorIndex:
    """Same search interface as Bm25Index, scored by cosine similarity of a
    deterministic embedding. embed_fn is pluggable for real embedders."""

    def __init__(self, embed_fn=hashing_embed):
        self.embed_fn = embed_fn
        self.vectors: dict[str, list[float]] = {}

    @classmethod
    def build(cls, corpus, embed_fn=hashing_embed) -> "VectorIndex":
        index = cls(embed_fn=embed_fn)
        for item in corpus:
            if isinstance(item, dict):
                doc_id, question, sql = item["id"], item["question"], item["sql"]
            else:
                doc_id, question, sql = item.id, item.question, item.sql
            if doc_id in index.vectors:
                raise ValueError(f"duplicate document id {doc_id!r}")
            index.vectors[doc_id] = index.embed_fn(f"{question} {sql}")
        if not index.vectors:
            raise ValueError("cannot build an index over an empty corpus")
        return index

    def __len__(self):
        return len(self.vectors)

    def search(self, query: str, k: int | None = None, candidates=None) -> list[tuple[str, float]]:
        qv = self.embed_fn(query)
        pool = self.vectors if candidates is None else candidates
        scored = []
        for doc_id in pool:
            if doc_id not in self.vectors:
                raise KeyError(f"candidate {doc_id!r} not in index")
            s = _cosine(qv, self.vectors[doc_id])
            if s > 0.0:
                scored.append((doc_id, s))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored if k is None else scored[:k]


def retrieve_per_pair(index, pairs) -> list[str]:
    """Top-1 example per keyword pair, deduplicated preserving first
    occurrence. Pairs are queried in sorted order, making the result
    independent of enumeration order."""
    out: list[str] = []
    for pair in sorted(tuple(p) for p in pairs):
        hits = index.search(" ".join(pair), k=1)
        if hits and hits[0][0] not in out:
            out.append(hits[0][0])
    return out


def select_topk(question: str, candidate_ids, index, k: int = DEFAULT_TOPK) -> list[str]:
    """Re-score candidates against the full question; top-k ids, ties by id.
    Candidates that score zero keep their retrieval slot at the tail (stable
    by id) so k few-shots stay available whenever k candidates exist."""
    candidate_ids = list(candidate_ids)
    scored = index.search(question, candidates=candidate_ids)
    ranked = [doc_id for doc_id, _ in scored]
    leftovers = sorted(set(candidate_ids) - set(ranked))
    return (ranked + leftovers)[:k]


# ---------------------------------------------------------------------------
# LSH entity matching over database values


@dataclass(frozen=True)
class LshConfig:
    num_perms: int = 128
    bands: int = 32
    rows: int = 4
    threshold: float = 0.4
    seed: int = 0x5E11E

    def __post_init__(self):
        if self.bands * self.rows != self.num_perms:
            raise ValueError("bands * rows must equal num_perms")


_MERSENNE = (1 << 61) - 1


def _gram_set(value: str) -> set[str]:
    value = value.lower()
    if len(value) < 3:
        return {value} if value else set()
    return {value[i:i + 3] for i in range(len(value) - 2)}


def _hash64(gram: str) -> int:
    return int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")


class ValueIndex:
    """MinHash signatures over character 3-grams of distinct text cell
    values, banded for LSH lookup."""

    def __init__(self, config: LshConfig = LshConfig()):
        self.config = config
        rng = SplitMix64(config.seed)
        self._perms = [(rng.next_u64() % (_MERSENNE - 1) + 1, rng.next_u64() % _MERSENNE)
                       for _ in range(config.num_perms)]
        self.entries: list[tuple[str, str, str]] = []  # (table, column, value)
        self._signatures: list[tuple[int, ...]] = []
        self._buckets: dict[tuple[int, tuple[int, ...]], list[int]] = {}

    def signature(self, value: str) -> tuple[int, ...]:
        grams = _gram_set(value)
        if not grams:
            return tuple([_MERSENNE] * self.config.num_perms)
        hashes = [_hash64(g) for g in grams]
        return tuple(min((a * h + b) % _MERSENNE for h in hashes) for a, b in self._perms)

    def add(self, table: str, column: str, value: str) -> None:
        sig = self.signature(value)
        idx = len(self.entries)
        self.entries.append((table, column, value))
        self._signatures.append(sig)
        r = self.config.rows
        for band in range(self.config.bands):
            key = (band, sig[band * r:(band + 1) * r])
            self._buckets.setdefault(key, []).append(idx)

    def query(self, text: str) -> list[tuple[str, str, str, float]]:
        """Candidates sharing at least one LSH band, with estimated Jaccard ≥
        threshold, descending score then (table, column, value)."""
        sig = self.signature(text)
        r = self.config.rows
        candidate_ids: set[int] = set()
        for band in range(self.config.bands):
            key = (band, sig[band * r:(band + 1) * r])
            candidate_ids.update(self._buckets.get(key, ()))
        hits = []
        for idx in candidate_ids:
            other = self._signatures[idx]
            est = sum(1 for a, b in zip(sig, other) if a == b) / self.config.num_perms
            if est >= self.config.threshold:
                table, column, value = self.entries[idx]
                hits.append((table, column, value, est))
        hits.sort(key=lambda h: (-h[3], h[0], h[1], h[2]))
        return hits


_TEXT_AFFINITY = re.compile(r"char|clob|text", re.I)


def build_value_index(db_path, schema: DatabaseSchema, config: LshConfig = LshConfig(),
                      max_values_per_column: int = 2000) -> ValueIndex:
    """Index distinct values of text-typed columns straight from the
    database snapshot."""
    index = ValueIndex(config)
    uri = f"file:{db_path}?mode=ro"
    con = sqlite3.connect(uri, uri=True)
    try:
        con.text_factory = lambda raw: raw.decode("utf-8", "replace")
        cur = con.cursor()
        for table in schema.tables:
            for col in table.columns:
                if not (_TEXT_AFFINITY.search(col.declared_type or "") or not col.declared_type):
                    continue
                cur.execute(
                    f'SELECT DISTINCT "{table.name}"."{col.name}" FROM "{table.name}" '
                    f'WHERE "{col.name}" IS NOT NULL ORDER BY 1 LIMIT ?',
                    (max_values_per_column,),
                )
                for (value,) in cur.fetchall():
                    if isinstance(value, str) and value.strip():
                        index.add(table.name, col.name, value)
    finally:
        con.close()
    return index


def match_entities(value_index: ValueIndex, keywords) -> list[tuple[str, str, str, float]]:
    """Entity hits across all keywords, deduplicated on (table, column,
    value) keeping the best score."""
    best: dict[tuple[str, str, str], float] = {}
    for keyword in keywords:
        for table, column, value, score in value_index.query(keyword):
            key = (table, column, value)
            if score > best.get(key, -1.0):
                best[key] = score
    merged = [(t, c, v, s) for (t, c, v), s in best.items()]
    merged.sort(key=lambda h: (-h[3], h[0], h[1], h[2]))
    return merged


# ---------------------------------------------------------------------------
# LLM column filtering (per table) + assembly


def _examples_block(examples) -> str:
    if not examples:
        return "No examples available."
    parts = []
    for i, ex in enumerate(examples, start=1):
        question = ex["question"] if isinstance(ex, dict) else ex.question
        sql = ex["sql"] if isinstance(ex, dict) else ex.sql
        parts.append(f"### Example {i}\nQuestion: {question}\nSQL: {sql}")
    return "\n\n".join(parts)


def filter_columns_llm(schema: DatabaseSchema, table_name: str, question_and_hint: str,
                       retrieved_examples, gateway, diagnostics: list | None = None) -> list[str]:
    """One column-selection call for one table; selections not in the table
    are dropped with a diagnostic. Unparseable output fails open to an empty
    selection (assembly keeps connection columns regardless)."""
    table = schema.table(table_name)
    request = make_request(
        "column_filter",
        {
            "TABLE_SCHEMA": format_schema_text(schema, {table.name: table.column_names()}),
            "EXAMPLES": _examples_block(retrieved_examples),
            "QUESTION_AND_HINT": question_and_hint,
        },
        "column_filter",
    )
    try:
        response = gateway.complete(request)
        parsed = parse_json_object(response.text, ["reasoning", "selected_columns"])
    except (GatewayError, JsonParseError) as exc:
        if diagnostics is not None:
            diagnostics.append({"stage": "column_filter", "subschema_id": table.name,
                                "reason": f"empty selection on failure: {exc}"})
        return []
    by_fold = {c.casefold(): c for c in table.column_names()}
    selected = []
    for name in parsed["selected_columns"]:
        hit = by_fold.get(name.casefold())
        if hit is None:
            if diagnostics is not None:
                diagnostics.append({"stage": "column_filter", "subschema_id": table.name,
                                    "reason": f"selected column {name!r} not in table, dropped"})
        elif hit not in selected:
            selected.append(hit)
    return selected


@dataclass
class FilteredSchema:
    db_id: str
    columns: dict[str, list[str]] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)  # "table.column" -> stage

    def column_set(self) -> set[tuple[str, str]]:
        return {(t, c) for t, cols in self.columns.items() for c in cols}

    def to_dict(self) -> dict:
        return {"db_id": self.db_id, "columns": self.columns, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "FilteredSchema":
        return cls(db_id=d["db_id"], columns={t: list(c) for t, c in d["columns"].items()},
                   provenance=dict(d["provenance"]))


def assemble_filtered_schema(schema: DatabaseSchema, llm_selections: dict[str, list[str]] | None = None,
                             entity_hits=(), retrieved_columns=()) -> FilteredSchema:
    """Union of connection columns (always), retrieved-example columns,
    entity-hit columns, and LLM selections; every table is present.
    Provenance records the highest-priority stage that added each column."""
    llm_selections = llm_selections or {}
    wanted: dict[tuple[str, str], str] = {}

    def claim(table: str, column: str, stage: str):
        if not schema.has_table(table):
            return
        tdef = schema.table(table)
        match = next((c for c in tdef.column_names() if c.casefold() == column.casefold()), None)
        if match is None:
            return
        key = (tdef.name, match)
        wanted.setdefault(key, stage)

    # priority order: connection > retrieval > entity > llm
    for table in schema.tables:
        for col in connection_columns(schema, table.name):
            claim(table.name, col, "connection")
    for table, column in retrieved_columns:
        claim(table, column, "retrieval")
    for hit in entity_hits:
        claim(hit[0], hit[1], "entity")
    for table, cols in llm_selections.items():
        for col in cols:
            claim(table, col, "llm")

    out = FilteredSchema(db_id=schema.db_id)
    for table in schema.tables:
        cols = [c for c in table.column_names() if (table.name, c) in wanted]
        out.columns[table.name] = cols
        for c in cols:
            out.provenance[f"{table.name}.{c}"] = wanted[(table.name, c)]
    return out


@dataclass
class LinkingResult:
    filtered: FilteredSchema
    keywords: KeywordSet
    retrieved_ids: list[str]
    selected_ids: list[str]
    entity_hits: list[tuple[str, str, str, float]]


def run_linking(schema: DatabaseSchema, question: str, hint: str, index, corpus_by_id: dict,
                mode: str, gateway=None, value_index: ValueIndex | None = None,
                topk: int = DEFAULT_TOPK, diagnostics: list | None = None) -> LinkingResult:
    """Full linking pass for one question under one of the retrieval modes."""
    if mode not in LINKING_MODES:
        raise ValueError(f"unknown linking mode {mode!r}; choose from {', '.join(LINKING_MODES)}")

    keyword_set = extract_keywords(question, hint, gateway=gateway, diagnostics=diagnostics)
    retrieved = retrieve_per_pair(index, keyword_set.pairs)

    use_llm = mode.endswith("+llm")
    if mode.endswith("-all"):
        selected = list(retrieved)
    else:
        selected = select_topk(question, retrieved, index, k=topk)

    entity_hits = match_entities(value_index, keyword_set.keywords) if value_index else []

    retrieved_columns: set[tuple[str, str]] = set()
    llm_selections: dict[str, list[str]] = {}
    if use_llm:
        examples = [corpus_by_id[i] for i in selected if i in corpus_by_id]
        question_and_hint = question if not hint else f"{question}\nHint: {hint}"
        for table in schema.tables:
            llm_selections[table.name] = filter_columns_llm(
                schema, table.name, question_and_hint, examples, gateway, diagnostics
            )
    else:
        for doc_id in selected:
            example = corpus_by_id.get(doc_id)
            if example is None:
                continue
            sql = example["sql"] if isinstance(example, dict) else example.sql
            try:
                parsed = extract_schema_elements(sql, schema)
            except Exception as exc:
                if diagnostics is not None:
                    diagnostics.append({"stage": "linking", "subschema_id": doc_id,
                                        "reason": f"retrieved example SQL unparseable: {exc}"})
                continue
            retrieved_columns.update(parsed.referenced)

    filtered = assemble_filtered_schema(
        schema,
        llm_selections=llm_selections,
        entity_hits=entity_hits,
        retrieved_columns=retrieved_columns,
    )
    return LinkingResult(
        filtered=filtered,
        keywords=keyword_set,
        retrieved_ids=retrieved,
        selected_ids=selected,
        entity_hits=entity_hits,
    )
