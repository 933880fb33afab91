"""Prompt templates. Placeholders are {UPPER_CASE} tokens substituted literally."""

GENERATION_TEMPERATURE = 0.7
JUDGE_TEMPERATURE = 0.0

# purpose tags double as the template family names
PURPOSE_TAGS = (
    "generate_sql",
    "sql_to_text",
    "judge",
    "repair",
    "reasoning",
    "keywords",
    "column_filter",
    "translate_candidates",
)

LEVEL_GUIDANCE = {
    "simple": (
        "Simple level: direct lookups or filters over one table; "
        "no nesting; aggregation only if the question plainly asks for a total or count."
    ),
    "moderate": (
        "Moderate level: a join across two tables or grouped aggregation "
        "(GROUP BY with COUNT/SUM/AVG), with meaningful filter conditions."
    ),
    "challenging": (
        "Challenging level: multi-table joins combined with nested subqueries, "
        "HAVING conditions, CASE expressions, or set operations."
    ),
    "window": (
        "Window level: every query MUST contain at least one window function "
        "(an OVER clause), e.g. ranking, running totals, or partitioned aggregates."
    ),
}

TEMPLATES: dict[str, str] = {}

TEMPLATES["generate_sql"] = """\
*** You are an expert SQL data generator. Your task is to write SQLite SQL queries over the {DB_ID} database, using ONLY the tables and columns listed below.

### AVAILABLE SCHEMA
{SCHEMA}

### TASK
Write {N} distinct, executable SQLite SQL queries at the "{LEVEL}" complexity level.
{LEVEL_GUIDANCE}

### REQUIREMENTS
* Use only the listed tables and columns. Quote identifiers containing spaces with double quotes.
* Across the batch, make full use of all available tables and columns.
* Prefer queries whose results are non-trivial (avoid constant-only selects).
* Every query must be valid SQLite that executes against the real database.

### Respond in the following format:
<reasoning>
How each query uses the schema and meets the "{LEVEL}" complexity level.
</reasoning>
<answer>
A JSON array of exactly {N} SQL strings, e.g. ["SELECT ...", "SELECT ..."].
</answer>
"""

TEMPLATES["generate_sql_focus"] = """\
*** You are an expert SQL data generator. Your task is to write SQLite SQL queries over the {DB_ID} database, using ONLY the tables and columns listed below.

### AVAILABLE SCHEMA
{SCHEMA}

### TASK
Write {N} distinct, executable SQLite SQL queries at the "{LEVEL}" complexity level.
{LEVEL_GUIDANCE}

### FOCUS COLUMNS
The following columns are underrepresented in the dataset so far. Focus on incorporating the underused columns; every query should use at least one of them:
{FOCUS_COLUMNS}

### REQUIREMENTS
* Use only the listed tables and columns. Quote identifiers containing spaces with double quotes.
* Across the batch, make full use of all available tables and columns.
* Every query must be valid SQLite that executes against the real database.

### Respond in the following format:
<reasoning>
How each query uses the focus columns and meets the "{LEVEL}" complexity level.
</reasoning>
<answer>
A JSON array of exactly {N} SQL strings, e.g. ["SELECT ...", "SELECT ..."].
</answer>
"""

TEMPLATES["sql_to_text"] = """\
*** You translate SQL queries into natural-language questions about the {DB_ID} database.

### SCHEMA CONTEXT
{SCHEMA}

### SQL QUERY
{SQL}

Write the single natural-language question that this SQL query answers exactly: same entities, same filters, same aggregation or ordering intent. Do not mention SQL, tables, or column names verbatim unless the question genuinely needs them.

### Respond in the following format:
<reasoning>
What the query computes, step by step.
</reasoning>
<answer>
The natural-language question.
</answer>
"""

TEMPLATES["judge"] = """\
*** You are a strict judge of SQL-question pairs for the {DB_ID} database. You decide whether a generated pair is logically sound and aligned.

### SCHEMA (the only tables and columns in scope)
{SCHEMA}

### PAIR UNDER REVIEW
SQL: {SQL}
Question: {QUESTION}

Judge the pair within the context of its schema:
* The SQL must be a faithful, logical answer to the question.
* The question must be answerable from the schema and make real-world sense.
* Semantically invalid operations (e.g. averaging identifiers, summing categorical codes) are illogical even when they execute.

### Respond with a single JSON object:
{"verdict": "logical" or "illogical", "reason": "one-sentence justification"}
"""

TEMPLATES["repair"] = """\
*** You fix broken SQLite SQL queries for the {DB_ID} database.

### SCHEMA
{SCHEMA}

### BROKEN SQL
{SQL}

### ENGINE ERROR
{ERROR}

Fix the query with the smallest change that makes it execute while preserving its intent. Use only tables and columns from the schema.

### Respond in the following format:
<reasoning>
What was wrong and what you changed.
</reasoning>
<answer>
The corrected SQLite SQL query.
</answer>
"""

TEMPLATES["reasoning"] = """\
*** You write step-by-step construction traces for SQL queries over the {DB_ID} database, using a divide-and-conquer strategy.

### SCHEMA
{SCHEMA}

### QUESTION
{QUESTION}

### TARGET SQL
{SQL}

Decompose the question into sub-problems, build the SQL fragment that solves each sub-problem, then combine the fragments into the final query. The final query you present must be exactly the target SQL.

### Respond in the following format:
<reasoning>
The stepwise divide-and-conquer trace.
</reasoning>
<answer>
The final SQLite SQL query (must equal the target SQL).
</answer>
"""

TEMPLATES["keywords"] = """\
*** You extract search keywords from a database question. Pull out named entities, technical terms, and content words that could match stored examples; drop stop words and filler.

### QUESTION
{QUESTION_AND_HINT}

### Respond with a single JSON object:
{"reasoning": "why these terms", "keywords": ["keyword claiming relevance", "..."]}
"""

TEMPLATES["column_filter"] = """\
### You are an excellent data scientist. You can capture the link between a user question and database elements (columns). Your objective is to analyze and understand the essence of the given question, a single database table schema, and examples, and then select the relevant columns of the given table.

### Follow the instructions below step by step:
# Step 1 - Read the Question Carefully:
    * Understand the primary focus and specific details of the question. Identify named entities, technical terms, and other key phrases to establish a clear link between the question and the table columns.
    * If a hint is given with the question, review it; it directs attention toward elements relevant to the answer. Always follow such logic explicitly.
# Step 2 - Analyze the Table Schema:
    * You are given the schema of a single table. Examine the detailed information about its columns to identify the ones pertinent to the question. Understand the meaning and purpose of each column, not just its name.
# Step 3 - Examine the Examples:
    * Review each question-SQL example to learn how the table columns are used and in which contexts.
    * Use examples to guide your decision, but **do not restrict yourself** to columns seen in examples.
# Step 4 - Select Useful Columns:
    * Consider each column one by one and decide whether it is useful and required to answer the question. Write detailed reasoning for each column.
    * If the question or hint specifies a column, include it. If it is part of a formula or computation, include it. If you are unsure, err on the side of including it.
    * If a question requires an aggregate function on a column, you **must** select that column.
    * If all columns of the table are irrelevant to the question, then return empty Python List for the selected_columns key in the response.
# Step 5 - Output Format:
    * Give your response in JSON format with two keys: "reasoning" and "selected_columns", where the value of selected_columns **must** be a Python List and the value of "reasoning" is string reasoning on each column and its usefulness.

- **IMPORTANT NOTE:** A column unused in the examples can still be necessary or useful to answer the question.
- **IMPORTANT NOTE:** Output the column names exactly as given in the Table Schema.

{TABLE_SCHEMA}

{EXAMPLES}

User Question:
{QUESTION_AND_HINT}

### Now, it is your turn.
### Respond in the JSON format as follows:
{{
    "reasoning": "Iterate over each column in the table and reason whether it is useful and necessary to answer the user question.",
    "selected_columns": ["column_1", "column_2", "column_3", ...]
}}
"""

TEMPLATES["question_to_sql"] = """\
*** You are an expert SQL generator. Your task is to generate a SQL query for the given user question, considering *only* the {DB_ID} database.

### INSTRUCTIONS:
* Understand the question:
    - Carefully read and interpret the user's natural language question.
    - Consider only the {DB_ID} database when analyzing the question.
    - Analyze the relation between the question and database items.
* Determine the required database items:
    - Determine which tables, columns, and values from the database are needed to answer the question.
    - Analyze the relations between the selected tables and columns.
* Apply logical filtering:
    - Identify the filtering conditions, aggregations, groupings, window functions, orderings, or limits needed to fulfill the intent of the question.
* Construct the SQL query:
    - Construct a valid and executable SQLite SQL query that directly answers the question using only the relevant parts of the schema.

{AUGMENTATION}

{FEW_SHOTS}

### Generate SQLite SQL query for the following question considering **only** {DB_ID} database.
*** Question ***
{QUESTION}

### Respond in the following format:
<reasoning>
Analysis of the question's purpose and the relation between database items. Steps to answer the user question and create the correct SQLite SQL query, in detail.
</reasoning>
<answer>
Generated SQLite SQL query to answer the question.
</answer>

### Now is your turn to respond in the above format:
"""
