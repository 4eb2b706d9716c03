"""Deterministic stand-in for an LLM, used by ``--mock`` runs and tests.

The responder looks at the section headings of each prompt and produces a
well-formed answer for that stage: schema JSON, an enhanced schema, SQL built
from the prompt's DDL, styled questions, chain-of-thought solutions and judge
ratings.  Every answer is a pure function of the prompt text and the sample
index, so pipeline runs over it are reproducible.  A few candidates per batch
are deliberately broken so the filters downstream have something to reject.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import random
import re
import sqlite3

from .llm_gateway import ChatRequest, MockProvider
from .schema_synth import quote_ident, sanitize_name

_FENCE = re.compile(r"```[ \t]*(\w*)[ \t]*\n(.*?)```", re.S)


def _seed(*parts) -> int:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


def _section(text: str, heading: str) -> str:
    m = re.search(rf"^## {re.escape(heading)}[^\n]*\n(.*?)(?=^## |\Z)", text, re.S | re.M)
    return m.group(1) if m else ""


def _blocks(text: str, lang: str) -> list[str]:
    return [body for tag, body in _FENCE.findall(text) if tag.lower() == lang]


def _is_number(s: str) -> bool:
    try:
        float(s.replace(",", ""))
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------- schema stage

def _schema_answer(prompt: str) -> str:
    web = _blocks(_section(prompt, "Web Table"), "csv")[-1]
    records = list(csv.reader(io.StringIO(web)))
    headers, rows = records[0], records[1:]
    k = int(re.search(r"exactly (\d+) relational tables", prompt).group(1))
    rng = random.Random(_seed("schema", web, k))

    stem = sanitize_name(headers[0])[:24]
    main = f"{stem}_records"
    used = {f"{stem}_id"}
    cols = [{"name": f"{stem}_id", "type": "INTEGER", "description": f"Unique identifier of a {stem} record",
             "examples": [1, 2]}]
    for j, h in enumerate(headers):
        name = sanitize_name(h)[:30]
        while name in used:
            name += f"_{j}"
        used.add(name)
        vals = [r[j] for r in rows[:2]]
        numeric = bool(vals) and all(_is_number(v) for v in vals)
        cols.append({"name": name, "type": "REAL" if numeric else "TEXT",
                     "description": f"The {h.strip().lower() or name} of the record",
                     "examples": [float(v.replace(",", "")) if numeric else v for v in vals]})
    tables = [{"name": main, "description": f"Records describing {headers[0].strip().lower()}",
               "columns": cols, "primary_key": [f"{stem}_id"]}]
    fks = []
    kinds = ["entries", "events", "reviews", "owners", "sources", "metrics", "notes", "regions", "budgets",
             "schedules", "audits", "targets", "contacts", "ratings", "assets", "plans", "grants", "tags", "logs"]
    labels = ["alpha", "beta", "gamma", "delta", "north", "south", "east", "west", "prime", "basic"]
    for i in range(1, k):
        name = f"{stem}_{kinds[(i - 1) % len(kinds)]}"
        if i > len(kinds):
            name += f"_{i}"
        parent = tables[rng.randrange(len(tables))]["name"] if i > 1 else main
        parent_pk = next(t for t in tables if t["name"] == parent)["primary_key"][0]
        fk_col = f"{parent}_ref"
        tables.append({
            "name": name,
            "description": f"{kinds[(i - 1) % len(kinds)].capitalize()} linked to {parent}",
            "columns": [
                {"name": "entry_id", "type": "INTEGER", "description": "Unique identifier", "examples": [1, 2]},
                {"name": fk_col, "type": "INTEGER", "description": f"Reference to {parent}", "examples": [1, 2]},
                {"name": "label", "type": "TEXT", "description": "Short label",
                 "examples": rng.sample(labels, 2)},
                {"name": "amount", "type": "REAL", "description": "Recorded amount",
                 "examples": [round(rng.uniform(1, 500), 2) for _ in range(2)]},
                {"name": "recorded_on", "type": "TEXT", "description": "Date of the record (YYYY-MM-DD)",
                 "examples": [f"2023-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}" for _ in range(2)]},
            ],
            "primary_key": ["entry_id"],
        })
        fks.append({"table": name, "column": fk_col, "ref_table": parent, "ref_column": parent_pk})
    doc = {"db_name": f"{stem}_db", "scenario": f"An organisation tracking {headers[0].strip().lower()} data",
           "tables": tables, "foreign_keys": fks}
    return "Here is the database.\n```json\n" + json.dumps(doc, indent=2, ensure_ascii=False) + "\n```"


def _enhance_answer(prompt: str) -> str:
    doc = json.loads(_blocks(_section(prompt, "Database Information"), "json")[-1])
    for t in doc["tables"]:
        names = {c["name"].lower() for c in t["columns"]}
        if "status" not in names:
            t["columns"].append({"name": "status", "type": "TEXT", "description": "Lifecycle status of the row",
                                 "examples": ["active", "archived"]})
    return "```json\n" + json.dumps(doc, indent=2, ensure_ascii=False) + "\n```"


# ---------------------------------------------------------------- SQL stage

def _load_ddl(ddl_text: str):
    conn = sqlite3.connect(":memory:")
    try:
        conn.executescript(ddl_text)
        tables = {}
        fks = []
        for (name,) in conn.execute("SELECT name FROM sqlite_master WHERE type='table' ORDER BY rowid"):
            info = conn.execute(f"PRAGMA table_info({quote_ident(name)})").fetchall()
            tables[name] = [(r[1], (r[2] or "TEXT").upper()) for r in info]
            for r in conn.execute(f"PRAGMA foreign_key_list({quote_ident(name)})"):
                fks.append((name, r[3], r[2], r[4]))
        return tables, fks
    finally:
        conn.close()


def _numeric(cols):
    return [c for c, t in cols if any(s in t for s in ("INT", "REAL", "FLOA", "DOUB", "NUM"))]


def _pick(rng: random.Random, cols: list[str], k: int) -> list[str]:
    if k <= len(cols):
        return rng.sample(cols, k)
    return [cols[i % len(cols)] for i in range(k)]


def _q(c: str, alias: str | None = None) -> str:
    return f"{alias}.{quote_ident(c)}" if alias else quote_ident(c)


def _where(rng: random.Random, table_cols, alias=None) -> str:
    nums = _numeric(table_cols)
    texts = [c for c, t in table_cols if c not in nums]
    choice = rng.randrange(4)
    if choice == 0 and nums:
        return f" WHERE {_q(rng.choice(nums), alias)} > {rng.randint(0, 3)}"
    if choice == 1 and texts:
        return f" WHERE {_q(rng.choice(texts), alias)} LIKE '%{rng.choice('aeiou')}%'"
    if choice == 2:
        return f" WHERE {_q(rng.choice(table_cols)[0], alias)} IS NOT NULL"
    return ""


def _tail(rng: random.Random, cols: list[str], alias=None) -> str:
    out = ""
    if rng.random() < 0.5:
        out += f" ORDER BY {_q(rng.choice(cols), alias)}" + rng.choice(["", " DESC"])
    if rng.random() < 0.4:
        out += f" LIMIT {rng.randint(1, 10)}"
    return out


def _sql_simple(rng, tables, fks, k):
    t = rng.choice(list(tables))
    cols = [c for c, _ in tables[t]]
    sel = _pick(rng, cols, k)
    return (f"SELECT {'DISTINCT ' if rng.random() < 0.2 else ''}{', '.join(map(_q, sel))} "
            f"FROM {quote_ident(t)}{_where(rng, tables[t])}{_tail(rng, cols)}")


def _sql_aggregate(rng, tables, fks, k):
    t = rng.choice(list(tables))
    cols = [c for c, _ in tables[t]]
    nums = _numeric(tables[t]) or cols
    aggs = ["COUNT(*)"] + [f"{f}({_q(c)})" for f in ("MAX", "MIN", "AVG", "SUM") for c in nums]
    aggs += [f"COUNT(DISTINCT {_q(c)})" for c in cols]
    if k == 1:
        return f"SELECT {rng.choice(aggs)} FROM {quote_ident(t)}{_where(rng, tables[t])}"
    group = rng.choice(cols)
    picked = rng.sample(aggs, min(k - 1, len(aggs)))
    while len(picked) < k - 1:
        picked.append("COUNT(*)")
    having = f" HAVING COUNT(*) >= {rng.randint(1, 2)}" if rng.random() < 0.3 else ""
    return (f"SELECT {_q(group)}, {', '.join(picked)} FROM {quote_ident(t)}{_where(rng, tables[t])} "
            f"GROUP BY {_q(group)}{having}{_tail(rng, [group])}")


def _sql_join(rng, tables, fks, k):
    if not fks:
        return _sql_simple(rng, tables, fks, k)
    child, col, parent, ref = rng.choice(fks)
    pool = [("c", c) for c, _ in tables[child]] + [("p", c) for c, _ in tables[parent]]
    sel = _pick(rng, list(range(len(pool))), k)
    items = [_q(pool[i][1], pool[i][0]) for i in sel]
    join = rng.choice(["JOIN", "LEFT JOIN", "INNER JOIN"])
    return (f"SELECT {', '.join(items)} FROM {quote_ident(child)} c {join} {quote_ident(parent)} p "
            f"ON c.{quote_ident(col)} = p.{quote_ident(ref)}{_where(rng, tables[child], 'c')}"
            f"{_tail(rng, [c for c, _ in tables[parent]], 'p')}")


def _sql_cte(rng, tables, fks, k):
    inner = rng.choice([_sql_simple, _sql_aggregate, _sql_join])(rng, tables, fks, k)
    inner = re.sub(r" ORDER BY .*$", "", inner)
    name = rng.choice(["base", "summary", "filtered", "ranked_source"])
    return f"WITH {name} AS ({inner}) SELECT * FROM {name}" + (f" LIMIT {rng.randint(1, 10)}" if rng.random() < 0.5 else "")


def _sql_window(rng, tables, fks, k):
    t = rng.choice(list(tables))
    cols = [c for c, _ in tables[t]]
    order = rng.choice(cols)
    fn = rng.choice(["ROW_NUMBER()", "RANK()", "DENSE_RANK()"])
    sel = list(map(_q, _pick(rng, cols, k - 1))) if k > 1 else []
    part = f"PARTITION BY {_q(rng.choice(cols))} " if rng.random() < 0.4 else ""
    return f"SELECT {', '.join(sel + [f'{fn} OVER ({part}ORDER BY {_q(order)}) AS rank_no'])} FROM {quote_ident(t)}"


def _sql_subquery(rng, tables, fks, k):
    if not fks:
        t = rng.choice(list(tables))
        cols = [c for c, _ in tables[t]]
        nums = _numeric(tables[t]) or cols
        c = rng.choice(nums)
        return (f"SELECT {', '.join(map(_q, _pick(rng, cols, k)))} FROM {quote_ident(t)} "
                f"WHERE {_q(c)} >= (SELECT AVG({_q(c)}) FROM {quote_ident(t)})")
    child, col, parent, ref = rng.choice(fks)
    cols = [c for c, _ in tables[child]]
    return (f"SELECT {', '.join(map(_q, _pick(rng, cols, k)))} FROM {quote_ident(child)} "
            f"WHERE {_q(col)} IN (SELECT {_q(ref)} FROM {quote_ident(parent)}{_where(rng, tables[parent])})")


def _sql_setop(rng, tables, fks, k):
    names = list(tables)
    a, b = rng.choice(names), rng.choice(names)
    ca, cb = [c for c, _ in tables[a]], [c for c, _ in tables[b]]
    op = rng.choice(["UNION", "UNION ALL", "INTERSECT", "EXCEPT"])
    return (f"SELECT {', '.join(map(_q, _pick(rng, ca, k)))} FROM {quote_ident(a)} {op} "
            f"SELECT {', '.join(map(_q, _pick(rng, cb, k)))} FROM {quote_ident(b)}")


_GENERATORS = {
    "Simple": [_sql_simple, _sql_aggregate],
    "Moderate": [_sql_aggregate, _sql_join, _sql_subquery],
    "Complex": [_sql_join, _sql_cte, _sql_subquery, _sql_setop],
    "Highly Complex": [_sql_cte, _sql_window, _sql_setop],
}


def _sql_answers(prompt: str, n: int) -> list[str]:
    tables, fks = _load_ddl(_section(prompt, "Database Schema"))
    k = int(re.search(r"exactly (\d+) column", _section(prompt, "Column Selection Constraint")).group(1))
    level = re.search(r"Level: (.+)", _section(prompt, "SQL Complexity")).group(1).strip()
    out = []
    for i in range(n):
        rng = random.Random(_seed("sql", prompt, i))
        roll = rng.random()
        if roll < 0.06:
            sql = f"SELECT FROM {quote_ident(rng.choice(list(tables)))} WHERE"
        elif roll < 0.1:
            sql = f"DELETE FROM {quote_ident(rng.choice(list(tables)))}"
        else:
            sql = rng.choice(_GENERATORS.get(level, _GENERATORS["Moderate"]))(rng, tables, fks, k)
        out.append(f"The query below fits the requested complexity.\n```sql\n{sql}\n```")
    return out


# ---------------------------------------------------------------- question stage

def _tables_in(sql: str) -> list[str]:
    names = re.findall(r'(?:FROM|JOIN)\s+("?[A-Za-z_][\w ]*?"?)(?:\s|$|\))', sql, re.I)
    out = []
    for n in names:
        n = n.strip('"').replace("_", " ")
        if n not in out:
            out.append(n)
    return out


_STYLE_FRAMES = {
    "Formal": "Could you provide the {what} from the {where} records?",
    "Colloquial": "Hey, can you pull up the {what} from the {where} stuff?",
    "Imperative": "List the {what} from the {where} records.",
    "Interrogative": "What are the {what} in the {where} records?",
    "Descriptive": "I am reviewing the {where} data and need the {what} it contains.",
    "Concise": "{what} from {where}?",
    "Vague": "What about the notable {where} entries and their {what}?",
    "Metaphorical": "Which {where} records shine brightest when we look at their {what}?",
    "Conversational": "",
}
_OPENERS = ["", "Please note: ", "For a report, ", "Quick one: ", "Just wondering, ", "Today, ", "Again, ", "Also, "]


def _question_answers(prompt: str, n: int) -> list[str]:
    sql = _blocks(_section(prompt, "SQL Query"), "sql")[-1].strip()
    style = re.search(r"Style: (\w+)", _section(prompt, "Desired Language Style")).group(1)
    columns = re.findall(r"^- [^.\n]+\.([^:\n]+):", _section(prompt, "SQL-related Column Information"), re.M)
    what = ", ".join(c.replace("_", " ") for c in columns[:3]) or "values"
    where = " and ".join(_tables_in(sql)) or "database"
    out = []
    for i in range(n):
        rng = random.Random(_seed("question", prompt, i))
        if i == n - 1 and n > 2:
            out.append("I am not sure what to ask here.")  # unparsable on purpose
            continue
        opener = _OPENERS[i % len(_OPENERS)]
        explanation = f"The query reads {where} and returns {what}."
        if style == "Conversational":
            body = (f"User: I need something from the {where} data.\n"
                    f"Assistant: Sure, what exactly?\nUser: {opener}the {what}, please.")
        else:
            body = opener + _STYLE_FRAMES[style].format(what=what, where=where)
        text = f"[EXPLANATION]\n{explanation}\n[QUESTION]\n{body}"
        if style in ("Vague", "Metaphorical"):
            text += f"\n[EXTERNAL KNOWLEDGE]\nThe wording refers to rows of {where} selected by the query conditions."
        if rng.random() < 0.1:
            text += "\nHope this helps."
        out.append(text)
    return out


# ---------------------------------------------------------------- CoT stage

def _cot_answers(prompt: str, n: int) -> list[str]:
    pair = _section(prompt, "Question and SQL Query Pair")
    sql = _blocks(pair, "sql")[-1].strip()
    # some prompts get a revised query: duplicate rows collapse, which counts as a correction when they exist
    if random.Random(_seed("cot-revise", prompt)).random() < 0.25:
        sql = f"SELECT DISTINCT * FROM ({sql})"
    out = []
    for i in range(n):
        rng = random.Random(_seed("cot", prompt, i))
        roll = rng.random()
        steps = ("Step 1: Identify what the question asks for.\n"
                 "Step 2: Locate the tables and columns that hold this information.\n"
                 "Step 3: Apply the needed joins, filters and aggregations.\n")
        if roll < 0.1:
            out.append(steps + "Step 4: The query follows from the steps above.")
        elif roll < 0.2:
            out.append(steps + "Step 4: Write the query.\n```sql\nSELECT missing_column FROM no_such_table\n```")
        else:
            out.append(steps + f"Step 4: Assemble the final query.\n```sql\n{sql}\n```")
    return out


# ---------------------------------------------------------------- judge and audit

def _judge_answer(prompt: str) -> str:
    names = re.findall(r"^- (\w+): ", _section(prompt, "Criteria"), re.M)
    rng = random.Random(_seed("judge", prompt))
    ratings = ["excellent", "excellent", "good", "good", "average", "poor"]
    return "\n".join(f"{name}: {rng.choice(ratings)} - assessed against the stated criterion." for name in names)


def respond(request: ChatRequest) -> list[str]:
    prompt = request.prompt
    n = request.n_samples
    if prompt.startswith("## Task: web table semantic richness"):
        return ["YES"] * n
    if prompt.startswith("## Task: SQL preference audit"):
        return ["B"] * n
    if "quality review" in prompt.split("\n", 1)[0]:
        return [_judge_answer(prompt)] * n
    if "## Column Selection Constraint" in prompt:
        return _sql_answers(prompt, n)
    if "## Desired Language Style" in prompt:
        return _question_answers(prompt, n)
    if "## Question and SQL Query Pair" in prompt:
        return _cot_answers(prompt, n)
    if "## Web Table" in prompt and "relational tables" in prompt:
        return [_schema_answer(prompt)] * n
    if "## Database Information" in prompt:
        return [_enhance_answer(prompt)] * n
    return ["I cannot help with that."] * n


def simulated_provider(**kwargs) -> MockProvider:
    return MockProvider(responder=respond, **kwargs)
