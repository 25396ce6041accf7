"""Datasets of NL/SQL pairs, database schemas, and query-split validation.

Dataset files are UTF-8 JSON-lines with keys ``id``, ``nl``, ``sql``, ``split``.
Schema descriptors are JSON documents pointing at a SQLite database file from
which sample rows are pulled.
"""

from __future__ import annotations

import json
import re
import sqlite3
from dataclasses import dataclass
from pathlib import Path

from .errors import CorpusError

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Example:
    """One NL utterance with its gold SQL and split tag."""

    id: str
    nl: str
    gold_sql: str
    split: str

    def __post_init__(self):
        if not self.id:
            raise CorpusError("example id must be non-empty")
        if not self.nl.strip():
            raise CorpusError(f"example {self.id!r}: nl is empty")
        if not self.gold_sql.strip():
            raise CorpusError(f"example {self.id!r}: gold sql is empty")
        if self.split not in SPLITS:
            raise CorpusError(f"example {self.id!r}: unknown split {self.split!r}")


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of examples with unique ids."""

    name: str
    examples: tuple[Example, ...]

    def __post_init__(self):
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise CorpusError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __iter__(self):
        return iter(self.examples)

    def __len__(self):
        return len(self.examples)

    def split(self, name: str) -> tuple[Example, ...]:
        if name not in SPLITS:
            raise CorpusError(f"unknown split {name!r}")
        return tuple(ex for ex in self.examples if ex.split == name)

    def by_id(self, example_id: str) -> Example:
        for ex in self.examples:
            if ex.id == example_id:
                return ex
        raise CorpusError(f"no example with id {example_id!r}")


@dataclass(frozen=True)
class TableDef:
    """A table: ordered columns, foreign keys, and a few stringified sample rows."""

    name: str
    columns: tuple[tuple[str, str], ...]  # (name, declared type) pairs, verbatim
    foreign_keys: tuple[tuple[str, str, str], ...] = ()  # (column, ref table, ref column)
    sample_rows: tuple[tuple[str, ...], ...] = ()

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        if len(set(names)) != len(names):
            raise CorpusError(f"table {self.name!r}: duplicate column names")
        for col, ref_table, ref_col in self.foreign_keys:
            if col not in names:
                raise CorpusError(
                    f"table {self.name!r}: foreign key on undeclared column {col!r}"
                )

    def column_names(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.columns)


@dataclass(frozen=True)
class Schema:
    """Ordered tables plus the path of the executable SQLite database."""

    tables: tuple[TableDef, ...]
    db_path: str

    def __post_init__(self):
        names = [t.name for t in self.tables]
        if len(set(names)) != len(names):
            raise CorpusError("duplicate table names in schema")
        for t in self.tables:
            for _, ref_table, _ in t.foreign_keys:
                if ref_table not in names:
                    raise CorpusError(
                        f"table {t.name!r}: foreign key references missing table {ref_table!r}"
                    )


def load_dataset(path: str | Path, name: str | None = None) -> Dataset:
    """Load a JSON-lines dataset, preserving file order and rejecting duplicate ids."""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"dataset file not found: {path}")
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: record is not an object")
            missing = [k for k in ("id", "nl", "sql", "split") if k not in record]
            if missing:
                raise CorpusError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            try:
                examples.append(
                    Example(
                        id=str(record["id"]),
                        nl=record["nl"],
                        gold_sql=record["sql"],
                        split=record["split"],
                    )
                )
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc
    try:
        return Dataset(name=name or path.stem, examples=tuple(examples))
    except CorpusError as exc:
        raise CorpusError(f"{path}: {exc}") from exc


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back to JSON-lines; inverse of load_dataset."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for ex in dataset:
            fh.write(
                json.dumps(
                    {"id": ex.id, "nl": ex.nl, "sql": ex.gold_sql, "split": ex.split},
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_schema(path: str | Path, rows_limit: int = 3) -> Schema:
    """Load a schema descriptor and pull up to `rows_limit` sample rows per table.

    The descriptor's `db_path` is resolved relative to the descriptor file.
    Sample rows come from `SELECT * FROM t LIMIT rows_limit` with values
    stringified (NULL becomes the empty string).
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"schema descriptor not found: {path}")
    if rows_limit < 0:
        raise CorpusError("rows_limit must be >= 0")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON ({exc.msg})") from exc
    if "db_path" not in doc or "tables" not in doc:
        raise CorpusError(f"{path}: descriptor needs db_path and tables")
    db_path = Path(doc["db_path"])
    if not db_path.is_absolute():
        db_path = path.parent / db_path
    if not db_path.is_file():
        raise CorpusError(f"database file not found: {db_path}")

    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    try:
        present = {
            row[0]
            for row in conn.execute("SELECT name FROM sqlite_master WHERE type='table'")
        }
        tables = []
        for tdoc in doc["tables"]:
            tname = tdoc["name"]
            if tname not in present:
                raise CorpusError(f"table {tname!r} declared but absent from database")
            columns = tuple((c["name"], c["type"]) for c in tdoc["columns"])
            fks = tuple(
                (fk["column"], fk["ref_table"], fk["ref_column"])
                for fk in tdoc.get("foreign_keys", [])
            )
            cursor = conn.execute(f'SELECT * FROM "{tname}" LIMIT {int(rows_limit)}')
            rows = tuple(
                tuple("" if v is None else str(v) for v in row) for row in cursor
            )
            tables.append(
                TableDef(name=tname, columns=columns, foreign_keys=fks, sample_rows=rows)
            )
    finally:
        conn.close()
    return Schema(tables=tuple(tables), db_path=str(db_path))


_TOKEN_RE = re.compile(
    r"""
    '(?:[^']|'')*'          # single-quoted string ('' escapes)
    | "(?:[^"]|"")*"        # double-quoted string
    | \d+(?:\.\d+)?(?:[eE][+-]?\d+)?   # numeric literal
    | [A-Za-z_][A-Za-z0-9_]*           # identifier / keyword
    | \s+                              # whitespace run
    | .                                # any other single char
    """,
    re.VERBOSE,
)


def _template_pass(sql: str) -> str:
    out = []
    for match in _TOKEN_RE.finditer(sql):
        tok = match.group(0)
        if tok[0] in "'\"":
            out.append('"?"')
        elif tok[0].isdigit():
            out.append("0")
        elif tok.isspace():
            out.append(" ")
        else:
            out.append(tok.upper())
    return "".join(out).strip()


def lf_template(sql: str) -> str:
    """Anonymize a SQL string into its lexical template.

    String literals become '"?"', numeric literals become '0', whitespace
    collapses to single spaces, everything else is uppercased. Purely lexical,
    so any input is accepted. Rewrites to a fixpoint (degenerate numeric runs
    like `0.0.0` can recombine across passes), which makes it idempotent.
    """
    if not sql.strip():
        raise CorpusError("cannot template an empty SQL string")
    text = sql
    for _ in range(10):
        rewritten = _template_pass(text)
        if rewritten == text:
            break
        text = rewritten
    return text


@dataclass(frozen=True)
class SplitViolation:
    """One template occurring in more than one split."""

    template: str
    splits: tuple[str, ...]
    example_ids: tuple[str, ...]


def validate_query_split(dataset: Dataset) -> list[SplitViolation]:
    """Report every SQL template shared across splits; empty means a valid query split."""
    for split in SPLITS:
        if not dataset.split(split):
            raise CorpusError(f"dataset {dataset.name!r}: split {split!r} is empty")
    by_template: dict[str, list[Example]] = {}
    for ex in dataset:
        by_template.setdefault(lf_template(ex.gold_sql), []).append(ex)
    violations = []
    for template, members in by_template.items():
        splits = sorted({ex.split for ex in members})
        if len(splits) > 1:
            violations.append(
                SplitViolation(
                    template=template,
                    splits=tuple(splits),
                    example_ids=tuple(ex.id for ex in members),
                )
            )
    violations.sort(key=lambda v: v.template)
    return violations
