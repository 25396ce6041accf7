"""Byte-stable prompt assembly: schema serialization, demonstration blocks,
and the answer-priming tail.

Layout, in order: CREATE TABLE blocks with sample-row comments, the
instruction line, standard demonstrations, adversarial demonstrations, and a
final `-- question` comment primed with a bare ``SELECT``. Demonstrations are
`-- NL` comments followed by the SQL terminated with ``;`` so the decoding
stop tokens delimit them cleanly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .corpus import Example, Schema
from .errors import PromptBudgetError

DEFAULT_INSTRUCTION = (
    "Using valid SQLite, answer the following questions for the tables provided above."
)

ANSWER_PRIME = "SELECT"


@dataclass(frozen=True)
class PromptConfig:
    rows_limit: int = 3
    instruction: str = DEFAULT_INSTRUCTION
    max_prompt_tokens: int = 100_000

    def __post_init__(self):
        if self.rows_limit < 0:
            raise ValueError("rows_limit must be >= 0")
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")


@dataclass(frozen=True)
class DemoSet:
    """Demonstration examples: the standard pool plus adversarial rewrites."""

    standard: tuple[Example, ...] = ()
    adversarial: tuple[tuple[str, str], ...] = ()  # (perturbed nl, gold sql)

    def __post_init__(self):
        for ex in self.standard:
            if not ex.gold_sql.strip():
                raise ValueError(f"demo {ex.id}: empty gold sql")
        for nl, sql in self.adversarial:
            if not sql.strip():
                raise ValueError(f"adversarial demo {nl!r}: empty gold sql")

    def __len__(self):
        return len(self.standard) + len(self.adversarial)


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    shot_count: int
    token_estimate: int


def serialize_schema(schema: Schema, rows_limit: int) -> str:
    """Render CREATE TABLE statements plus sample-row comment blocks.

    Each table becomes a single-line CREATE TABLE with its foreign keys,
    followed by a ``/* SELECT * FROM t LIMIT X; ... */`` block holding the
    header row and up to X tab-separated data rows. Tables are separated by
    one blank line.
    """
    blocks = []
    for table in schema.tables:
        parts = [f"{name} {ctype}" for name, ctype in table.columns]
        for col, ref_table, ref_col in table.foreign_keys:
            parts.append(f"FOREIGN KEY ({col}) REFERENCES {ref_table}({ref_col})")
        lines = [
            f"CREATE TABLE {table.name} ({', '.join(parts)})",
            f"/* SELECT * FROM {table.name} LIMIT {rows_limit};",
            "\t".join(table.column_names()),
        ]
        for row in table.sample_rows[:rows_limit]:
            lines.append("\t".join(row))
        lines.append("*/")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def _one_line(text: str) -> str:
    return " ".join(text.splitlines())


def format_demo(example_nl: str, sql: str) -> str:
    """One demonstration: `-- NL` comment, then the SQL terminated with `;`."""
    if not example_nl.strip():
        raise ValueError("demo nl must be non-empty")
    if not sql.strip():
        raise ValueError("demo sql must be non-empty")
    sql = sql.strip()
    if not sql.endswith(";"):
        sql += ";"
    return f"-- {_one_line(example_nl)}\n{sql}\n"


def estimate_tokens(text: str) -> int:
    """Conservative deterministic estimate: ceil(utf-8 bytes / 3)."""
    return math.ceil(len(text.encode("utf-8")) / 3)


def assemble(
    schema_text: str,
    cfg: PromptConfig,
    demos: DemoSet,
    target_nl: str,
) -> AssembledPrompt:
    """Build the full prompt ending at the completion point.

    Standard demonstrations come first, adversarial ones after, both in the
    order given. The prompt tail is the target question comment plus a bare
    ``SELECT`` so the predicted query is ``SELECT`` + generated text.
    """
    pieces = [schema_text, "\n\n", f"-- {cfg.instruction}", "\n\n"]
    for ex in demos.standard:
        pieces.append(format_demo(ex.nl, ex.gold_sql))
    for nl, sql in demos.adversarial:
        pieces.append(format_demo(nl, sql))
    pieces.append(f"-- {_one_line(target_nl)}\n{ANSWER_PRIME}")
    text = "".join(pieces)
    estimate = estimate_tokens(text)
    if estimate > cfg.max_prompt_tokens:
        raise PromptBudgetError(estimate, cfg.max_prompt_tokens)
    return AssembledPrompt(text=text, shot_count=len(demos), token_estimate=estimate)
