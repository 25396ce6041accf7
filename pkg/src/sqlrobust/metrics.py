"""Execution-based correctness metrics and lexical-diversity diagnostics.

Predicted and gold SQL run against a read-only SQLite connection; results
compare as multisets unless the gold query carries a top-level ORDER BY.
Accuracy variants: standard (original test set), perturbation (a perturbed
set), and robust (share of perturbed examples still correct among those whose
originals were parsed correctly).
"""

from __future__ import annotations

import math
import re
import sqlite3
import string
import time
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .errors import ExecutionError, HarnessError, UndefinedMetricError

NUMERIC_REL_TOL = 1e-6
MTLD_THRESHOLD = 0.72


@dataclass(frozen=True)
class ExecutionResult:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


class VerdictStatus(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    PRED_EXEC_ERROR = "pred_exec_error"
    GOLD_EXEC_ERROR = "gold_exec_error"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    detail: str = ""

    @property
    def correct(self) -> bool:
        return self.status is VerdictStatus.CORRECT


@dataclass(frozen=True)
class EvalRecord:
    """One judged prediction under one condition (standard or perturbed:KIND)."""

    example_id: str
    condition: str
    predicted_sql: str
    verdict: Verdict


_WRITE_ACTIONS = {
    sqlite3.SQLITE_INSERT,
    sqlite3.SQLITE_UPDATE,
    sqlite3.SQLITE_DELETE,
    sqlite3.SQLITE_CREATE_TABLE,
    sqlite3.SQLITE_CREATE_INDEX,
    sqlite3.SQLITE_CREATE_TRIGGER,
    sqlite3.SQLITE_CREATE_VIEW,
    sqlite3.SQLITE_DROP_TABLE,
    sqlite3.SQLITE_DROP_INDEX,
    sqlite3.SQLITE_DROP_TRIGGER,
    sqlite3.SQLITE_DROP_VIEW,
    sqlite3.SQLITE_ALTER_TABLE,
    sqlite3.SQLITE_REINDEX,
    sqlite3.SQLITE_ATTACH,
    sqlite3.SQLITE_DETACH,
    sqlite3.SQLITE_PRAGMA,
}


def execute_sql(db_path: str, sql: str, timeout_s: float = 5.0) -> ExecutionResult:
    """Run one read-only statement and materialize the full result.

    Write statements are rejected by an authorizer; long-running queries are
    interrupted once `timeout_s` elapses.
    """
    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    blocked_write = []
    deadline = time.monotonic() + timeout_s
    timed_out = []

    def authorize(action, *args):
        if action in _WRITE_ACTIONS:
            blocked_write.append(action)
            return sqlite3.SQLITE_DENY
        return sqlite3.SQLITE_OK

    def check_deadline():
        if time.monotonic() > deadline:
            timed_out.append(True)
            return 1  # nonzero interrupts the VM
        return 0

    conn.set_authorizer(authorize)
    conn.set_progress_handler(check_deadline, 5_000)
    try:
        cursor = conn.execute(sql)
        rows = tuple(tuple(r) for r in cursor.fetchall())
        columns = tuple(d[0] for d in cursor.description) if cursor.description else ()
        return ExecutionResult(columns=columns, rows=rows)
    except sqlite3.Error as exc:
        message = str(exc)
        if timed_out:
            raise ExecutionError(f"query exceeded {timeout_s}s", kind="timeout") from exc
        if blocked_write or "readonly database" in message or "not authorized" in message:
            raise ExecutionError("write statements are rejected", kind="write") from exc
        kind = "syntax" if "syntax error" in message else "runtime"
        raise ExecutionError(message, kind=kind) from exc
    finally:
        conn.close()


def _canonical(value):
    if value is None:
        return None
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        return value.rstrip()
    return value


def _values_equal(a, b) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, float) and isinstance(b, float):
        return abs(a - b) <= NUMERIC_REL_TOL * max(1.0, abs(a), abs(b))
    if type(a) is not type(b):
        return False
    return a == b


def _rows_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))


def _sort_key(row: tuple):
    key = []
    for v in row:
        if v is None:
            key.append((0, ""))
        elif isinstance(v, float):
            key.append((1, v))
        elif isinstance(v, str):
            key.append((2, v))
        else:
            key.append((3, repr(v)))
    return key


def compare_results(
    gold: ExecutionResult, pred: ExecutionResult, order_sensitive: bool
) -> bool:
    """Result equality over normalized tuples; column names are ignored.

    Unordered comparison treats rows as a multiset. Numbers compare within a
    relative tolerance; strings compare exactly after trailing-whitespace
    trim; NULL equals only NULL.
    """
    rows_g = [tuple(_canonical(v) for v in row) for row in gold.rows]
    rows_p = [tuple(_canonical(v) for v in row) for row in pred.rows]
    if len(rows_g) != len(rows_p):
        return False
    if not order_sensitive:
        rows_g = sorted(rows_g, key=_sort_key)
        rows_p = sorted(rows_p, key=_sort_key)
    return all(_rows_equal(g, p) for g, p in zip(rows_g, rows_p))


_STRING_LITERAL_RE = re.compile(r"'(?:[^']|'')*'|\"(?:[^\"]|\"\")*\"")


def has_top_level_order_by(sql: str) -> bool:
    """True when ORDER BY appears outside parentheses and string literals."""
    stripped = _STRING_LITERAL_RE.sub("''", sql)
    depth = 0
    for match in re.finditer(r"[()]|\border\s+by\b", stripped, flags=re.IGNORECASE):
        tok = match.group(0)
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            return True
    return False


def judge(db_path: str, gold_sql: str, predicted_sql: str, timeout_s: float = 5.0) -> Verdict:
    """Execute both queries and compare; execution failures become verdicts.

    A failing gold query yields GOLD_EXEC_ERROR (a fixture bug, never held
    against the parser). Order sensitivity follows the gold query's top-level
    ORDER BY.
    """
    try:
        gold_result = execute_sql(db_path, gold_sql, timeout_s)
    except ExecutionError as exc:
        return Verdict(VerdictStatus.GOLD_EXEC_ERROR, detail=f"{exc.kind}: {exc}")
    try:
        pred_result = execute_sql(db_path, predicted_sql, timeout_s)
    except ExecutionError as exc:
        return Verdict(VerdictStatus.PRED_EXEC_ERROR, detail=f"{exc.kind}: {exc}")
    order_sensitive = has_top_level_order_by(gold_sql)
    if compare_results(gold_result, pred_result, order_sensitive):
        return Verdict(VerdictStatus.CORRECT)
    return Verdict(VerdictStatus.INCORRECT, detail="result sets differ")


# --- accuracy aggregation ------------------------------------------------------


def _reject_gold_failures(records: Sequence[EvalRecord]) -> None:
    """A failing gold query is a fixture bug; scoring it would corrupt tables."""
    broken = [r.example_id for r in records if r.verdict.status is VerdictStatus.GOLD_EXEC_ERROR]
    if broken:
        raise HarnessError(
            f"gold queries failed for {len(broken)} example(s) "
            f"({', '.join(broken[:5])}); fix the fixtures before scoring"
        )


def _accuracy(records: Sequence[EvalRecord], what: str) -> float:
    if not records:
        raise UndefinedMetricError(f"{what} accuracy over zero records is undefined")
    _reject_gold_failures(records)
    correct = sum(1 for r in records if r.verdict.correct)
    return correct / len(records)


def standard_accuracy(records: Sequence[EvalRecord]) -> float:
    """Fraction correct on the original test set."""
    return _accuracy(records, "standard")


def perturbation_accuracy(records: Sequence[EvalRecord]) -> float:
    """Fraction correct on one perturbed test set."""
    return _accuracy(records, "perturbation")


def robust_accuracy(
    standard_records: Sequence[EvalRecord], perturbed_records: Sequence[EvalRecord]
) -> float:
    """Correct fraction among perturbed examples whose originals were correct."""
    _reject_gold_failures(list(standard_records) + list(perturbed_records))
    standard_by_id = {r.example_id: r for r in standard_records}
    missing = [r.example_id for r in perturbed_records if r.example_id not in standard_by_id]
    if missing:
        raise UndefinedMetricError(
            f"perturbed records lack standard counterparts: {missing[:5]}"
        )
    r_eval = [
        r for r in perturbed_records if standard_by_id[r.example_id].verdict.correct
    ]
    if not r_eval:
        raise UndefinedMetricError(
            "robust accuracy undefined: no perturbed example has a correctly "
            "parsed original"
        )
    return sum(1 for r in r_eval if r.verdict.correct) / len(r_eval)


# --- lexical diversity ----------------------------------------------------------


@dataclass(frozen=True)
class DiversityScores:
    ttr: float
    yules_i: float  # math.inf when every token is unique
    mtld: float


def ttr(tokens: Sequence[str]) -> float:
    """Type-token ratio: unique tokens over total tokens."""
    if not tokens:
        raise UndefinedMetricError("ttr of an empty token stream is undefined")
    return len(set(tokens)) / len(tokens)


def yules_i(tokens: Sequence[str]) -> float:
    """Inverse repetition constant M1^2 / (M2 - M1) over the frequency spectrum.

    M1 is the number of types; M2 sums i^2 * (types occurring exactly i
    times). All-unique input makes the denominator zero and yields +inf.
    """
    if not tokens:
        raise UndefinedMetricError("yules_i of an empty token stream is undefined")
    freqs = Counter(tokens)
    spectrum = Counter(freqs.values())
    m1 = len(freqs)
    m2 = sum(i * i * v for i, v in spectrum.items())
    if m2 == m1:
        return math.inf
    return (m1 * m1) / (m2 - m1)


def _mtld_factors(tokens: Sequence[str], threshold: float) -> float:
    factors = 0.0
    types: set[str] = set()
    count = 0
    running_ttr = 1.0
    for tok in tokens:
        count += 1
        types.add(tok)
        running_ttr = len(types) / count
        if running_ttr < threshold:
            factors += 1.0
            types.clear()
            count = 0
            running_ttr = 1.0
    if count > 0:
        factors += (1.0 - running_ttr) / (1.0 - threshold)
    return factors


def mtld(tokens: Sequence[str], threshold: float = MTLD_THRESHOLD) -> float:
    """Mean length of sequential token runs keeping the running TTR above
    `threshold`, averaged over the forward and reversed passes.

    A stream that never dips below the threshold and ends with TTR 1 has zero
    factors and scores its own length.
    """
    if not tokens:
        raise UndefinedMetricError("mtld of an empty token stream is undefined")
    scores = []
    for stream in (list(tokens), list(reversed(tokens))):
        factors = _mtld_factors(stream, threshold)
        scores.append(len(stream) / factors if factors > 0 else float(len(stream)))
    return sum(scores) / 2.0


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def diversity_tokens(utterances: Iterable[str]) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace, concatenate in order."""
    tokens = []
    for utt in utterances:
        tokens.extend(utt.lower().translate(_PUNCT_TABLE).split())
    return tokens


def diversity_report(utterances: Sequence[str]) -> DiversityScores:
    """All three diversity metrics over the concatenated utterance tokens."""
    if not utterances:
        raise UndefinedMetricError("diversity of an empty utterance set is undefined")
    tokens = diversity_tokens(utterances)
    if not tokens:
        raise UndefinedMetricError("no tokens left after normalization")
    return DiversityScores(ttr=ttr(tokens), yules_i=yules_i(tokens), mtld=mtld(tokens))
