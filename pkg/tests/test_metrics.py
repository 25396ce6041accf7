from __future__ import annotations

import math
import random
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from sqlrobust.errors import ExecutionError, UndefinedMetricError
from sqlrobust.metrics import (
    EvalRecord,
    ExecutionResult,
    Verdict,
    VerdictStatus,
    compare_results,
    diversity_report,
    execute_sql,
    has_top_level_order_by,
    judge,
    mtld,
    perturbation_accuracy,
    robust_accuracy,
    standard_accuracy,
    ttr,
    yules_i,
)

C = Verdict(VerdictStatus.CORRECT)
I = Verdict(VerdictStatus.INCORRECT)


def rec(example_id, verdict, condition="standard"):
    return EvalRecord(example_id, condition, "SELECT 1", verdict)


# --- independent oracles ----------------------------------------------------------


def oracle_robust_accuracy(standard, perturbed):
    """Straight-line restatement: keep perturbed rows whose original was
    parsed correctly, then score that subset."""
    ok_originals = set()
    for r in standard:
        if r.verdict.status == VerdictStatus.CORRECT:
            ok_originals.add(r.example_id)
    subset = [r for r in perturbed if r.example_id in ok_originals]
    if len(subset) == 0:
        return None
    hits = len([r for r in subset if r.verdict.status == VerdictStatus.CORRECT])
    return hits / len(subset)


def oracle_yules_i(tokens):
    counts = Counter(tokens)
    m1 = float(len(counts))
    m2 = 0.0
    for freq in counts.values():
        m2 += freq * freq
    if m2 == m1:
        return math.inf
    return m1 * m1 / (m2 - m1)


def oracle_mtld(tokens, threshold=0.72):
    def one_direction(seq):
        factor_count = 0.0
        start = 0
        seen = []
        for i, tok in enumerate(seq):
            seen.append(tok)
            if len(set(seen)) / len(seen) < threshold:
                factor_count += 1
                seen = []
        if seen:
            remainder_ttr = len(set(seen)) / len(seen)
            factor_count += (1 - remainder_ttr) / (1 - threshold)
        if factor_count == 0:
            return float(len(seq))
        return len(seq) / factor_count

    fwd = one_direction(list(tokens))
    bwd = one_direction(list(reversed(tokens)))
    return (fwd + bwd) / 2


# --- execution -------------------------------------------------------------------


class TestExecuteSql:
    def test_constant_query(self, geo_db):
        result = execute_sql(geo_db, "SELECT 1")
        assert result.rows == ((1,),)

    def test_write_rejected(self, geo_db):
        with pytest.raises(ExecutionError) as excinfo:
            execute_sql(geo_db, "DELETE FROM city")
        assert excinfo.value.kind == "write"

    def test_drop_rejected(self, geo_db):
        with pytest.raises(ExecutionError) as excinfo:
            execute_sql(geo_db, "DROP TABLE city")
        assert excinfo.value.kind == "write"

    def test_syntax_error(self, geo_db):
        with pytest.raises(ExecutionError) as excinfo:
            execute_sql(geo_db, "SELEKT 1")
        assert excinfo.value.kind == "syntax"

    def test_runtime_error(self, geo_db):
        with pytest.raises(ExecutionError) as excinfo:
            execute_sql(geo_db, "SELECT nope FROM state")
        assert excinfo.value.kind == "runtime"

    def test_timeout_on_runaway_recursion(self, geo_db):
        sql = (
            "WITH RECURSIVE r(n) AS (SELECT 1 UNION ALL SELECT n+1 FROM r) "
            "SELECT COUNT(*) FROM r"
        )
        with pytest.raises(ExecutionError) as excinfo:
            execute_sql(geo_db, sql, timeout_s=0.2)
        assert excinfo.value.kind == "timeout"

    def test_database_not_mutated_by_rejected_write(self, geo_db):
        before = execute_sql(geo_db, "SELECT COUNT(*) FROM city").rows
        with pytest.raises(ExecutionError):
            execute_sql(geo_db, "DELETE FROM city")
        assert execute_sql(geo_db, "SELECT COUNT(*) FROM city").rows == before


class TestCompareResults:
    def _res(self, rows, columns=("a",)):
        return ExecutionResult(columns=columns, rows=tuple(tuple(r) for r in rows))

    def test_identical(self):
        r = self._res([(1,), (2,)])
        assert compare_results(r, r, order_sensitive=True)

    def test_multiset_ignores_order(self):
        a = self._res([(1,), (2,)])
        b = self._res([(2,), (1,)])
        assert compare_results(a, b, order_sensitive=False)
        assert not compare_results(a, b, order_sensitive=True)

    def test_multiset_counts_duplicates(self):
        a = self._res([(1,), (1,), (2,)])
        b = self._res([(1,), (2,), (2,)])
        assert not compare_results(a, b, order_sensitive=False)

    def test_numeric_normalization(self):
        a = self._res([(150000,)])
        b = self._res([(150000.0,)])
        assert compare_results(a, b, order_sensitive=False)

    def test_numeric_tolerance(self):
        a = self._res([(1.0,)])
        assert compare_results(a, self._res([(1.0 + 5e-7,)]), order_sensitive=False)
        assert not compare_results(a, self._res([(1.001,)]), order_sensitive=False)

    def test_column_names_ignored(self):
        a = ExecutionResult(columns=("x",), rows=((1,),))
        b = ExecutionResult(columns=("y",), rows=((1,),))
        assert compare_results(a, b, order_sensitive=False)

    def test_null_only_equals_null(self):
        assert compare_results(
            self._res([(None,)]), self._res([(None,)]), order_sensitive=False
        )
        assert not compare_results(
            self._res([(None,)]), self._res([(0.0,)]), order_sensitive=False
        )

    def test_trailing_whitespace_trimmed(self):
        assert compare_results(
            self._res([("abc ",)]), self._res([("abc",)]), order_sensitive=False
        )

    def test_row_count_mismatch(self):
        assert not compare_results(
            self._res([(1,)]), self._res([(1,), (1,)]), order_sensitive=False
        )

    @given(
        st.lists(
            st.tuples(st.integers(-3, 3), st.sampled_from(["x", "y"])),
            max_size=6,
        ),
        st.randoms(),
    )
    def test_unordered_comparison_invariant_under_permutation(self, rows, rnd):
        shuffled = list(rows)
        rnd.shuffle(shuffled)
        a = self._res(rows, columns=("a", "b"))
        b = self._res(shuffled, columns=("a", "b"))
        assert compare_results(a, b, order_sensitive=False)
        assert compare_results(b, a, order_sensitive=False)


class TestJudge:
    def test_gold_equals_pred(self, geo_db):
        sql = "SELECT name FROM state WHERE population > 5000000"
        assert judge(geo_db, sql, sql).status == VerdictStatus.CORRECT

    def test_equivalent_formulation(self, geo_db):
        gold = "SELECT name FROM city WHERE state_name = 'texas'"
        pred = "SELECT city.name FROM city WHERE city.state_name = 'texas'"
        assert judge(geo_db, gold, pred).status == VerdictStatus.CORRECT

    def test_pred_syntax_error_is_pred_exec_error(self, geo_db):
        verdict = judge(geo_db, "SELECT 1", "SELEC 1")
        assert verdict.status == VerdictStatus.PRED_EXEC_ERROR

    def test_gold_error_is_fixture_bug(self, geo_db):
        verdict = judge(geo_db, "SELECT nope FROM state", "SELECT 1")
        assert verdict.status == VerdictStatus.GOLD_EXEC_ERROR

    def test_order_by_gold_makes_comparison_ordered(self, geo_db):
        gold = "SELECT name FROM state ORDER BY population"
        pred = "SELECT name FROM state ORDER BY population DESC"
        assert judge(geo_db, gold, pred).status == VerdictStatus.INCORRECT

    def test_unordered_gold_accepts_reordered_pred(self, geo_db):
        gold = "SELECT name FROM state"
        pred = "SELECT name FROM state ORDER BY name DESC"
        assert judge(geo_db, gold, pred).status == VerdictStatus.CORRECT


class TestOrderByDetection:
    @pytest.mark.parametrize(
        "sql,expected",
        [
            ("SELECT a FROM t ORDER BY a", True),
            ("SELECT a FROM t order   by a", True),
            ("SELECT a FROM t", False),
            ("SELECT a FROM (SELECT b FROM u ORDER BY b) x", False),
            ("SELECT a FROM t WHERE name = 'order by'", False),
            ("SELECT a FROM (SELECT b FROM u ORDER BY b) x ORDER BY a", True),
        ],
    )
    def test_cases(self, sql, expected):
        assert has_top_level_order_by(sql) is expected


class TestAccuracies:
    def test_standard_ratio(self):
        records = [rec("a", C), rec("b", C), rec("c", C), rec("d", I)]
        assert standard_accuracy(records) == 0.75

    def test_all_correct(self):
        assert standard_accuracy([rec("a", C)]) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(UndefinedMetricError):
            standard_accuracy([])

    def test_perturbation_equals_standard_on_same_records(self):
        records = [rec("a", C), rec("b", I)]
        assert perturbation_accuracy(records) == standard_accuracy(records)

    def test_pred_exec_error_counts_incorrect(self):
        records = [rec("a", C), rec("b", Verdict(VerdictStatus.PRED_EXEC_ERROR))]
        assert standard_accuracy(records) == 0.5

    def test_gold_exec_error_aborts_scoring(self):
        from sqlrobust.errors import HarnessError

        records = [rec("a", C), rec("b", Verdict(VerdictStatus.GOLD_EXEC_ERROR, "boom"))]
        with pytest.raises(HarnessError, match="fixtures"):
            standard_accuracy(records)
        with pytest.raises(HarnessError, match="fixtures"):
            robust_accuracy([rec("a", C)], [rec("a", Verdict(VerdictStatus.GOLD_EXEC_ERROR))])

    def test_worked_example(self):
        standard = [rec("a", C), rec("b", C), rec("c", I), rec("d", C)]
        perturbed = [rec("a", C), rec("b", I), rec("c", I), rec("d", C)]
        assert robust_accuracy(standard, perturbed) == pytest.approx(2 / 3)

    def test_perfect_parser(self):
        standard = [rec(i, C) for i in "abcd"]
        perturbed = [rec(i, C) for i in "abcd"]
        assert robust_accuracy(standard, perturbed) == 1.0

    def test_empty_r_eval_is_undefined(self):
        standard = [rec("a", I)]
        perturbed = [rec("a", C)]
        with pytest.raises(UndefinedMetricError):
            robust_accuracy(standard, perturbed)

    def test_matches_brute_force_oracle_on_random_vectors(self):
        rnd = random.Random(20240917)
        for _ in range(1000):
            n = rnd.randint(1, 12)
            ids = [f"e{i}" for i in range(n)]
            standard = [rec(i, C if rnd.random() < 0.5 else I) for i in ids]
            perturbed = [rec(i, C if rnd.random() < 0.5 else I) for i in ids]
            expected = oracle_robust_accuracy(standard, perturbed)
            if expected is None:
                with pytest.raises(UndefinedMetricError):
                    robust_accuracy(standard, perturbed)
            else:
                assert robust_accuracy(standard, perturbed) == expected

    def test_incorrect_originals_never_influence_result(self):
        standard = [rec("a", C), rec("b", I)]
        base = robust_accuracy(standard, [rec("a", C), rec("b", I)])
        flipped = robust_accuracy(standard, [rec("a", C), rec("b", C)])
        assert base == flipped

    def test_all_standard_correct_collapses_to_perturbation_accuracy(self):
        rnd = random.Random(7)
        ids = [f"e{i}" for i in range(9)]
        standard = [rec(i, C) for i in ids]
        perturbed = [rec(i, C if rnd.random() < 0.5 else I) for i in ids]
        assert robust_accuracy(standard, perturbed) == perturbation_accuracy(perturbed)


class TestDiversity:
    def test_ttr_direct_count(self):
        assert ttr(["a", "a", "b"]) == pytest.approx(2 / 3)

    def test_ttr_all_distinct(self):
        assert ttr(["a", "b", "c"]) == 1.0

    def test_ttr_duplicate_strictly_decreases(self):
        tokens = ["a", "b", "c"]
        assert ttr(tokens + ["a"]) < ttr(tokens)

    def test_yules_worked_examples(self):
        # hand-derived: [a,a,b,b] -> M1=2, M2=8, I=4/6; [a,a,a] -> M1=1, M2=9, I=1/8
        assert yules_i(["a", "a", "b", "b"]) == pytest.approx(2 / 3)
        assert yules_i(["a", "a", "a"]) == pytest.approx(1 / 8)

    def test_yules_all_unique_is_infinite(self):
        assert yules_i(["a", "b", "c"]) == math.inf

    @given(st.lists(st.sampled_from("abcdef"), min_size=1, max_size=40))
    def test_yules_matches_frequency_spectrum_oracle(self, tokens):
        assert yules_i(tokens) == pytest.approx(oracle_yules_i(tokens))

    def test_mtld_repeating_token_matches_oracle(self):
        tokens = ["a"] * 100
        assert mtld(tokens) == pytest.approx(oracle_mtld(tokens), abs=1e-9)
        assert mtld(tokens) < 3

    def test_mtld_matches_oracle_on_random_streams(self):
        rnd = random.Random(991)
        vocab = [f"w{i}" for i in range(12)]
        for _ in range(100):
            tokens = [rnd.choice(vocab) for _ in range(rnd.randint(1, 120))]
            assert mtld(tokens) == pytest.approx(oracle_mtld(tokens), abs=1e-9)

    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=60))
    @settings(max_examples=200)
    def test_mtld_reversal_symmetric(self, tokens):
        assert mtld(tokens) == pytest.approx(mtld(list(reversed(tokens))), abs=1e-12)

    def test_mtld_never_dipping_equals_length(self):
        assert mtld(["a", "b", "c", "d"]) == 4.0

    def test_report_single_utterance(self):
        scores = diversity_report(["List all rivers"])
        assert scores.ttr == 1.0

    def test_report_duplication_lowers_ttr(self):
        once = diversity_report(["list the rivers in texas"])
        twice = diversity_report(["list the rivers in texas"] * 2)
        assert twice.ttr < once.ttr

    def test_report_composes_with_individual_metrics(self):
        utterances = ["what rivers run through texas", "what cities are in texas"]
        from sqlrobust.metrics import diversity_tokens

        tokens = diversity_tokens(utterances)
        scores = diversity_report(utterances)
        assert scores.ttr == ttr(tokens)
        assert scores.yules_i == yules_i(tokens)
        assert scores.mtld == mtld(tokens)

    def test_punctuation_stripped_and_lowercased(self):
        from sqlrobust.metrics import diversity_tokens

        assert diversity_tokens(["What's the Plan?"]) == ["whats", "the", "plan"]

    def test_empty_rejected(self):
        with pytest.raises(UndefinedMetricError):
            diversity_report([])
