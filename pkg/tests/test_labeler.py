import pytest

from aoa_harness.labeler import (
    REFERENCE_SPLIT_COUNTS,
    REFERENCE_SPLIT_TOTALS,
    LabeledCase,
    answers_match,
    assign_label,
    check_split_counts,
    label_counts,
    parse_number,
)
from aoa_harness.errors import SchemaError
from aoa_harness.model import AttributionLabel, CaseRecord, EvidenceItem, TaskKind, load_cases
from helpers import FIXTURES


def case(retrieved, gold, pred="1", ans="1", kind=TaskKind.HYBRID_QA):
    return CaseRecord("q", tuple(EvidenceItem(i, i) for i in retrieved), frozenset(gold), pred, ans,
                      task_kind=kind)


def test_missing_gold_is_external_regardless_of_answer():
    assert assign_label(case(["a"], ["a", "b"], "1", "1")).label is AttributionLabel.FALSE_EXT
    assert assign_label(case(["a"], ["a", "b"], "2", "1")).label is AttributionLabel.FALSE_EXT


def test_covered_wrong_is_internal():
    assert assign_label(case(["a", "b"], ["b"], "2", "1")).label is AttributionLabel.FALSE_INT


def test_covered_right_is_true():
    lc = assign_label(case(["a", "b", "c"], ["a", "c"], "1,000", "1000"))
    assert lc.label is AttributionLabel.TRUE
    assert lc.missing_ids == []


@pytest.mark.parametrize("pred,gold,same", [
    ("15%", "0.15", True),
    ("15%", "15", True),
    ("$1,234.5", "1234.50", True),
    ("2.00001", "2", True),
    ("2.001", "2", False),
    ("-3", "3", False),
    ("Net Income", "net   income", True),
    ("yes", "no", False),
])
def test_answer_comparator(pred, gold, same):
    assert answers_match(pred, gold) is same


def test_sql_uses_denotation_string():
    assert answers_match("[(1, 'A')]", "[(1,  'a')]", TaskKind.TEXT_TO_SQL)
    assert not answers_match("1", "1.0", TaskKind.TEXT_TO_SQL)


def test_parse_number():
    assert parse_number("12%") == (12.0, True)
    assert parse_number("-$4") == (-4.0, False)
    assert parse_number("about 4") is None
    assert parse_number("inf") is None


def test_labeled_case_consistency_checked():
    c = case(["a"], ["a"])
    with pytest.raises(SchemaError):
        LabeledCase(c, AttributionLabel.TRUE, True, False)


def test_fixture_labels():
    labeled = [assign_label(c) for c in load_cases(FIXTURES / "cases.jsonl")]
    counts = label_counts(labeled)
    assert counts == {AttributionLabel.FALSE_EXT: 3, AttributionLabel.FALSE_INT: 4, AttributionLabel.TRUE: 5}


def test_reference_split_sums():
    for key, parts in REFERENCE_SPLIT_COUNTS.items():
        assert sum(parts) == REFERENCE_SPLIT_TOTALS[key]
    assert REFERENCE_SPLIT_COUNTS[("FinQA", "train")] == (984, 2952, 2315)


def test_check_split_counts_on_synthetic_split():
    ext, int_, true = REFERENCE_SPLIT_COUNTS[("FinQA", "dev")]
    corpus = ([assign_label(case(["a"], ["b"]))] * ext
              + [assign_label(case(["a"], ["a"], "1", "2"))] * int_
              + [assign_label(case(["a"], ["a"]))] * true)
    assert check_split_counts(corpus, "FinQA", "dev")
    assert not check_split_counts(corpus[1:], "FinQA", "dev")
