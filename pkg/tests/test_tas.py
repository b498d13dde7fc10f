import pytest
from hypothesis import given, settings

from aoa_harness.errors import AmbiguityError, FormatError, FormatErrorKind
from aoa_harness.model import AttributionLabel, ForcedChoice
from aoa_harness.tas import (
    ActionKind,
    TasAction,
    TasTrace,
    parse_forced_choice,
    parse_tas,
    serialize_tas,
    try_parse_tas,
)
from helpers import tas_traces

CANONICAL = """<thinking>
  <thesis> My program looked right; the table I was given must be incomplete. </thesis>
  <antithesis> Row 3 holds both years, so the data was there all along. </antithesis>
  <synthesis> I divided by the wrong year; the error is mine. </synthesis>
</thinking>
[Attribution] FalseInt
[Action] Revise(divide(subtract(240, 200), 200))"""

REVIEWER_STYLE = """<thinking>
  <thesis> The executor claims the retrieval was sufficient. </thesis>
  <antithesis> The question asks for 2019 but only 2017 and 2018 rows were retrieved. </antithesis>
  <synthesis> The missing row makes the task impossible with this context. </synthesis>
</thinking>
[Analysis] Gold rows text_2 and table_4 were never retrieved.
[Responsibility] External
[Action] Search New Query: "2019 operating revenue", "table_4"
"""


def test_canonical_example():
    t = parse_tas(CANONICAL)
    assert t.attribution is AttributionLabel.FALSE_INT
    assert t.action == TasAction(ActionKind.REVISE, "divide(subtract(240, 200), 200)")
    assert t.thesis.startswith("My program")
    assert parse_tas(serialize_tas(t)) == t


def test_responsibility_trailer_variant():
    t = parse_tas(REVIEWER_STYLE)
    assert t.attribution is AttributionLabel.FALSE_EXT
    assert t.action.kind is ActionKind.SEARCH
    assert t.action.argument == '"2019 operating revenue", "table_4"'


@pytest.mark.parametrize("word,label", [
    ("Internal", AttributionLabel.FALSE_INT),
    ("Correct", AttributionLabel.TRUE),
    ("None", AttributionLabel.TRUE),
    ("**External**", AttributionLabel.FALSE_EXT),
])
def test_responsibility_words(word, label):
    text = REVIEWER_STYLE.replace("[Responsibility] External", f"[Responsibility] {word}")
    assert parse_tas(text).attribution is label


def test_revise_colon_form_spans_lines():
    text = CANONICAL.replace("[Action] Revise(divide(subtract(240, 200), 200))",
                             "[Action] Revise Code:\nx = 240 - 200\nprint(x / 200)")
    assert parse_tas(text).action.argument == "x = 240 - 200\nprint(x / 200)"


def test_bare_confirm_and_trailing_text_flagged():
    text = CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "Confirm()\nThanks for reading.")
    t = parse_tas(text)
    assert t.action == TasAction(ActionKind.CONFIRM)
    assert t.flagged
    assert parse_tas(CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "Confirm")).action.kind \
        is ActionKind.CONFIRM


@settings(max_examples=300, deadline=None)
@given(tas_traces)
def test_round_trip(trace):
    assert parse_tas(serialize_tas(trace)) == trace


def _swap(text, a, b):
    return text.replace(a, "\0").replace(b, a).replace("\0", b)


# (name, mutated text, expected kind); all derived from CANONICAL
MUTATIONS = [
    ("drop <thinking>", CANONICAL.replace("<thinking>", ""), FormatErrorKind.MISSING_SEGMENT),
    ("drop </thinking>", CANONICAL.replace("</thinking>", ""), FormatErrorKind.MISSING_SEGMENT),
    ("drop <thesis>", CANONICAL.replace("<thesis>", ""), FormatErrorKind.MISSING_SEGMENT),
    ("drop </antithesis>", CANONICAL.replace("</antithesis>", ""), FormatErrorKind.MISSING_SEGMENT),
    ("drop synthesis block",
     CANONICAL.replace("  <synthesis> I divided by the wrong year; the error is mine. </synthesis>\n", ""),
     FormatErrorKind.MISSING_SEGMENT),
    ("empty thesis",
     CANONICAL.replace("My program looked right; the table I was given must be incomplete.", " "),
     FormatErrorKind.MISSING_SEGMENT),
    ("no attribution line", CANONICAL.replace("[Attribution] FalseInt\n", ""), FormatErrorKind.MISSING_SEGMENT),
    ("no action line",
     CANONICAL.replace("\n[Action] Revise(divide(subtract(240, 200), 200))", ""), FormatErrorKind.MISSING_SEGMENT),
    ("thesis after antithesis",
     _swap(_swap(CANONICAL, "<thesis>", "<antithesis>"), "</thesis>", "</antithesis>"),
     FormatErrorKind.SEGMENT_ORDER),
    ("synthesis first",
     CANONICAL.replace("  <synthesis> I divided by the wrong year; the error is mine. </synthesis>\n", "")
     .replace("<thinking>\n", "<thinking>\n  <synthesis> x </synthesis>\n"),
     FormatErrorKind.SEGMENT_ORDER),
    ("closing tag before opening", _swap(CANONICAL, "<thesis>", "</thesis>"), FormatErrorKind.SEGMENT_ORDER),
    ("action before attribution",
     CANONICAL.replace("[Attribution] FalseInt\n[Action] Revise(divide(subtract(240, 200), 200))",
                       "[Action] Confirm()\n[Attribution] True"),
     FormatErrorKind.SEGMENT_ORDER),
    ("attribution Maybe", CANONICAL.replace("FalseInt", "Maybe"), FormatErrorKind.UNKNOWN_ATTRIBUTION),
    ("attribution empty", CANONICAL.replace("[Attribution] FalseInt", "[Attribution]"),
     FormatErrorKind.UNKNOWN_ATTRIBUTION),
    ("responsibility Both", REVIEWER_STYLE.replace("External", "Both"), FormatErrorKind.UNKNOWN_ATTRIBUTION),
    ("action Delete", CANONICAL.replace("Revise(", "Delete("), FormatErrorKind.UNKNOWN_ACTION),
    ("action blank punctuation", CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "???"),
     FormatErrorKind.UNKNOWN_ACTION),
    ("search without query", CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "Search()"),
     FormatErrorKind.ACTION_ARITY),
    ("confirm with argument", CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "Confirm(yes)"),
     FormatErrorKind.ACTION_ARITY),
    ("unterminated revise", CANONICAL.replace("Revise(divide(subtract(240, 200), 200))", "Revise(x = 1"),
     FormatErrorKind.ACTION_ARITY),
]


@pytest.mark.parametrize("name,text,kind", MUTATIONS, ids=[m[0] for m in MUTATIONS])
def test_mutations(name, text, kind):
    with pytest.raises(FormatError) as exc:
        parse_tas(text)
    assert exc.value.kind is kind


def test_mutation_corpus_size():
    assert len(MUTATIONS) == 20


def test_try_parse_returns_none():
    assert try_parse_tas("no tags at all") is None


def test_format_error_side_tag():
    err = FormatError(FormatErrorKind.ACTION_ARITY, "x").with_side("reviewer")
    assert err.side == "reviewer" and "[reviewer]" in str(err)


def test_trace_rejects_untrimmed_segment():
    with pytest.raises(ValueError):
        TasTrace(" a", "b", "c", AttributionLabel.TRUE, TasAction(ActionKind.CONFIRM))
    with pytest.raises(ValueError):
        TasAction(ActionKind.SEARCH, "two\nlines")


@pytest.mark.parametrize("raw,choice", [
    ("External", ForcedChoice.EXT),
    ("internal.", ForcedChoice.INT),
    ("Not external at all; the final answer is Internal", ForcedChoice.INT),
    ("[Responsibility] Ext", ForcedChoice.EXT),
])
def test_forced_choice(raw, choice):
    assert parse_forced_choice(raw) is choice


def test_forced_choice_ambiguous():
    with pytest.raises(AmbiguityError):
        parse_forced_choice("I cannot decide.")
    # substrings inside other words do not count
    with pytest.raises(AmbiguityError):
        parse_forced_choice("internally externalized")
