"""Ground-truth failure attribution for retrieval-pipeline episodes.

A case is ``FalseExt`` when any gold evidence id is missing from the
retrieved set (the answer is irrelevant then), ``FalseInt`` when evidence is
sufficient but the answer is wrong, and ``True`` otherwise.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .errors import SchemaError
from .model import AttributionLabel, CaseRecord, TaskKind

REL_TOL = 1e-4

# Reference category sizes (External, Internal, Correct) per dataset split,
# for cross-checking ingested corpora.
REFERENCE_SPLIT_COUNTS: dict[tuple[str, str], tuple[int, int, int]] = {
    ("FinQA", "train"): (984, 2952, 2315),
    ("FinQA", "dev"): (211, 400, 272),
    ("FinQA", "test"): (277, 483, 387),
    ("Spider", "train"): (301, 1391, 5308),
    ("Spider", "dev"): (84, 278, 672),
}
REFERENCE_SPLIT_TOTALS: dict[tuple[str, str], int] = {
    ("FinQA", "train"): 6251,
    ("FinQA", "dev"): 883,
    ("FinQA", "test"): 1147,
    ("Spider", "train"): 7000,
    ("Spider", "dev"): 1034,
}


def evidence_covered(case: CaseRecord) -> bool:
    return case.gold_evidence_ids <= case.retrieved_ids


_NUM_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")


def parse_number(text: str) -> tuple[float, bool] | None:
    """Parse ``text`` as a number; returns ``(value, had_percent_sign)``."""
    s = text.strip().replace(",", "").replace("−", "-")
    if s.startswith("$"):
        s = s[1:]
    elif s.startswith("-$"):
        s = "-" + s[2:]
    percent = s.endswith("%")
    if percent:
        s = s[:-1].strip()
    if not _NUM_RE.match(s):
        return None
    try:
        value = float(s)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value, percent


def _normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def _numbers_match(a: tuple[float, bool], b: tuple[float, bool]) -> bool:
    # a percent-marked value may be read as a fraction or as a bare number
    def readings(x: tuple[float, bool]) -> tuple[float, ...]:
        value, percent = x
        return (value / 100.0, value) if percent else (value,)

    return any(
        u == v or math.isclose(u, v, rel_tol=REL_TOL)
        for u in readings(a)
        for v in readings(b)
    )


def answers_match(predicted: str, gold: str, task_kind: TaskKind = TaskKind.HYBRID_QA) -> bool:
    if task_kind is TaskKind.TEXT_TO_SQL:
        return _normalize_text(predicted) == _normalize_text(gold)
    p, g = parse_number(predicted), parse_number(gold)
    if p is not None and g is not None:
        return _numbers_match(p, g)
    return _normalize_text(predicted) == _normalize_text(gold)


def answer_correct(case: CaseRecord) -> bool:
    return answers_match(case.predicted_answer, case.gold_answer, case.task_kind)


def label_for(covered: bool, correct: bool) -> AttributionLabel:
    if not covered:
        return AttributionLabel.FALSE_EXT
    return AttributionLabel.TRUE if correct else AttributionLabel.FALSE_INT


@dataclass(frozen=True)
class LabeledCase:
    case: CaseRecord
    label: AttributionLabel
    evidence_covered: bool
    answer_correct: bool

    def __post_init__(self):
        if self.label is not label_for(self.evidence_covered, self.answer_correct):
            raise SchemaError(
                f"label {self.label.value} inconsistent with "
                f"covered={self.evidence_covered}, correct={self.answer_correct}"
            )

    @property
    def case_id(self) -> str:
        return self.case.case_id

    @property
    def missing_ids(self) -> list[str]:
        return sorted(self.case.gold_evidence_ids - self.case.retrieved_ids)

    def to_dict(self) -> dict:
        return {
            "case": self.case.to_dict(),
            "label": self.label.value,
            "evidence_covered": self.evidence_covered,
            "answer_correct": self.answer_correct,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledCase":
        if not isinstance(d, dict) or "case" not in d:
            raise SchemaError("labeled case needs a 'case' object")
        try:
            label = AttributionLabel(d["label"])
        except (KeyError, ValueError):
            raise SchemaError(f"invalid label {d.get('label')!r}") from None
        return cls(
            case=CaseRecord.from_dict(d["case"]),
            label=label,
            evidence_covered=bool(d["evidence_covered"]),
            answer_correct=bool(d["answer_correct"]),
        )


def assign_label(case: CaseRecord) -> LabeledCase:
    covered = evidence_covered(case)
    correct = answer_correct(case)
    return LabeledCase(case, label_for(covered, correct), covered, correct)


def label_counts(labeled: Iterable[LabeledCase]) -> dict[AttributionLabel, int]:
    counts = Counter(lc.label for lc in labeled)
    return {label: counts.get(label, 0) for label in AttributionLabel}


def check_split_counts(labeled: Iterable[LabeledCase], dataset: str, split: str) -> bool:
    """True when a labeled corpus reproduces a reference split's partition."""
    if (dataset, split) not in REFERENCE_SPLIT_COUNTS:
        known = ", ".join(f"{d}:{s}" for d, s in REFERENCE_SPLIT_COUNTS)
        raise ValueError(f"no reference split {dataset}:{split} (known: {known})")
    counts = label_counts(labeled)
    observed = (
        counts[AttributionLabel.FALSE_EXT],
        counts[AttributionLabel.FALSE_INT],
        counts[AttributionLabel.TRUE],
    )
    return (
        observed == REFERENCE_SPLIT_COUNTS[(dataset, split)]
        and sum(observed) == REFERENCE_SPLIT_TOTALS[(dataset, split)]
    )
