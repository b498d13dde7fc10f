"""Composite dialectical-alignment reward.

``total = alpha * format + beta * attribution + gamma * answer`` with binary
components.  A rollout that does not parse as a TAS trace earns nothing: the
attribution and answer components are gated on the format component.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .labeler import answers_match, assign_label
from .model import AttributionLabel, CaseRecord, register_payload
from .tas import ActionKind, TasTrace, try_parse_tas


@dataclass(frozen=True)
class RewardWeights:
    alpha: float = 1.0
    beta: float = 2.0
    gamma: float = 4.0

    def __post_init__(self):
        ws = (self.alpha, self.beta, self.gamma)
        if any(w < 0 for w in ws):
            raise ValueError("reward weights must be non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("at least one reward weight must be positive")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


# Named weight ratios. The last three each switch one component off.
WEIGHT_PRESETS: dict[str, RewardWeights] = {
    "full": RewardWeights(1, 2, 4),
    "equal": RewardWeights(1, 1, 1),
    "attr-heavy": RewardWeights(1, 8, 1),
    "exec-heavy": RewardWeights(1, 1, 8),
    "no-attribution": RewardWeights(1, 0, 4),
    "no-answer": RewardWeights(1, 2, 0),
    "no-format": RewardWeights(0, 2, 4),
}


@register_payload
@dataclass(frozen=True)
class RewardBreakdown:
    r1_format: float
    r2_attribution: float
    r3_answer: float
    total: float
    weights: tuple[float, float, float] = (1.0, 2.0, 4.0)
    case_id: str = ""

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "r1_format": self.r1_format,
            "r2_attribution": self.r2_attribution,
            "r3_answer": self.r3_answer,
            "total": self.total,
            "weights": list(self.weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RewardBreakdown":
        return cls(
            r1_format=float(d["r1_format"]),
            r2_attribution=float(d["r2_attribution"]),
            r3_answer=float(d["r3_answer"]),
            total=float(d["total"]),
            weights=tuple(float(w) for w in d.get("weights", (1.0, 2.0, 4.0))),
            case_id=d.get("case_id", ""),
        )


def score_format(raw: str) -> float:
    return 1.0 if try_parse_tas(raw) is not None else 0.0


def score_attribution(trace: TasTrace, gold: AttributionLabel) -> float:
    return 1.0 if trace.attribution is gold else 0.0


_ANSWER_LINE_RE = re.compile(r"^[ \t]*\[(?:Final Answer|Answer)\][ \t]*(.+?)[ \t]*$", re.MULTILINE)


def extract_final_answer(raw: str, trace: TasTrace, case: CaseRecord) -> str | None:
    """Final answer carried by a parsed rollout.

    An explicit ``[Answer]`` line after ``</thinking>`` wins; otherwise a
    ``Confirm()`` action stands by the case's predicted answer.  A Search or
    Revise without an answer line yields nothing to score.
    """
    tail = raw[raw.find("</thinking>"):]
    found = _ANSWER_LINE_RE.findall(tail)
    if found:
        return found[-1]
    if trace.action.kind is ActionKind.CONFIRM:
        return case.predicted_answer
    return None


def score_answer(
    trace_action_output: str,
    case: CaseRecord,
    gold: AttributionLabel | None = None,
    query_match: bool = False,
) -> float:
    """Answer component.

    When the gold label is FalseExt the case is unsolvable as retrieved, so
    the corrective action is what counts: any non-empty Search earns credit
    (with ``query_match`` the query must also name a missing gold id).
    Text that is not a TAS trace is scored as a bare answer string.
    """
    if gold is None:
        gold = assign_label(case).label
    trace = try_parse_tas(trace_action_output)
    if gold is AttributionLabel.FALSE_EXT:
        if trace is None or trace.action.kind is not ActionKind.SEARCH:
            return 0.0
        if query_match:
            missing = case.gold_evidence_ids - case.retrieved_ids
            return 1.0 if any(m in trace.action.argument for m in missing) else 0.0
        return 1.0
    if trace is None:
        answer = trace_action_output.strip() or None
    else:
        answer = extract_final_answer(trace_action_output, trace, case)
    if answer is None:
        return 0.0
    return 1.0 if answers_match(answer, case.gold_answer, case.task_kind) else 0.0


def weighted_total(r1: float, r2: float, r3: float, w: RewardWeights = RewardWeights()) -> float:
    """Weighted sum with format gating: a zero format score zeroes the rest."""
    if not r1:
        return 0.0
    return w.alpha * r1 + w.beta * r2 + w.gamma * r3


def composite_reward(
    raw: str,
    gold: AttributionLabel,
    case: CaseRecord,
    w: RewardWeights = RewardWeights(),
    query_match: bool = False,
) -> RewardBreakdown:
    trace = try_parse_tas(raw)
    if trace is None:
        return RewardBreakdown(0.0, 0.0, 0.0, 0.0, w.as_tuple(), case.case_id)
    r1 = 1.0
    r2 = score_attribution(trace, gold)
    r3 = score_answer(raw, case, gold, query_match=query_match)
    return RewardBreakdown(r1, r2, r3, weighted_total(r1, r2, r3, w), w.as_tuple(), case.case_id)
