"""Regenerate the static fixture files in this directory.

    python tests/fixtures/build_fixtures.py
"""

from __future__ import annotations

import json
from pathlib import Path

from aoa_harness.model import (
    CaseRecord,
    Domain,
    EvidenceItem,
    InteractionTrace,
    Pairing,
    ResultEnvelope,
    RunHeader,
    write_jsonl,
)
from aoa_harness.probe import outcomes_from_counts

HERE = Path(__file__).parent
STAMP = "2025-01-01T00:00:00+00:00"

TAS_EXT = """<thinking>
  <thesis> The context never shows the figure I needed, so the retrieval let me down. </thesis>
  <antithesis> I should confirm the gap is real rather than an excuse. </antithesis>
  <synthesis> The required row is absent from every retrieved item. </synthesis>
</thinking>
[Attribution] FalseExt
[Action] Search(revenue table for the missing year)"""

TAS_INT = """<thinking>
  <thesis> The data looked thin, so my first instinct is to blame it. </thesis>
  <antithesis> Every number the question needs is present in the context. </antithesis>
  <synthesis> The program subtracted in the wrong order; the fault is in the reasoning. </synthesis>
</thinking>
[Attribution] FalseInt
[Action] Revise(subtract(120, 100))"""

TAS_TRUE = """<thinking>
  <thesis> I worry the context might be incomplete. </thesis>
  <antithesis> The needed figures are all present and the arithmetic checks out. </antithesis>
  <synthesis> The answer is supported by the evidence. </synthesis>
</thinking>
[Attribution] True
[Action] Confirm()"""


def traces() -> list[InteractionTrace]:
    out = []
    for d_i, domain in enumerate(Domain):
        for k in range(10):
            i = d_i * 10 + k
            candid = "candid " if i % 3 == 0 else ""
            lenient = "lenient " if i % 7 == 0 else ""
            out.append(InteractionTrace(
                trace_id=f"t{i:03d}",
                domain=domain,
                pairing=Pairing.HUMAN_AGENT if i % 2 == 0 else Pairing.AGENT_AGENT,
                scenario_summary=f"A {domain.value.lower()} request went wrong (case {i}).",
                shared_interaction_history=(
                    f"User: Please handle task {i} in {domain.value}.\n"
                    f"Assistant: Done, I followed the instructions as I understood them.\n"
                    f"User: This is not what I needed."
                ),
                system_prompt_actor=f"You are the {candid}assistant who handled this {domain.value} request.",
                system_prompt_observer=f"You are a {lenient}outside reviewer reading a {domain.value} conversation.",
                neutral_task_question="Who is primarily responsible for the failure in this interaction?",
            ))
    return out


def expected_choice(system_prompt: str) -> str:
    """Mirror of the probe rules in scripted_rules.json, used to hand-count expected categories."""
    if "lenient" in system_prompt:
        return "Ext"
    if "outside reviewer" in system_prompt or "candid" in system_prompt:
        return "Int"
    return "Ext"


def cases() -> list[CaseRecord]:
    ev = [EvidenceItem(f"text_{k}", f"Revenue in year {2018 + k} was {100 + 10 * k} million.") for k in range(5)]
    rows = [
        # (retrieved idx, gold ids, predicted, gold)
        ([0, 1, 2], {"text_0", "text_2"}, "20", "20"),
        ([0, 1], {"text_0", "text_3"}, "30", "30"),
        ([1, 2, 3], {"text_2"}, "15%", "0.15"),
        ([0, 2], {"text_0", "text_2"}, "25", "20"),
        ([3], {"text_4"}, "n/a", "40"),
        ([0, 1, 2, 3, 4], {"text_1", "text_4"}, "$1,030", "1030"),
        ([2, 4], {"text_2", "text_4"}, "-20", "20"),
        ([1], {"text_1", "text_2"}, "10", "10"),
        ([0, 4], {"text_4"}, "the net income", "net income rose"),
        ([2, 3], {"text_3"}, "30", "30.0"),
        ([0], {"text_0"}, "1.5", "1.5001"),
        ([1, 3], {"text_1", "text_3"}, "2", "3"),
    ]
    out = []
    for n, (idx, gold, pred, ans) in enumerate(rows):
        out.append(CaseRecord(
            question=f"What is the change in revenue for case {n}?",
            retrieved_evidence=tuple(ev[i] for i in idx),
            gold_evidence_ids=frozenset(gold),
            predicted_answer=pred,
            gold_answer=ans,
            generated_program="subtract(120, 100)",
            case_id=f"c{n:02d}",
        ))
    return out


def rules() -> dict:
    return {
        "rules": [
            {"match": "[Responsibility] External", "field": "system", "reply": TAS_EXT},
            {"match": "[Responsibility] Internal", "field": "system", "reply": TAS_INT},
            {"match": "[Responsibility] Correct", "field": "system", "reply": TAS_TRUE},
            {"match": "You are the Executor agent", "field": "system", "reply": TAS_EXT},
            {"match": "You are a Reviewer agent", "field": "system", "reply": TAS_INT},
            {"match": "lenient", "field": "system", "reply": "On balance I would say External."},
            {"match": "outside reviewer", "field": "system", "reply": "Internal"},
            {"match": "candid", "field": "system", "reply": "Honestly: Internal."},
        ],
        "default": "External",
    }


def main() -> None:
    from aoa_harness.labeler import assign_label

    write_jsonl(HERE / "traces_100.jsonl", (t.to_dict() for t in traces()))
    cs = cases()
    write_jsonl(HERE / "cases.jsonl", (c.to_dict() for c in cs))
    labeled = [assign_label(c) for c in cs]
    write_jsonl(HERE / "labeled_cases.jsonl", (lc.to_dict() for lc in labeled))
    good = {"FalseExt": TAS_EXT, "FalseInt": TAS_INT, "True": TAS_TRUE}
    rollouts = []
    for lc in labeled:
        rollouts.append({"case_id": lc.case_id, "text": good[lc.label.value]})
        rollouts.append({"case_id": lc.case_id, "text": "I think the answer is 20."})
    write_jsonl(HERE / "rollouts.jsonl", rollouts)
    (HERE / "scripted_rules.json").write_text(json.dumps(rules(), indent=2) + "\n", encoding="utf-8")

    header = RunHeader("probe", {"model": "Qwen3-4B"}, "fixture")
    outs = outcomes_from_counts(29, 4, 51, 16, model="Qwen3-4B", pairing=Pairing.HUMAN_AGENT.value)
    envs = [ResultEnvelope(header, "fixture", created_at=STAMP, config_hash="fixture")]
    envs += [ResultEnvelope(o, "fixture", created_at=STAMP, config_hash="fixture") for o in outs]
    write_jsonl(HERE / "qwen_probe_counts.jsonl", (e.to_dict() for e in envs))


if __name__ == "__main__":
    main()
