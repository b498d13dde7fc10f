"""Teacher-driven data synthesis.

Two products:

* ambiguous-failure scenarios, one teacher call per scenario, validated
  against the trace schema and the generator's naturalness rules;
* dual-role TAS trajectories for labeled retrieval cases: a defensive
  executor and a critical reviewer analyse the same case and are kept only
  when both reach the gold attribution.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

from .client import ChatClient, ChatRequest
from .errors import FormatError, GenerationError, SchemaError
from .labeler import LabeledCase
from .model import (
    AttributionLabel,
    Domain,
    InteractionTrace,
    Pairing,
    register_payload,
    utc_now,
)
from .probe import render_evidence
from .prompts import fill, load_prompt, prompt_version
from .tas import TasTrace, parse_tas, serialize_tas

log = logging.getLogger(__name__)

SCENARIO_FIELDS = (
    "domain",
    "scenario_summary",
    "shared_interaction_history",
    "system_prompt_actor",
    "system_prompt_observer",
    "neutral_task_question",
)
META_MARKERS = ("you failed", "i did what you asked")
DEFAULT_BUDGET = 3

_GENERATOR = {
    Pairing.HUMAN_AGENT: "afb_generator_human_agent",
    Pairing.AGENT_AGENT: "afb_generator_agent_agent",
}
_TAS_TEMPLATES = {
    AttributionLabel.FALSE_EXT: ("executor_type1_external", "reviewer_type1_external"),
    AttributionLabel.FALSE_INT: ("executor_type2_internal", "reviewer_type2_internal"),
    AttributionLabel.TRUE: ("executor_type3_correct", "reviewer_type3_correct"),
}


@lru_cache(maxsize=None)
def domain_instructions() -> dict[Domain, str]:
    raw = resources.files(__package__).joinpath("prompts/domain_instructions.json").read_text("utf-8")
    return {Domain(k): v for k, v in json.loads(raw).items()}


@register_payload
@dataclass(frozen=True)
class ScenarioRecord:
    trace_id: str
    domain: Domain
    pairing: Pairing
    scenario_summary: str
    shared_interaction_history: str
    system_prompt_actor: str
    system_prompt_observer: str
    neutral_task_question: str
    teacher_model: str = ""
    created_at: str = ""
    prompt_version: str = ""

    def to_trace(self) -> InteractionTrace:
        return InteractionTrace(
            trace_id=self.trace_id,
            domain=self.domain,
            pairing=self.pairing,
            scenario_summary=self.scenario_summary,
            shared_interaction_history=self.shared_interaction_history,
            system_prompt_actor=self.system_prompt_actor,
            system_prompt_observer=self.system_prompt_observer,
            neutral_task_question=self.neutral_task_question,
        )

    def to_dict(self) -> dict:
        d = self.to_trace().to_dict()
        d.update(teacher_model=self.teacher_model, created_at=self.created_at,
                 prompt_version=self.prompt_version)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioRecord":
        t = InteractionTrace.from_dict(d)
        return cls(
            trace_id=t.trace_id,
            domain=t.domain,
            pairing=t.pairing,
            scenario_summary=t.scenario_summary,
            shared_interaction_history=t.shared_interaction_history,
            system_prompt_actor=t.system_prompt_actor,
            system_prompt_observer=t.system_prompt_observer,
            neutral_task_question=t.neutral_task_question,
            teacher_model=d.get("teacher_model", ""),
            created_at=d.get("created_at", ""),
            prompt_version=d.get("prompt_version", ""),
        )


def extract_json_object(reply: str) -> dict:
    """Pull the JSON object out of a teacher reply (code fences tolerated)."""
    text = re.sub(r"```(?:json)?", "", reply)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        raise SchemaError("reply contains no JSON object")
    try:
        obj = json.loads(text[start:end + 1])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise SchemaError("reply JSON is not an object")
    return obj


def naturalness_violations(history: str) -> list[str]:
    low = history.lower()
    return [m for m in META_MARKERS if m in low]


def validate_scenario(obj: dict, domain: Domain) -> None:
    for key in SCENARIO_FIELDS:
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
        if not isinstance(obj[key], str) or not obj[key].strip():
            raise SchemaError(f"field {key!r} must be a non-empty string")
    if Domain.parse(obj["domain"]) is not domain:
        raise SchemaError(f"domain {obj['domain']!r} does not match requested {domain.value!r}")
    if obj["system_prompt_actor"] == obj["system_prompt_observer"]:
        raise SchemaError("actor and observer prompts are identical")
    bad = naturalness_violations(obj["shared_interaction_history"])
    if bad:
        raise SchemaError(f"meta-commentary in history: {', '.join(bad)}")


def _trace_id(pairing: Pairing, domain: Domain, history: str) -> str:
    slug = re.sub(r"[^a-z]+", "-", domain.value.lower()).strip("-")
    digest = hashlib.sha1(history.encode("utf-8")).hexdigest()[:10]
    return f"{'ha' if pairing is Pairing.HUMAN_AGENT else 'aa'}-{slug}-{digest}"


def generate_scenario(
    domain: Domain | str,
    pairing: Pairing | str,
    client: ChatClient,
    model: str = "default",
    budget: int = DEFAULT_BUDGET,
    temperature: float = 0.7,
    seed: int | None = None,
) -> ScenarioRecord:
    if not isinstance(domain, Domain):
        domain = Domain.parse(domain)
    pairing = Pairing(pairing)
    name = _GENERATOR[pairing]
    system = fill(load_prompt(name), DOMAIN_NAME=domain.value,
                  DOMAIN_INSTRUCTIONS=domain_instructions()[domain])
    req = ChatRequest(model, system, (("user", "Generate 1 scenario now."),), temperature, 2048, seed)
    reasons = []
    for attempt in range(1, budget + 1):
        reply = client.complete(req).text
        try:
            obj = extract_json_object(reply)
            validate_scenario(obj, domain)
        except SchemaError as exc:
            log.info("scenario %s/%s rejected (attempt %d): %s", domain.value, pairing.value, attempt, exc)
            reasons.append(str(exc))
            continue
        return ScenarioRecord(
            trace_id=_trace_id(pairing, domain, obj["shared_interaction_history"]),
            domain=domain,
            pairing=pairing,
            scenario_summary=obj["scenario_summary"],
            shared_interaction_history=obj["shared_interaction_history"],
            system_prompt_actor=obj["system_prompt_actor"],
            system_prompt_observer=obj["system_prompt_observer"],
            neutral_task_question=obj["neutral_task_question"],
            teacher_model=model,
            created_at=utc_now(),
            prompt_version=prompt_version(name),
        )
    raise GenerationError(f"{domain.value}/{pairing.value}: budget of {budget} exhausted", reasons)


def generate_corpus(
    domains: Iterable[Domain],
    per_domain: int,
    pairings: Iterable[Pairing],
    client: ChatClient,
    model: str = "default",
    budget: int = DEFAULT_BUDGET,
) -> list[ScenarioRecord]:
    """Exactly ``per_domain`` scenarios for every (pairing, domain) cell."""
    out = []
    for pairing in pairings:
        for domain in domains:
            for _ in range(per_domain):
                out.append(generate_scenario(domain, pairing, client, model, budget))
    return out


# --------------------------------------------------------------------------
# dual-role TAS trajectories


@register_payload
@dataclass(frozen=True)
class TasPair:
    case_id: str
    actor_trajectory: TasTrace
    reviewer_trajectory: TasTrace
    gold: AttributionLabel
    converged: bool
    actor_prompt: str = field(default="", compare=False)
    reviewer_prompt: str = field(default="", compare=False)

    def __post_init__(self):
        agree = self.actor_trajectory.attribution is self.reviewer_trajectory.attribution
        if self.converged != agree:
            raise ValueError("converged must equal actor/reviewer attribution agreement")

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "gold": self.gold.value,
            "converged": self.converged,
            "actor_trajectory": self.actor_trajectory.to_dict(),
            "reviewer_trajectory": self.reviewer_trajectory.to_dict(),
            "actor_prompt": self.actor_prompt,
            "reviewer_prompt": self.reviewer_prompt,
            "actor_target": serialize_tas(self.actor_trajectory),
            "reviewer_target": serialize_tas(self.reviewer_trajectory),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TasPair":
        return cls(
            case_id=d["case_id"],
            actor_trajectory=TasTrace.from_dict(d["actor_trajectory"]),
            reviewer_trajectory=TasTrace.from_dict(d["reviewer_trajectory"]),
            gold=AttributionLabel(d["gold"]),
            converged=bool(d["converged"]),
            actor_prompt=d.get("actor_prompt", ""),
            reviewer_prompt=d.get("reviewer_prompt", ""),
        )


def tas_prompts(labeled: LabeledCase) -> tuple[str, str]:
    """Filled (executor, reviewer) prompts for the case's gold label."""
    case = labeled.case
    values = dict(
        question=case.question,
        evidence=render_evidence(case),
        predicted_answer=case.predicted_answer,
        code=case.generated_program or "N/A",
        missing_inds=", ".join(labeled.missing_ids) or "none",
        gold_answer=case.gold_answer,
    )
    executor, reviewer = _TAS_TEMPLATES[labeled.label]
    return fill(load_prompt(executor), **values), fill(load_prompt(reviewer), **values)


def synthesize_tas_pair(
    labeled: LabeledCase,
    client: ChatClient,
    model: str = "default",
    temperature: float = 0.7,
    seed: int | None = None,
) -> TasPair:
    actor_prompt, reviewer_prompt = tas_prompts(labeled)
    traces = {}
    for side, system in (("actor", actor_prompt), ("reviewer", reviewer_prompt)):
        req = ChatRequest(model, system, (("user", "Produce your analysis now."),), temperature, 2048, seed)
        reply = client.complete(req).text
        try:
            traces[side] = parse_tas(reply)
        except FormatError as exc:
            raise exc.with_side(side) from None
    actor, reviewer = traces["actor"], traces["reviewer"]
    return TasPair(
        case_id=labeled.case_id,
        actor_trajectory=actor,
        reviewer_trajectory=reviewer,
        gold=labeled.label,
        converged=actor.attribution is reviewer.attribution,
        actor_prompt=actor_prompt,
        reviewer_prompt=reviewer_prompt,
    )


class DropReason(str, enum.Enum):
    DIVERGED = "Diverged"
    WRONG_LABEL = "WrongLabel"


@dataclass(frozen=True)
class DroppedPair:
    pair: TasPair
    reason: DropReason


def convergence_filter(pairs: Sequence[TasPair]) -> tuple[list[TasPair], list[DroppedPair]]:
    """Keep pairs whose two trajectories agree with each other and with gold."""
    kept, dropped = [], []
    for p in pairs:
        if not p.converged:
            dropped.append(DroppedPair(p, DropReason.DIVERGED))
        elif p.actor_trajectory.attribution is not p.gold:
            dropped.append(DroppedPair(p, DropReason.WRONG_LABEL))
        else:
            kept.append(p)
    if dropped:
        log.info("convergence filter kept %d, dropped %d", len(kept), len(dropped))
    return kept, dropped
