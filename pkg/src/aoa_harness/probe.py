"""Paired actor/observer probes and the metrics computed over them.

A paired probe sends the same conversation twice, changing only the system
prompt, and classifies the joint verdict:

=========  =========  ========
actor      observer   category
=========  =========  ========
Int        Int        Internal
Ext        Ext        External
Ext        Int        VAOA
Int        Ext        RAOA
=========  =========  ========

A side whose reply cannot be parsed (after one format-reminder retry) is
Invalid, and so is the pair.
"""

from __future__ import annotations

import enum
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .client import ChatClient, ChatRequest
from .errors import AmbiguityError, FormatError
from .labeler import LabeledCase, answers_match
from .model import AttributionLabel, ForcedChoice, InteractionTrace, TaskKind, register_payload
from .prompts import fill, load_prompt
from .tas import parse_forced_choice, parse_tas


class Category(str, enum.Enum):
    INTERNAL = "Internal"
    EXTERNAL = "External"
    VAOA = "VAOA"
    RAOA = "RAOA"
    INVALID = "Invalid"


class ProbeMode(str, enum.Enum):
    FORCED_CHOICE = "forced-choice"
    DUAL_VIEW = "dual-view"
    TAS = "tas"


_PAIR_TABLE = {
    (ForcedChoice.INT, ForcedChoice.INT): Category.INTERNAL,
    (ForcedChoice.EXT, ForcedChoice.EXT): Category.EXTERNAL,
    (ForcedChoice.EXT, ForcedChoice.INT): Category.VAOA,
    (ForcedChoice.INT, ForcedChoice.EXT): Category.RAOA,
}


def classify_pair(y_act: ForcedChoice | None, y_obs: ForcedChoice | None) -> Category:
    if y_act is None or y_obs is None:
        return Category.INVALID
    return _PAIR_TABLE[(y_act, y_obs)]


def label_to_choice(label: AttributionLabel) -> ForcedChoice:
    """Locus of a three-way label: only missing evidence is external."""
    return ForcedChoice.EXT if label is AttributionLabel.FALSE_EXT else ForcedChoice.INT


def _choice_str(c: ForcedChoice | None) -> str:
    return c.value if c is not None else "Invalid"


def _choice_from(s: str | None) -> ForcedChoice | None:
    return None if s in (None, "Invalid") else ForcedChoice(s)


@register_payload
@dataclass(frozen=True)
class PairedOutcome:
    trace_id: str
    y_act: ForcedChoice | None
    y_obs: ForcedChoice | None
    category: Category
    raw_actor: str
    raw_observer: str
    model: str = ""
    pairing: str | None = None
    mode: ProbeMode = ProbeMode.FORCED_CHOICE
    label_act: AttributionLabel | None = None
    label_obs: AttributionLabel | None = None
    retries: int = 0

    def __post_init__(self):
        if self.category is not classify_pair(self.y_act, self.y_obs):
            raise ValueError(f"category {self.category} inconsistent with ({self.y_act}, {self.y_obs})")

    @property
    def valid(self) -> bool:
        return self.category is not Category.INVALID

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "y_act": _choice_str(self.y_act),
            "y_obs": _choice_str(self.y_obs),
            "category": self.category.value,
            "raw_actor": self.raw_actor,
            "raw_observer": self.raw_observer,
            "model": self.model,
            "pairing": self.pairing,
            "mode": self.mode.value,
            "label_act": self.label_act.value if self.label_act else None,
            "label_obs": self.label_obs.value if self.label_obs else None,
            "retries": self.retries,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairedOutcome":
        return cls(
            trace_id=d["trace_id"],
            y_act=_choice_from(d["y_act"]),
            y_obs=_choice_from(d["y_obs"]),
            category=Category(d["category"]),
            raw_actor=d.get("raw_actor", ""),
            raw_observer=d.get("raw_observer", ""),
            model=d.get("model", ""),
            pairing=d.get("pairing"),
            mode=ProbeMode(d.get("mode", ProbeMode.FORCED_CHOICE.value)),
            label_act=AttributionLabel(d["label_act"]) if d.get("label_act") else None,
            label_obs=AttributionLabel(d["label_obs"]) if d.get("label_obs") else None,
            retries=int(d.get("retries", 0)),
        )

    @classmethod
    def from_choices(cls, trace_id: str, y_act: ForcedChoice | None, y_obs: ForcedChoice | None,
                     **kw) -> "PairedOutcome":
        kw.setdefault("raw_actor", "")
        kw.setdefault("raw_observer", "")
        return cls(trace_id, y_act, y_obs, classify_pair(y_act, y_obs), **kw)


# --------------------------------------------------------------------------
# running probes

_LABEL_RE = re.compile(r"\b(falseext|falseint|true|external|internal|correct)\b", re.IGNORECASE)
_LABEL_WORDS = {
    "falseext": AttributionLabel.FALSE_EXT,
    "external": AttributionLabel.FALSE_EXT,
    "falseint": AttributionLabel.FALSE_INT,
    "internal": AttributionLabel.FALSE_INT,
    "true": AttributionLabel.TRUE,
    "correct": AttributionLabel.TRUE,
}


def parse_label_choice(raw: str) -> AttributionLabel:
    """Last three-way attribution token in ``raw``."""
    found = _LABEL_RE.findall(raw or "")
    if not found:
        raise AmbiguityError(f"no attribution label in reply: {raw[:80]!r}")
    return _LABEL_WORDS[found[-1].lower()]


SideParser = Callable[[str], "tuple[ForcedChoice, AttributionLabel | None]"]


def _parse_choice_side(raw: str):
    return parse_forced_choice(raw), None


def _parse_label_side(raw: str):
    label = parse_label_choice(raw)
    return label_to_choice(label), label


def _parse_tas_side(raw: str):
    label = parse_tas(raw).attribution
    return label_to_choice(label), label


@dataclass(frozen=True)
class _Side:
    choice: ForcedChoice | None
    label: AttributionLabel | None
    raw: str
    retried: bool


def _run_side(client: ChatClient, req: ChatRequest, parse: SideParser) -> _Side:
    reply = client.complete(req).text
    try:
        choice, label = parse(reply)
        return _Side(choice, label, reply, False)
    except (AmbiguityError, FormatError):
        pass
    retry = client.complete(req.followup(reply, load_prompt("format_reminder"))).text
    try:
        choice, label = parse(retry)
        return _Side(choice, label, retry, True)
    except (AmbiguityError, FormatError):
        return _Side(None, None, retry, True)


def _run_pair(
    pair_id: str,
    actor_system: str,
    observer_system: str,
    user_text: str,
    parse: SideParser,
    client: ChatClient,
    model: str,
    mode: ProbeMode,
    pairing: str | None,
    temperature: float,
    max_tokens: int,
    seed: int | None,
) -> PairedOutcome:
    def request(system: str) -> ChatRequest:
        return ChatRequest(model, system, (("user", user_text),), temperature, max_tokens, seed)

    act = _run_side(client, request(actor_system), parse)
    obs = _run_side(client, request(observer_system), parse)
    return PairedOutcome(
        trace_id=pair_id,
        y_act=act.choice,
        y_obs=obs.choice,
        category=classify_pair(act.choice, obs.choice),
        raw_actor=act.raw,
        raw_observer=obs.raw,
        model=model,
        pairing=pairing,
        mode=mode,
        label_act=act.label,
        label_obs=obs.label,
        retries=int(act.retried) + int(obs.retried),
    )


def trace_user_message(trace: InteractionTrace) -> str:
    return (
        f"{trace.shared_interaction_history}\n\n"
        f"{trace.neutral_task_question}\n\n"
        f"{load_prompt('forced_choice')}"
    )


def run_paired_probe(
    trace: InteractionTrace,
    client: ChatClient,
    model: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 1024,
    seed: int | None = None,
) -> PairedOutcome:
    return _run_pair(
        trace.trace_id,
        trace.system_prompt_actor,
        trace.system_prompt_observer,
        trace_user_message(trace),
        _parse_choice_side,
        client,
        model,
        ProbeMode.FORCED_CHOICE,
        trace.pairing.value,
        temperature,
        max_tokens,
        seed,
    )


def render_evidence(case) -> str:
    return "\n".join(f"[{e.id}] {e.body}" for e in case.retrieved_evidence) or "(none)"


def case_user_message(case, mode: ProbeMode) -> str:
    record = fill(
        load_prompt("case_record"),
        question=case.question,
        evidence=render_evidence(case),
        predicted_answer=case.predicted_answer,
        code=case.generated_program or "N/A",
    )
    tail = load_prompt("tas_format") if mode is ProbeMode.TAS else load_prompt("case_label_choice")
    return f"{record}\n\n{tail}"


def run_case_probe(
    labeled: LabeledCase,
    client: ChatClient,
    model: str = "default",
    mode: ProbeMode = ProbeMode.DUAL_VIEW,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    seed: int | None = None,
) -> PairedOutcome:
    """Executor-vs-reviewer probe over a retrieval case (dual-view or TAS)."""
    if mode is ProbeMode.FORCED_CHOICE:
        raise ValueError("case probes run in dual-view or tas mode")
    parse = _parse_tas_side if mode is ProbeMode.TAS else _parse_label_side
    return _run_pair(
        labeled.case_id,
        load_prompt("case_executor"),
        load_prompt("case_reviewer"),
        case_user_message(labeled.case, mode),
        parse,
        client,
        model,
        mode,
        None,
        temperature,
        max_tokens,
        seed,
    )


def run_probes(items: Sequence, probe: Callable, parallel: int = 1) -> list[PairedOutcome]:
    """Apply ``probe`` to every item, up to ``parallel`` at a time; order is kept."""
    if parallel <= 1:
        return [probe(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(probe, items))


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricsSummary:
    n_total: int = 0
    n_internal: int = 0
    n_external: int = 0
    n_vaoa: int = 0
    n_raoa: int = 0
    n_invalid: int = 0
    flip: int = 0
    acc: float | None = None
    acc_actor: float | None = None
    acc_observer: float | None = None
    f1: float | None = None

    def __post_init__(self):
        parts = self.n_internal + self.n_external + self.n_vaoa + self.n_raoa + self.n_invalid
        if self.n_total != parts:
            raise ValueError("n_total must equal the sum of category counts")
        if self.flip != self.n_vaoa + self.n_raoa:
            raise ValueError("flip must equal n_vaoa + n_raoa")

    @property
    def n_valid(self) -> int:
        return self.n_total - self.n_invalid

    def rate(self, count: int) -> float:
        return count / self.n_valid if self.n_valid else 0.0

    @property
    def flip_rate(self) -> float:
        return self.rate(self.flip)

    @property
    def vaoa_rate(self) -> float:
        return self.rate(self.n_vaoa)

    def to_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_internal": self.n_internal,
            "n_external": self.n_external,
            "n_vaoa": self.n_vaoa,
            "n_raoa": self.n_raoa,
            "n_invalid": self.n_invalid,
            "flip": self.flip,
            "flip_rate": self.flip_rate,
            "vaoa_rate": self.vaoa_rate,
            "acc": self.acc,
            "acc_actor": self.acc_actor,
            "acc_observer": self.acc_observer,
            "f1": self.f1,
        }


def _side_correct(choice: ForcedChoice | None, label: AttributionLabel | None,
                  gold: AttributionLabel | ForcedChoice) -> bool:
    if isinstance(gold, ForcedChoice):
        return choice is gold
    if label is not None:
        return label is gold
    return choice is label_to_choice(gold)


def aggregate_metrics(
    outcomes: Iterable[PairedOutcome],
    golds: Mapping[str, AttributionLabel | ForcedChoice] | None = None,
    answers: Iterable[tuple[str, str]] | None = None,
) -> MetricsSummary:
    """Fold paired outcomes into counts, Flip, and optional Acc / answer F1.

    Acc is the mean of the actor-side and observer-side accuracies over
    valid outcomes that have a gold label; Invalid pairs are excluded.
    """
    outcomes = list(outcomes)
    counts = Counter(o.category for o in outcomes)
    acc = acc_act = acc_obs = None
    if golds is not None:
        graded = [o for o in outcomes if o.valid and o.trace_id in golds]
        if graded:
            acc_act = sum(_side_correct(o.y_act, o.label_act, golds[o.trace_id]) for o in graded) / len(graded)
            acc_obs = sum(_side_correct(o.y_obs, o.label_obs, golds[o.trace_id]) for o in graded) / len(graded)
            acc = (acc_act + acc_obs) / 2
    f1 = None
    if answers is not None:
        scores = [answer_f1(p, g) for p, g in answers]
        f1 = sum(scores) / len(scores) if scores else None
    return MetricsSummary(
        n_total=len(outcomes),
        n_internal=counts[Category.INTERNAL],
        n_external=counts[Category.EXTERNAL],
        n_vaoa=counts[Category.VAOA],
        n_raoa=counts[Category.RAOA],
        n_invalid=counts[Category.INVALID],
        flip=counts[Category.VAOA] + counts[Category.RAOA],
        acc=acc,
        acc_actor=acc_act,
        acc_observer=acc_obs,
        f1=f1,
    )


def outcomes_from_counts(vaoa: int, raoa: int, internal: int, external: int,
                         invalid: int = 0, prefix: str = "t", **kw) -> list[PairedOutcome]:
    """Synthesize outcomes realizing the given category counts."""
    I, E = ForcedChoice.INT, ForcedChoice.EXT
    plan = ([(E, I)] * vaoa + [(I, E)] * raoa + [(I, I)] * internal
            + [(E, E)] * external + [(None, I)] * invalid)
    return [PairedOutcome.from_choices(f"{prefix}{i:04d}", a, o, **kw) for i, (a, o) in enumerate(plan)]


_PUNCT = str.maketrans("", "", string.punctuation)


def _tokens(text: str) -> list[str]:
    return text.lower().translate(_PUNCT).split()


def answer_f1(predicted: str, gold: str, task_kind: TaskKind = TaskKind.HYBRID_QA) -> float:
    """Token-level F1 after lowercasing and stripping punctuation.

    Answers the labeler's comparator deems equal (e.g. "0.25" vs "25%")
    score 1.
    """
    if answers_match(predicted, gold, task_kind):
        return 1.0
    p, g = _tokens(predicted), _tokens(gold)
    if not p or not g:
        return float(p == g)
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision, recall = common / len(p), common / len(g)
    return 2 * precision * recall / (precision + recall)
