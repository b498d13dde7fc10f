"""Shared data model and JSONL persistence.

Every persisted type exposes ``to_dict`` / ``from_dict`` and round-trips
exactly.  Result files hold one :class:`ResultEnvelope` per line and are
append-only.
"""

from __future__ import annotations

import datetime as _dt
import enum
import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

from .errors import SchemaError, VersionError

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class Domain(str, enum.Enum):
    CODING = "Coding"
    CUSTOMER_SERVICE = "Customer Service"
    RAG_SYSTEM = "RAG System"
    SAFETY_ALIGNMENT = "Safety Alignment"
    PLANNING_AGENT = "Planning Agent"
    CREATIVE_WRITING = "Creative Writing"
    DATA_ANALYSIS = "Data Analysis"
    TRANSLATION = "Translation"
    MATH_LOGIC = "Math Logic"
    PROF_COMMUNICATION = "Prof. Communication"

    @classmethod
    def parse(cls, value: str) -> "Domain":
        key = " ".join(str(value).split()).lower()
        for d in cls:
            if d.value.lower() == key:
                return d
        raise SchemaError(f"unknown domain {value!r}")


# Internal-vs-external tension per domain; used to build generator instructions.
CONFLICT_FOCUS: dict[Domain, tuple[str, str]] = {
    Domain.CODING: ("Implementation bugs", "Vague requirements"),
    Domain.CUSTOMER_SERVICE: ("Robotic protocol adherence", "Policy flexibility"),
    Domain.RAG_SYSTEM: ("Context retrieval failure", "Poor query formulation"),
    Domain.SAFETY_ALIGNMENT: ("Over-sensitive refusal", "Borderline safe requests"),
    Domain.PLANNING_AGENT: ("Logical deadlocks", "Conflicting user constraints"),
    Domain.CREATIVE_WRITING: ("Prompt misinterpretation", "Subjective taste mismatch"),
    Domain.DATA_ANALYSIS: ("Analytical logic errors", "Poor data quality/format"),
    Domain.TRANSLATION: ("Literal accuracy loss", "Cultural nuance ambiguity"),
    Domain.MATH_LOGIC: ("Calculation/Step failure", "Problem formulation errors"),
    Domain.PROF_COMMUNICATION: ("Tone appropriateness", "Content accuracy/intent"),
}


class Pairing(str, enum.Enum):
    HUMAN_AGENT = "HumanAgent"
    AGENT_AGENT = "AgentAgent"


class AttributionLabel(str, enum.Enum):
    FALSE_EXT = "FalseExt"
    FALSE_INT = "FalseInt"
    TRUE = "True"


class ForcedChoice(str, enum.Enum):
    INT = "Int"
    EXT = "Ext"


class TaskKind(str, enum.Enum):
    HYBRID_QA = "HybridQA"
    TEXT_TO_SQL = "TextToSql"


def utc_now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def _require(d: dict, key: str, kind: type | tuple[type, ...] = str) -> Any:
    if key not in d:
        raise SchemaError(f"missing field {key!r}")
    value = d[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        names = "/".join(k.__name__ for k in kind) if isinstance(kind, tuple) else kind.__name__
        raise SchemaError(f"field {key!r} must be {names}, got {type(value).__name__}")
    return value


def _enum(enum_cls: type[enum.Enum], value: Any, name: str):
    try:
        return enum_cls(value)
    except ValueError:
        raise SchemaError(f"invalid {name} {value!r}") from None


@dataclass(frozen=True)
class InteractionTrace:
    """One ambiguous-failure case probed from both perspectives."""

    trace_id: str
    domain: Domain
    pairing: Pairing
    scenario_summary: str
    shared_interaction_history: str
    system_prompt_actor: str
    system_prompt_observer: str
    neutral_task_question: str

    def __post_init__(self):
        if self.system_prompt_actor == self.system_prompt_observer:
            raise SchemaError("actor and observer system prompts must differ")

    def to_dict(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "domain": self.domain.value,
            "pairing": self.pairing.value,
            "scenario_summary": self.scenario_summary,
            "shared_interaction_history": self.shared_interaction_history,
            "system_prompt_actor": self.system_prompt_actor,
            "system_prompt_observer": self.system_prompt_observer,
            "neutral_task_question": self.neutral_task_question,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionTrace":
        if not isinstance(d, dict):
            raise SchemaError("trace record must be a JSON object")
        return cls(
            trace_id=_require(d, "trace_id"),
            domain=Domain.parse(_require(d, "domain")),
            pairing=_enum(Pairing, _require(d, "pairing"), "pairing"),
            scenario_summary=_require(d, "scenario_summary"),
            shared_interaction_history=_require(d, "shared_interaction_history"),
            system_prompt_actor=_require(d, "system_prompt_actor"),
            system_prompt_observer=_require(d, "system_prompt_observer"),
            neutral_task_question=_require(d, "neutral_task_question"),
        )


@dataclass(frozen=True)
class EvidenceItem:
    id: str
    body: str

    def to_dict(self) -> dict:
        return {"id": self.id, "body": self.body}

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceItem":
        return cls(id=_require(d, "id"), body=_require(d, "body"))


@dataclass(frozen=True)
class CaseRecord:
    """One retrieval-pipeline episode: evidence in, answer out."""

    question: str
    retrieved_evidence: tuple[EvidenceItem, ...]
    gold_evidence_ids: frozenset[str]
    predicted_answer: str
    gold_answer: str
    generated_program: str | None = None
    task_kind: TaskKind = TaskKind.HYBRID_QA
    case_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "retrieved_evidence", tuple(self.retrieved_evidence))
        object.__setattr__(self, "gold_evidence_ids", frozenset(self.gold_evidence_ids))
        if not self.gold_evidence_ids:
            raise SchemaError("gold_evidence_ids must be non-empty")
        ids = [e.id for e in self.retrieved_evidence]
        if len(ids) != len(set(ids)):
            raise SchemaError("duplicate evidence id in retrieved_evidence")

    @property
    def retrieved_ids(self) -> frozenset[str]:
        return frozenset(e.id for e in self.retrieved_evidence)

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "question": self.question,
            "retrieved_evidence": [e.to_dict() for e in self.retrieved_evidence],
            "gold_evidence_ids": sorted(self.gold_evidence_ids),
            "predicted_answer": self.predicted_answer,
            "gold_answer": self.gold_answer,
            "generated_program": self.generated_program,
            "task_kind": self.task_kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseRecord":
        if not isinstance(d, dict):
            raise SchemaError("case record must be a JSON object")
        evidence = _require(d, "retrieved_evidence", list)
        program = d.get("generated_program")
        if program is not None and not isinstance(program, str):
            raise SchemaError("generated_program must be a string or null")
        return cls(
            case_id=str(d.get("case_id", "")),
            question=_require(d, "question"),
            retrieved_evidence=tuple(EvidenceItem.from_dict(e) for e in evidence),
            gold_evidence_ids=frozenset(_require(d, "gold_evidence_ids", list)),
            predicted_answer=str(_require(d, "predicted_answer", (str, int, float))),
            gold_answer=str(_require(d, "gold_answer", (str, int, float))),
            generated_program=program,
            task_kind=_enum(TaskKind, d.get("task_kind", TaskKind.HYBRID_QA.value), "task_kind"),
        )


# --------------------------------------------------------------------------
# JSONL helpers


def iter_jsonl(path: str | os.PathLike) -> Iterator[tuple[int, str]]:
    """Yield ``(line_number, text)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                yield lineno, line


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict]) -> int:
    n = 0
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str


def load_records(
    path: str | os.PathLike,
    decode: Callable[[dict], Any],
    rejects: list[Reject] | None = None,
) -> list:
    """Decode every line of a JSONL file with ``decode``.

    Lines that are not valid JSON are skipped and reported through
    ``rejects`` (and the log).  A line that parses but fails ``decode``
    raises :class:`SchemaError` tagged with its line number.
    """
    out = []
    for lineno, line in iter_jsonl(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            log.warning("%s:%d: rejected malformed line (%s)", path, lineno, exc.msg)
            if rejects is not None:
                rejects.append(Reject(lineno, f"malformed JSON: {exc.msg}"))
            continue
        try:
            out.append(decode(obj))
        except SchemaError as exc:
            raise SchemaError(str(exc), line=lineno) from None
        except KeyError as exc:
            raise SchemaError(f"missing field {exc}", line=lineno) from None
        except (ValueError, TypeError, AttributeError) as exc:
            raise SchemaError(str(exc), line=lineno) from None
    return out


def load_traces(path: str | os.PathLike, rejects: list[Reject] | None = None) -> list[InteractionTrace]:
    return load_records(path, InteractionTrace.from_dict, rejects)


def load_cases(path: str | os.PathLike, rejects: list[Reject] | None = None) -> list[CaseRecord]:
    return load_records(path, CaseRecord.from_dict, rejects)


# --------------------------------------------------------------------------
# Result envelopes

_PAYLOAD_TYPES: dict[str, type] = {}


def register_payload(cls):
    """Class decorator making ``cls`` storable inside a ResultEnvelope."""
    _PAYLOAD_TYPES[cls.__name__] = cls
    return cls


def _payload_class(name: str) -> type:
    if name not in _PAYLOAD_TYPES:
        # payload modules register themselves on import
        from . import arena, datagen, probe, reward  # noqa: F401
    try:
        return _PAYLOAD_TYPES[name]
    except KeyError:
        raise SchemaError(f"unknown payload type {name!r}") from None


@register_payload
@dataclass(frozen=True)
class RunHeader:
    """First record of a results file: the effective run configuration."""

    command: str
    config: dict
    config_hash: str

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "config_hash": self.config_hash}

    @classmethod
    def from_dict(cls, d: dict) -> "RunHeader":
        return cls(command=_require(d, "command"), config=_require(d, "config", dict),
                   config_hash=_require(d, "config_hash"))


@dataclass(frozen=True)
class ResultEnvelope:
    payload: Any
    run_id: str
    schema_version: int = SCHEMA_VERSION
    created_at: str = field(default_factory=utc_now)
    config_hash: str = ""

    @property
    def payload_type(self) -> str:
        return type(self.payload).__name__

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "created_at": self.created_at,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "type": self.payload_type,
            "payload": self.payload.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResultEnvelope":
        if not isinstance(d, dict):
            raise SchemaError("envelope must be a JSON object")
        payload_cls = _payload_class(_require(d, "type"))
        return cls(
            payload=payload_cls.from_dict(_require(d, "payload", dict)),
            run_id=_require(d, "run_id"),
            schema_version=_require(d, "schema_version", int),
            created_at=_require(d, "created_at"),
            config_hash=d.get("config_hash", ""),
        )


class ResultStore:
    """Append-only JSONL store of :class:`ResultEnvelope` records.

    Appends are serialized by an internal lock and fsync'ed, so a crash
    leaves at worst a file truncated at a line boundary.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self.head_version = 0
        self.count = 0
        if self.path.exists():
            for _, line in iter_jsonl(self.path):
                rec = json.loads(line)
                self.head_version = max(self.head_version, int(rec.get("schema_version", 0)))
                self.count += 1
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: ResultEnvelope) -> int:
        """Append ``record``; returns its 1-based line index."""
        line = json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)
        with self._lock:
            if record.schema_version < self.head_version:
                raise VersionError(
                    f"schema_version {record.schema_version} < file head {self.head_version}"
                )
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self.head_version = record.schema_version
            self.count += 1
            return self.count

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ResultStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def append_result(store: ResultStore, record: ResultEnvelope) -> int:
    return store.append(record)


def read_results(path: str | os.PathLike, rejects: list[Reject] | None = None) -> list[ResultEnvelope]:
    return load_records(path, ResultEnvelope.from_dict, rejects)
