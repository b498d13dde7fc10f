"""Parser and serializer for dialectical Thesis-Antithesis-Synthesis traces.

Canonical layout::

    <thinking>
      <thesis> ... </thesis>
      <antithesis> ... </antithesis>
      <synthesis> ... </synthesis>
    </thinking>
    [Attribution] FalseExt | FalseInt | True
    [Action] Search(query) | Revise(code) | Confirm()

The reviewer/executor prompt variant is accepted too: an optional
``[Analysis]`` line, ``[Responsibility] External|Internal|Correct`` in place
of ``[Attribution]``, and ``Search New Query: ...`` style actions.
"""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field

from .errors import AmbiguityError, FormatError, FormatErrorKind
from .model import AttributionLabel, ForcedChoice

log = logging.getLogger(__name__)

TAGS = (
    "<thinking>",
    "<thesis>",
    "</thesis>",
    "<antithesis>",
    "</antithesis>",
    "<synthesis>",
    "</synthesis>",
    "</thinking>",
)


class ActionKind(str, enum.Enum):
    SEARCH = "Search"
    REVISE = "Revise"
    CONFIRM = "Confirm"


@dataclass(frozen=True)
class TasAction:
    kind: ActionKind
    argument: str | None = None

    def __post_init__(self):
        arg = self.argument
        if self.kind is ActionKind.CONFIRM:
            if arg:
                raise ValueError("Confirm takes no argument")
            object.__setattr__(self, "argument", None)
            return
        if not arg or arg != arg.strip():
            raise ValueError(f"{self.kind.value} needs a non-empty, trimmed argument")
        if self.kind is ActionKind.SEARCH and "\n" in arg:
            raise ValueError("Search query must be a single line")

    def render(self) -> str:
        return f"{self.kind.value}({self.argument or ''})"


@dataclass(frozen=True)
class TasTrace:
    thesis: str
    antithesis: str
    synthesis: str
    attribution: AttributionLabel
    action: TasAction
    # text found after the action; kept for diagnostics, ignored by equality
    trailing_text: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        for name in ("thesis", "antithesis", "synthesis"):
            seg = getattr(self, name)
            if not seg or seg != seg.strip():
                raise ValueError(f"{name} must be non-empty and trimmed")
            if any(tag in seg for tag in TAGS):
                raise ValueError(f"{name} may not contain TAS tags")

    @property
    def flagged(self) -> bool:
        return bool(self.trailing_text)

    def to_dict(self) -> dict:
        return {
            "thesis": self.thesis,
            "antithesis": self.antithesis,
            "synthesis": self.synthesis,
            "attribution": self.attribution.value,
            "action": {"kind": self.action.kind.value, "argument": self.action.argument},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TasTrace":
        return cls(
            thesis=d["thesis"],
            antithesis=d["antithesis"],
            synthesis=d["synthesis"],
            attribution=AttributionLabel(d["attribution"]),
            action=TasAction(ActionKind(d["action"]["kind"]), d["action"].get("argument")),
        )


_ATTRIBUTION_WORDS = {
    "falseext": AttributionLabel.FALSE_EXT,
    "falseint": AttributionLabel.FALSE_INT,
    "true": AttributionLabel.TRUE,
}
_RESPONSIBILITY_WORDS = {
    "external": AttributionLabel.FALSE_EXT,
    "ext": AttributionLabel.FALSE_EXT,
    "internal": AttributionLabel.FALSE_INT,
    "int": AttributionLabel.FALSE_INT,
    "correct": AttributionLabel.TRUE,
    "none": AttributionLabel.TRUE,
    "true": AttributionLabel.TRUE,
}

_TRAILER_RE = re.compile(r"^[ \t]*\[(Attribution|Responsibility)\][ \t]*(.*)$", re.MULTILINE)
_ACTION_RE = re.compile(r"^[ \t]*\[Action\][ \t]*", re.MULTILINE)
_KIND_RE = re.compile(r"([A-Za-z]+)")


def _fail(kind: FormatErrorKind, detail: str):
    raise FormatError(kind, detail)


def _parse_action(rest: str) -> tuple[TasAction, str]:
    """Parse the text following ``[Action]``; returns (action, trailing)."""
    m = _KIND_RE.match(rest)
    if not m:
        _fail(FormatErrorKind.UNKNOWN_ACTION, repr(rest[:40]))
    try:
        kind = ActionKind(m.group(1).capitalize())
    except ValueError:
        _fail(FormatErrorKind.UNKNOWN_ACTION, repr(m.group(1)))
    after = rest[m.end():]
    line, nl, remainder = after.partition("\n")
    stripped = line.lstrip()

    if stripped.startswith("("):
        if kind is ActionKind.REVISE:
            # code may span lines and nest parentheses: take up to the last ')'
            body = after[after.index("(") + 1:]
            close = body.rfind(")")
            if close < 0:
                _fail(FormatErrorKind.ACTION_ARITY, "unterminated Revise(...)")
            arg, trailing = body[:close], body[close + 1:]
        else:
            body = stripped[1:]
            close = body.rfind(")")
            if close < 0:
                _fail(FormatErrorKind.ACTION_ARITY, f"unterminated {kind.value}(...)")
            arg, trailing = body[:close], body[close + 1:] + nl + remainder
    elif ":" in line:
        # "Search New Query: ..." / "Revise Code: ..."
        head, _, tail = line.partition(":")
        if head.strip() and not re.fullmatch(r"[A-Za-z ]+", head.strip()):
            _fail(FormatErrorKind.UNKNOWN_ACTION, repr(line[:40]))
        if kind is ActionKind.REVISE:
            arg, trailing = tail + nl + remainder, ""
        else:
            arg, trailing = tail, nl + remainder
    else:
        if stripped.strip() and kind is not ActionKind.CONFIRM:
            arg, trailing = "", nl + remainder
        else:
            arg, trailing = "", stripped + nl + remainder

    arg = arg.strip()
    if kind is ActionKind.CONFIRM:
        if arg:
            _fail(FormatErrorKind.ACTION_ARITY, "Confirm takes no argument")
        return TasAction(kind), trailing.strip()
    if not arg:
        _fail(FormatErrorKind.ACTION_ARITY, f"{kind.value} requires an argument")
    return TasAction(kind, arg), trailing.strip()


def parse_tas(raw: str) -> TasTrace:
    """Parse a model reply into a :class:`TasTrace`.

    Raises :class:`FormatError` naming the first violated rule, checked in
    the order: missing tag, tag order, empty segment, trailers, action.
    """
    if not isinstance(raw, str):
        raise TypeError("raw must be str")
    positions = []
    for tag in TAGS:
        idx = raw.find(tag)
        if idx < 0:
            _fail(FormatErrorKind.MISSING_SEGMENT, f"{tag} not found")
        positions.append(idx)
    for (a, pa), (b, pb) in zip(zip(TAGS, positions), zip(TAGS[1:], positions[1:])):
        if pb <= pa:
            _fail(FormatErrorKind.SEGMENT_ORDER, f"{b} appears before {a}")

    def inner(i: int) -> str:
        return raw[positions[i] + len(TAGS[i]):positions[i + 1]].strip()

    thesis, antithesis, synthesis = inner(1), inner(3), inner(5)
    for name, seg in (("thesis", thesis), ("antithesis", antithesis), ("synthesis", synthesis)):
        if not seg:
            _fail(FormatErrorKind.MISSING_SEGMENT, f"empty {name}")
        if any(tag in seg for tag in TAGS):
            _fail(FormatErrorKind.SEGMENT_ORDER, f"stray tag inside {name}")

    tail = raw[positions[7] + len(TAGS[7]):]
    trailer = _TRAILER_RE.search(tail)
    action_m = _ACTION_RE.search(tail)
    if trailer is None:
        _fail(FormatErrorKind.MISSING_SEGMENT, "[Attribution] line not found")
    if action_m is None:
        _fail(FormatErrorKind.MISSING_SEGMENT, "[Action] line not found")
    if action_m.start() < trailer.start():
        _fail(FormatErrorKind.SEGMENT_ORDER, "[Action] appears before the attribution line")

    words = _ATTRIBUTION_WORDS if trailer.group(1) == "Attribution" else _RESPONSIBILITY_WORDS
    token = trailer.group(2).strip().strip("*`").strip().rstrip(".")
    try:
        attribution = words[token.lower()]
    except KeyError:
        _fail(FormatErrorKind.UNKNOWN_ATTRIBUTION, repr(token))

    action, trailing = _parse_action(tail[action_m.end():])
    if trailing:
        log.debug("ignoring text after [Action]: %r", trailing[:80])
    return TasTrace(thesis, antithesis, synthesis, attribution, action, trailing_text=trailing)


def serialize_tas(trace: TasTrace) -> str:
    return (
        "<thinking>\n"
        f"  <thesis> {trace.thesis} </thesis>\n"
        f"  <antithesis> {trace.antithesis} </antithesis>\n"
        f"  <synthesis> {trace.synthesis} </synthesis>\n"
        "</thinking>\n"
        f"[Attribution] {trace.attribution.value}\n"
        f"[Action] {trace.action.render()}"
    )


def try_parse_tas(raw: str) -> TasTrace | None:
    try:
        return parse_tas(raw)
    except FormatError:
        return None


_CHOICE_RE = re.compile(r"\b(internal|external|int|ext)\b", re.IGNORECASE)


def parse_forced_choice(raw: str) -> ForcedChoice:
    """Return the last Int/Ext verdict in ``raw``; raises AmbiguityError if none."""
    matches = _CHOICE_RE.findall(raw or "")
    if not matches:
        raise AmbiguityError(f"no Internal/External token in reply: {raw[:80]!r}")
    last = matches[-1].lower()
    return ForcedChoice.INT if last.startswith("int") else ForcedChoice.EXT
