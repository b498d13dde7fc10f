"""Exception hierarchy shared across the harness."""

from __future__ import annotations

import enum


class HarnessError(Exception):
    """Base class for every error raised by the harness."""


class SchemaError(HarnessError):
    """A record failed schema validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class VersionError(HarnessError):
    """An appended record would regress the store's schema_version."""


class FormatErrorKind(enum.Enum):
    MISSING_SEGMENT = "MissingSegment"
    SEGMENT_ORDER = "SegmentOrder"
    UNKNOWN_ATTRIBUTION = "UnknownAttribution"
    UNKNOWN_ACTION = "UnknownAction"
    ACTION_ARITY = "ActionArity"


class FormatError(HarnessError):
    """A TAS trace (or dialectic reflection) violated the output grammar.

    ``side`` is set when the offending text came from one half of a paired
    generation (``"actor"`` or ``"reviewer"``).
    """

    def __init__(self, kind: FormatErrorKind, detail: str = "", side: str | None = None):
        self.kind = kind
        self.detail = detail
        self.side = side
        msg = kind.value if not detail else f"{kind.value}: {detail}"
        if side:
            msg = f"[{side}] {msg}"
        super().__init__(msg)

    def with_side(self, side: str) -> "FormatError":
        return FormatError(self.kind, self.detail, side=side)


class AmbiguityError(HarnessError):
    """No Int/Ext attribution token could be found in a reply."""


class TransportError(HarnessError):
    """Network failure or 5xx status that survived the retry budget."""

    def __init__(self, message: str, side: str | None = None):
        self.side = side
        super().__init__(f"[{side}] {message}" if side else message)


class RateLimited(TransportError):
    """HTTP 429 persisted through the whole backoff budget."""


class ProviderError(HarnessError):
    """Non-retryable 4xx response from the provider."""

    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:500]
        super().__init__(f"HTTP {status}: {self.body}")


class GenerationError(HarnessError):
    """A teacher generation exhausted its retry budget."""

    def __init__(self, message: str, reasons: list[str] | None = None):
        self.reasons = list(reasons or [])
        super().__init__(message)


class BudgetExhausted(HarnessError):
    """Accepting an offer would overrun the buyer's remaining budget."""


class MalformedOffer(HarnessError):
    """A seller message carried no extractable price after one retry."""


class UsageError(HarnessError):
    """Bad command-line usage."""
