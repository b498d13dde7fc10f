"""Provider-agnostic chat-completion client.

Requests are encoded once to bytes; those exact bytes are sent to the
backend and captured, so paired-probe symmetry can be asserted on what
actually went over the wire.  Three backends share one interface
(``send(body) -> (status, body)``):

* :class:`HttpBackend` - OpenAI-compatible ``POST /v1/chat/completions``
* :class:`ScriptedBehavior` - deterministic rule-based replies, with fault
  injection, so every test and demo runs offline
* :class:`ReplayBackend` - replays a captured request/response log
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence, Union

from .errors import ProviderError, RateLimited, TransportError

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ChatRequest:
    model: str
    system_prompt: str
    messages: tuple[tuple[str, str], ...] = ()
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        n_system = 1 if self.system_prompt else 0
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"invalid role {role!r}")
            n_system += role == "system"
        if n_system > 1:
            raise ValueError("at most one system prompt per request")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def payload(self) -> dict:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.extend({"role": r, "content": t} for r, t in self.messages)
        out = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def body(self) -> bytes:
        return json.dumps(self.payload(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")

    @classmethod
    def from_payload(cls, payload: dict) -> "ChatRequest":
        system = ""
        messages = []
        for m in payload.get("messages", []):
            if m["role"] == "system" and not system and not messages:
                system = m["content"]
            else:
                messages.append((m["role"], m["content"]))
        return cls(
            model=payload.get("model", ""),
            system_prompt=system,
            messages=tuple(messages),
            temperature=payload.get("temperature", 0.0),
            max_tokens=payload.get("max_tokens", 1024),
            seed=payload.get("seed"),
        )

    def followup(self, assistant_text: str, user_text: str) -> "ChatRequest":
        """Same request extended by one assistant turn and one user turn."""
        msgs = self.messages + (("assistant", assistant_text), ("user", user_text))
        return ChatRequest(self.model, self.system_prompt, msgs, self.temperature,
                           self.max_tokens, self.seed)


@dataclass
class ChatResponse:
    text: str
    usage: dict
    retry_count: int
    request_body: bytes


@dataclass(frozen=True)
class Capture:
    request: bytes
    status: int | None
    response: bytes
    attempts: int

    def to_dict(self) -> dict:
        return {
            "request": self.request.decode("utf-8"),
            "status": self.status,
            "response": self.response.decode("utf-8", errors="replace"),
            "attempts": self.attempts,
        }


class Backend(Protocol):
    def send(self, body: bytes) -> tuple[int, bytes]: ...


class BackendUnavailable(OSError):
    """Connection-level failure (DNS, refused, timeout)."""


def _completion_body(text: str, usage: dict, ident: str = "scripted") -> bytes:
    return json.dumps({
        "id": ident,
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text},
                     "finish_reason": "stop"}],
        "usage": usage,
    }, ensure_ascii=False).encode("utf-8")


class HttpBackend:
    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 120.0,
    ):
        import httpx

        if "/chat/completions" not in url:
            url = url.rstrip("/") + ("/chat/completions" if url.rstrip("/").endswith("/v1")
                                     else "/v1/chat/completions")
        self.url = url
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._httpx = httpx
        self._client = httpx.Client(headers=headers, timeout=timeout)

    def send(self, body: bytes) -> tuple[int, bytes]:
        try:
            resp = self._client.post(self.url, content=body)
        except self._httpx.TransportError as exc:
            raise BackendUnavailable(str(exc)) from exc
        return resp.status_code, resp.content

    def close(self) -> None:
        self._client.close()


Matcher = Union[str, Callable[[ChatRequest], bool], None]
Reply = Union[str, Sequence[str], Callable[[ChatRequest], str]]


@dataclass
class Rule:
    """One scripted behaviour.

    ``match`` is a substring searched in ``field`` ("system", "messages" or
    "any"), a predicate over the request, or None for a catch-all.
    ``reply`` is fixed text, a list consumed in order (the last entry
    repeats), or a function of the request.  ``failures`` lists HTTP
    statuses returned, one per call, before the reply is served.
    """

    match: Matcher
    reply: Reply
    failures: Sequence[int] = ()
    field: str = "any"

    def matches(self, req: ChatRequest) -> bool:
        if self.match is None:
            return True
        if callable(self.match):
            return bool(self.match(req))
        haystacks = []
        if self.field in ("system", "any"):
            haystacks.append(req.system_prompt)
        if self.field in ("messages", "any"):
            haystacks.extend(t for _, t in req.messages)
        return any(self.match in h for h in haystacks)


def _approx_tokens(text: str) -> int:
    return len(text.split())


class ScriptedBehavior:
    """Deterministic backend: the first matching rule answers."""

    def __init__(self, rules: Sequence[Rule], default: Rule | str | None = None):
        self.rules = list(rules)
        if isinstance(default, str):
            default = Rule(None, default)
        if default is None:
            if not self.rules or self.rules[-1].match is not None:
                raise ValueError("scripted behaviour needs a default rule")
        else:
            self.rules.append(default)
        self._lock = threading.Lock()
        self._failures = {i: deque(r.failures) for i, r in enumerate(self.rules)}
        self._sequence_pos: dict[int, int] = defaultdict(int)

    def _reply(self, idx: int, rule: Rule, req: ChatRequest) -> str:
        if callable(rule.reply):
            return rule.reply(req)
        if isinstance(rule.reply, str):
            return rule.reply
        seq = list(rule.reply)
        pos = min(self._sequence_pos[idx], len(seq) - 1)
        self._sequence_pos[idx] += 1
        return seq[pos]

    def send(self, body: bytes) -> tuple[int, bytes]:
        req = ChatRequest.from_payload(json.loads(body))
        for idx, rule in enumerate(self.rules):
            if rule.matches(req):
                break
        with self._lock:
            pending = self._failures[idx]
            if pending:
                status = pending.popleft()
                return status, json.dumps({"error": {"message": f"injected {status}"}}).encode()
            text = self._reply(idx, rule, req)
        prompt_tokens = _approx_tokens(req.system_prompt) + sum(_approx_tokens(t) for _, t in req.messages)
        usage = {"prompt_tokens": prompt_tokens, "completion_tokens": _approx_tokens(text),
                 "total_tokens": prompt_tokens + _approx_tokens(text)}
        return 200, _completion_body(text, usage)

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptedBehavior":
        """Build from ``{"rules": [{"match", "reply", "fail", "field"}], "default"}``."""
        rules = [
            Rule(match=r.get("match"), reply=r["reply"], failures=tuple(r.get("fail", ())),
                 field=r.get("field", "any"))
            for r in data.get("rules", [])
        ]
        return cls(rules, default=data.get("default"))

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBehavior":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


class ReplayBackend:
    """Serves responses recorded by :meth:`ChatClient.save_log`."""

    def __init__(self, captures: Sequence[Capture]):
        self._table: dict[bytes, deque] = defaultdict(deque)
        for c in captures:
            self._table[c.request].append((c.status or 599, c.response))
        self._lock = threading.Lock()

    @classmethod
    def from_log(cls, path: str | os.PathLike) -> "ReplayBackend":
        caps = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    caps.append(Capture(d["request"].encode("utf-8"), d["status"],
                                        d["response"].encode("utf-8"), d.get("attempts", 1)))
        return cls(caps)

    def send(self, body: bytes) -> tuple[int, bytes]:
        with self._lock:
            queue = self._table.get(body)
            if not queue:
                return 404, b'{"error": {"message": "request not in replay log"}}'
            status, resp = queue[0] if len(queue) == 1 else queue.popleft()
        return status, resp


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    jitter: float = 0.1
    max_delay: float = 30.0
    retry_statuses: frozenset = RETRYABLE_STATUSES

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.base_delay < 0 or self.jitter < 0:
            raise ValueError("delays must be non-negative")

    def delay(self, attempt: int) -> float:
        """Backoff before retry number ``attempt`` (1-based), without jitter."""
        return min(self.max_delay, self.base_delay * 2 ** (attempt - 1))


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate: float, capacity: float | None = None,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            self._sleep(wait)


class ChatClient:
    """Chat client with retries, optional rate limiting, and request capture."""

    def __init__(
        self,
        backend: Backend,
        retry: RetryPolicy | None = None,
        limiter: TokenBucket | None = None,
        sleep: Callable[[float], None] = time.sleep,
        seed: int = 0,
    ):
        self.backend = backend
        self.retry = retry or RetryPolicy()
        self.limiter = limiter
        self._sleep = sleep
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.captured: list[Capture] = []
        self.usage_totals: dict[str, int] = defaultdict(int)

    def with_retry(self, policy: RetryPolicy) -> "ChatClient":
        clone = ChatClient(self.backend, policy, self.limiter, self._sleep)
        clone._rng = self._rng
        clone._lock = self._lock
        clone.captured = self.captured
        clone.usage_totals = self.usage_totals
        return clone

    def _record(self, capture: Capture, usage: dict | None = None) -> None:
        with self._lock:
            self.captured.append(capture)
            for k, v in (usage or {}).items():
                if isinstance(v, int):
                    self.usage_totals[k] += v

    def complete(self, req: ChatRequest) -> ChatResponse:
        body = req.body()
        attempt = 0
        while True:
            attempt += 1
            if self.limiter is not None:
                self.limiter.acquire()
            try:
                status, raw = self.backend.send(body)
            except BackendUnavailable as exc:
                status, raw = None, str(exc).encode()
            if status is not None and 200 <= status < 300:
                try:
                    data = json.loads(raw)
                    text = data["choices"][0]["message"]["content"] or ""
                except (ValueError, KeyError, IndexError, TypeError):
                    self._record(Capture(body, status, raw, attempt))
                    raise ProviderError(status, "malformed completion body: " + raw[:200].decode(errors="replace"))
                usage = data.get("usage") or {}
                self._record(Capture(body, status, raw, attempt), usage)
                return ChatResponse(text=text, usage=usage, retry_count=attempt - 1, request_body=body)
            excerpt = raw[:500].decode("utf-8", errors="replace")
            if status is not None and status not in self.retry.retry_statuses:
                self._record(Capture(body, status, raw, attempt))
                raise ProviderError(status, excerpt)
            if attempt >= self.retry.max_attempts:
                self._record(Capture(body, status, raw, attempt))
                if status == 429:
                    raise RateLimited(f"rate limited after {attempt} attempts")
                reason = f"HTTP {status}" if status is not None else excerpt
                raise TransportError(f"{reason} after {attempt} attempts")
            with self._lock:
                jitter = self._rng.uniform(0, self.retry.jitter) if self.retry.jitter else 0.0
            delay = self.retry.delay(attempt) + jitter
            log.info("retrying after %s (attempt %d, sleeping %.2fs)", status, attempt, delay)
            self._sleep(delay)

    def ask(self, model: str, system_prompt: str, user: str, temperature: float = 0.0,
            max_tokens: int = 1024, seed: int | None = None) -> str:
        req = ChatRequest(model, system_prompt, (("user", user),), temperature, max_tokens, seed)
        return self.complete(req).text

    def save_log(self, path: str | os.PathLike) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with self._lock, open(path, "w", encoding="utf-8") as fh:
            for c in self.captured:
                fh.write(json.dumps(c.to_dict(), ensure_ascii=False) + "\n")


def chat_complete(req: ChatRequest, backend: Backend | ChatClient) -> ChatResponse:
    client = backend if isinstance(backend, ChatClient) else ChatClient(backend)
    return client.complete(req)


def backoff_schedule(policy: RetryPolicy) -> list[float]:
    """Jitter-free delays slept between attempts."""
    return [policy.delay(a) for a in range(1, policy.max_attempts)]
