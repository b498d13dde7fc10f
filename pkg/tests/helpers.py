"""Shared strategies, oracles and client builders for the test suite."""

from __future__ import annotations

import json
import math
import re
import string
from pathlib import Path

from hypothesis import strategies as st

from aoa_harness.client import ChatClient, RetryPolicy, Rule, ScriptedBehavior
from aoa_harness.model import AttributionLabel
from aoa_harness.tas import ActionKind, TasAction, TasTrace

FIXTURES = Path(__file__).parent / "fixtures"


def scripted(rules=(), default="External", retry: RetryPolicy | None = None) -> ChatClient:
    rules = [r if isinstance(r, Rule) else Rule(*r) for r in rules]
    if not isinstance(default, (str, Rule)):
        default = Rule(None, default)
    backend = ScriptedBehavior(rules, default=default)
    return ChatClient(backend, retry or RetryPolicy(base_delay=0, jitter=0), sleep=lambda s: None)


def fixture_client() -> ChatClient:
    backend = ScriptedBehavior.from_file(FIXTURES / "scripted_rules.json")
    return ChatClient(backend, RetryPolicy(base_delay=0, jitter=0), sleep=lambda s: None)


# --------------------------------------------------------------------------
# TAS strategies

_SEG_ALPHABET = st.characters(
    blacklist_categories=("Cs", "Cc"), blacklist_characters="<>"
) | st.just("\n")


def _trimmed(alphabet, min_size=1, max_size=60):
    return (
        st.text(alphabet, min_size=min_size, max_size=max_size)
        .map(str.strip)
        .filter(bool)
    )


segments = _trimmed(_SEG_ALPHABET)
search_queries = _trimmed(st.characters(blacklist_categories=("Cs", "Cc", "Zl", "Zp")), max_size=40)
revise_code = _trimmed(st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\x0b\x0c\x1c\x1d\x1e\x85") | st.just("\n"), max_size=80)

actions = st.one_of(
    st.just(TasAction(ActionKind.CONFIRM)),
    search_queries.map(lambda q: TasAction(ActionKind.SEARCH, q)),
    revise_code.map(lambda c: TasAction(ActionKind.REVISE, c)),
)

tas_traces = st.builds(
    TasTrace,
    thesis=segments,
    antithesis=segments,
    synthesis=segments,
    attribution=st.sampled_from(list(AttributionLabel)),
    action=actions,
)


# --------------------------------------------------------------------------
# labeler oracle (written independently of the library comparator)

_NUM = re.compile(r"^\s*(-?)\s*\$?\s*(\d[\d,]*\.?\d*|\.\d+)\s*(%?)\s*$")


def oracle_number(text: str):
    m = _NUM.match(text)
    if not m:
        return None
    value = float(m.group(2).replace(",", ""))
    if m.group(1):
        value = -value
    return value, bool(m.group(3))


def oracle_equal(pred: str, gold: str) -> bool:
    a, b = oracle_number(pred), oracle_number(gold)
    if a is not None and b is not None:
        cands_a = {a[0], a[0] / 100} if a[1] else {a[0]}
        cands_b = {b[0], b[0] / 100} if b[1] else {b[0]}
        return any(x == y or abs(x - y) <= 1e-4 * max(abs(x), abs(y)) for x in cands_a for y in cands_b)
    norm = lambda s: " ".join(s.lower().split())  # noqa: E731
    return norm(pred) == norm(gold)


def oracle_label(retrieved: set[str], gold_ids: set[str], pred: str, gold: str) -> AttributionLabel:
    covered = all(g in retrieved for g in gold_ids)
    if not covered:
        return AttributionLabel.FALSE_EXT
    return AttributionLabel.TRUE if oracle_equal(pred, gold) else AttributionLabel.FALSE_INT


# --------------------------------------------------------------------------
# arena invariant checker


def arena_violations(session) -> list[str]:
    """Check a session's log against the buyer's hard rules."""
    cfg = session.config
    out = []
    spent = 0.0
    for item in session.items:
        tag = f"item {item.index}"
        seller_moves = [t for t in item.turns if t.side == "seller"]
        if len(seller_moves) > cfg.max_turns_per_item:
            out.append(f"{tag}: {len(seller_moves)} turns")
        countered = False
        last_offer = None
        for t in item.turns:
            if t.side == "seller" and t.action == "offer":
                if not t.price > 0:
                    out.append(f"{tag}: non-positive offer")
                last_offer = t.price
            elif t.side == "seller" and t.action == "accept_counter":
                if not countered:
                    out.append(f"{tag}: seller accepted without a counter")
            elif t.action == "Counter":
                countered = True
                if not t.price < last_offer:
                    out.append(f"{tag}: counter {t.price} not below offer {last_offer}")
            elif t.action == "Accept":
                if not countered and not t.price < cfg.accept_below:
                    out.append(f"{tag}: accepted {t.price} without bargaining")
                if t.price > cfg.reject_above:
                    out.append(f"{tag}: accepted above reject threshold")
            elif t.action == "Reject":
                over = last_offer > cfg.reject_above
                broke = spent + last_offer > cfg.buyer_budget
                if not (over or broke):
                    out.append(f"{tag}: reject of {last_offer} unexplained")
        if item.closed:
            spent += item.final_price
            if spent > cfg.buyer_budget + 1e-9:
                out.append(f"{tag}: budget overrun {spent}")
            if not math.isclose(item.profit, item.final_price - cfg.unit_cost):
                out.append(f"{tag}: profit identity broken")
        elif item.profit != 0:
            out.append(f"{tag}: profit on unclosed item")
    total = sum(i.final_price - cfg.unit_cost for i in session.items if i.closed)
    if not math.isclose(session.total_profit, total, abs_tol=1e-9):
        out.append("session profit identity broken")
    return out


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


PRINTABLE = string.ascii_letters + string.digits + " .,;:!?'-"
