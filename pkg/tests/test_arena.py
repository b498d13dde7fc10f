import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoa_harness.arena import (
    ArenaConfig,
    BuyerState,
    Decision,
    FixedPriceSeller,
    LLMBuyer,
    LLMSeller,
    NegotiationSession,
    RandomSeller,
    Reflection,
    ScheduleSeller,
    StrategyContext,
    apply_reflection,
    arena_metrics,
    buyer_decide,
    offer_price_series,
    parse_seller_line,
    render_transcript,
    run_session,
)
from aoa_harness.errors import BudgetExhausted, FormatError, MalformedOffer, TransportError
from aoa_harness.client import Rule
from helpers import arena_violations, scripted

CFG = ArenaConfig()


def decide(offer, budget=260.0, **state):
    return buyer_decide(offer, BuyerState(budget, **state), CFG)


def test_buyer_thresholds():
    assert decide(50).kind is Decision.ACCEPT
    assert decide(80).kind is Decision.REJECT
    d = decide(62)
    assert d.kind is Decision.COUNTER and d.price == 57


def test_counter_floor_is_unit_cost():
    assert decide(53.0 + 2).price == 50


def test_accept_deducts_budget_and_raises_when_short():
    state = BuyerState(100.0)
    buyer_decide(54, state, CFG)
    assert state.remaining_budget == 46
    with pytest.raises(BudgetExhausted):
        buyer_decide(54, state, CFG)


def test_compromise_after_counter():
    assert decide(58, last_offer=62, last_counter=57).kind is Decision.ACCEPT
    assert decide(60, last_offer=62, last_counter=57).kind is Decision.COUNTER


def test_config_validation():
    with pytest.raises(ValueError):
        ArenaConfig(accept_below=45)
    with pytest.raises(ValueError):
        ArenaConfig(seller_target=80)


def test_four_deals_at_54():
    s = run_session(CFG, FixedPriceSeller(54))
    assert [i.final_price for i in s.items] == [54] * 4
    assert s.total_profit == 16
    m = arena_metrics([s])
    assert (m.total_profit, m.avg_profit_per_item, m.success_rate, m.avg_turns) == (16, 4.0, 1.0, 1.0)


def test_always_80_rejects_immediately():
    s = run_session(CFG, FixedPriceSeller(80))
    assert all(not i.closed and i.n_turns == 1 and i.end_reason == "rejected" for i in s.items)
    assert arena_metrics([s]).total_profit == 0


def test_compromise_path_profit_8():
    s = run_session(ArenaConfig(n_items=1), ScheduleSeller([62, 58]))
    item = s.items[0]
    assert [(t.action, t.price) for t in item.turns] == [
        ("offer", 62), ("Counter", 57), ("offer", 58), ("Accept", 58)]
    assert item.profit == 8


def test_seller_accepts_counter():
    s = run_session(ArenaConfig(n_items=1), ScheduleSeller([70, "accept"]))
    assert s.items[0].final_price == 65 and s.items[0].end_reason == "counter_accepted"


def test_turn_limit():
    s = run_session(ArenaConfig(n_items=1, max_turns_per_item=3), FixedPriceSeller(70))
    assert s.items[0].end_reason == "turn_limit" and s.items[0].n_turns == 3


def test_budget_runs_out():
    s = run_session(ArenaConfig(buyer_budget=120), FixedPriceSeller(54))
    assert [i.closed for i in s.items] == [True, True, False, False]
    assert s.items[2].end_reason == "budget"
    assert arena_violations(s) == []


def test_metrics_half_closed_and_empty():
    s = run_session(CFG, ScheduleSeller([54]))
    half = NegotiationSession(CFG, s.items[:2] + run_session(ArenaConfig(n_items=2), FixedPriceSeller(80)).items)
    assert arena_metrics([half]).success_rate == 0.5
    empty = arena_metrics([])
    assert empty.total_profit == empty.success_rate == empty.avg_turns == 0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6))
def test_random_sessions_sound(seed):
    s = run_session(CFG, RandomSeller(seed))
    assert arena_violations(s) == []
    again = run_session(CFG, RandomSeller(seed))
    assert s.to_json() == again.to_json()


def test_session_round_trip():
    s = run_session(CFG, RandomSeller(5), session_id="s5")
    assert NegotiationSession.from_dict(json.loads(s.to_json())) == s


def test_offer_series_uses_closed_items_only():
    s = run_session(ArenaConfig(n_items=2), ScheduleSeller([62, 58]))
    r = run_session(ArenaConfig(n_items=1), FixedPriceSeller(90))
    assert offer_price_series([s, r]) == [(1, 62.0, 2), (2, 58.0, 2)]


@pytest.mark.parametrize("text,move", [
    ("Let's say $60.\nOFFER: $60", ("offer", 60.0)),
    ("Fine.\nACCEPT", ("accept", None)),
    ("I could go to $61.50 at most", ("offer", 61.5)),
    ("no numbers", None),
])
def test_parse_seller_line(text, move):
    assert parse_seller_line(text) == move


def test_llm_seller_retries_then_fails():
    client = scripted(default=["We should talk.", "Still no price."])
    with pytest.raises(MalformedOffer):
        run_session(ArenaConfig(n_items=1), LLMSeller(client))
    assert len(client.captured) == 2


def test_llm_seller_and_buyer():
    client = scripted([("Sales Representative", ["OFFER: $62", "OFFER: $58"], (), "system"),
                       ("tough Buyer", "COUNTER: $52", (), "system")], default="x")
    s = run_session(ArenaConfig(n_items=1), LLMSeller(client), LLMBuyer(client))
    item = s.items[0]
    # the seller sticks at 58, which never reaches the midpoint of 58 and 52
    assert item.end_reason == "turn_limit" and item.n_turns == 8
    assert {t.price for t in item.turns if t.side == "buyer"} == {52}


def _history():
    return run_session(ArenaConfig(n_items=1), FixedPriceSeller(54)).items


def test_reflection_none_unchanged():
    ctx = StrategyContext("keep")
    assert apply_reflection(Reflection.NONE, _history(), None, ctx) is ctx


def test_reflection_tas_segments():
    client = scripted(default="some reflection")
    ctx = apply_reflection("tas", _history(), client)
    labels = [label for label, _ in ctx.reflections[0].segments]
    assert labels == ["ACTOR full_dialectic", "REVIEWER full_dialectic", "COMBINED"]
    assert ctx.preamble == "some reflection"
    assert len(client.captured) == 3


def test_reflection_solo_and_dual_call_counts():
    client = scripted(default="r")
    apply_reflection("solo", _history(), client)
    assert len(client.captured) == 1
    apply_reflection("dual", _history(), client)
    assert len(client.captured) == 3


def test_tas_empty_segment_is_format_error():
    client = scripted([Rule(lambda req: req.system_prompt.startswith("Combine the"), "  ")],
                      default="fine")
    with pytest.raises(FormatError) as exc:
        apply_reflection("tas", _history(), client)
    assert exc.value.side == "combined"


def test_dual_transport_failure_names_side():
    client = scripted([Rule("You are the Sales Director", "x", (503,) * 5, "system")], default="ok")
    with pytest.raises(TransportError) as exc:
        run_session(ArenaConfig(n_items=2, reflection=Reflection.DUAL), FixedPriceSeller(54), reflection_client=client)
    assert exc.value.side == "reviewer"


def test_transcript_shape():
    client = scripted(default="lower the opening price")
    s = run_session(ArenaConfig(n_items=2, reflection=Reflection.TAS), FixedPriceSeller(54), reflection_client=client)
    text = render_transcript(s)
    assert "ROUND 1" in text and "--- COMBINED ---" in text and "TAS REFLECTION (post round 1)" in text
