"""Sales Arena: turn-limited multi-item negotiation between a seller team and a buyer.

Items are negotiated one after another against a shared buyer budget.  Per
item the seller moves first every turn (an offer, or accepting the buyer's
latest counter) and the buyer answers offers with Accept / Counter / Reject.
The buyer's hard thresholds are enforced here whatever drives it:

* an offer below ``accept_below`` is accepted (budget permitting);
* an offer above ``reject_above`` is rejected outright;
* anything else is countered strictly below the offer.  After countering,
  the buyer also accepts a revised offer that comes down at least halfway
  from the seller's previous offer to the buyer's counter.

Between items the seller team may reflect on the last item (none / solo /
dual / tas); the reflection output becomes the seller's strategy preamble.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import re
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

from .client import ChatClient, ChatRequest
from .errors import BudgetExhausted, FormatError, FormatErrorKind, MalformedOffer, TransportError
from .model import register_payload
from .prompts import fill, load_prompt

log = logging.getLogger(__name__)


class Reflection(str, enum.Enum):
    NONE = "none"
    SOLO = "solo"
    DUAL = "dual"
    TAS = "tas"


@dataclass(frozen=True)
class ArenaConfig:
    n_items: int = 4
    buyer_budget: float = 260.0
    unit_cost: float = 50.0
    seller_target: float = 65.0
    accept_below: float = 55.0
    reject_above: float = 75.0
    max_turns_per_item: int = 8
    reflection: Reflection = Reflection.NONE
    concession_step: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "reflection", Reflection(self.reflection))
        if not self.unit_cost < self.accept_below <= self.seller_target <= self.reject_above:
            raise ValueError("need unit_cost < accept_below <= seller_target <= reject_above")
        if self.n_items < 1 or self.max_turns_per_item < 1:
            raise ValueError("n_items and max_turns_per_item must be >= 1")
        if self.concession_step <= 0 or self.buyer_budget <= 0:
            raise ValueError("concession_step and buyer_budget must be positive")

    def to_dict(self) -> dict:
        return {
            "n_items": self.n_items,
            "buyer_budget": self.buyer_budget,
            "unit_cost": self.unit_cost,
            "seller_target": self.seller_target,
            "accept_below": self.accept_below,
            "reject_above": self.reject_above,
            "max_turns_per_item": self.max_turns_per_item,
            "reflection": self.reflection.value,
            "concession_step": self.concession_step,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArenaConfig":
        return cls(**d)


# --------------------------------------------------------------------------
# buyer


class Decision(str, enum.Enum):
    ACCEPT = "Accept"
    COUNTER = "Counter"
    REJECT = "Reject"


@dataclass(frozen=True)
class BuyerDecision:
    kind: Decision
    price: float | None = None
    reason: str = ""


@dataclass
class BuyerState:
    remaining_budget: float
    last_offer: float | None = None
    last_counter: float | None = None

    def new_item(self) -> None:
        self.last_offer = None
        self.last_counter = None


CounterFn = Callable[[float, BuyerState], "float | None"]


def buyer_decide(
    offer: float,
    state: BuyerState,
    config: ArenaConfig,
    counter_fn: CounterFn | None = None,
) -> BuyerDecision:
    """Buyer's answer to ``offer``; mutates ``state`` (budget, last counter).

    ``counter_fn`` supplies the counter price in live mode; a missing or
    out-of-range proposal falls back to ``max(unit_cost, offer - step)``.
    """
    if offer <= 0:
        raise ValueError("offer must be positive")
    if offer > config.reject_above:
        return BuyerDecision(Decision.REJECT, offer, "above reject threshold")
    accept = offer < config.accept_below
    if not accept and state.last_counter is not None and state.last_offer is not None:
        accept = offer <= (state.last_offer + state.last_counter) / 2
    if accept:
        if offer > state.remaining_budget:
            raise BudgetExhausted(f"offer {offer} exceeds remaining budget {state.remaining_budget}")
        state.remaining_budget -= offer
        state.last_offer = offer
        return BuyerDecision(Decision.ACCEPT, offer)

    counter = counter_fn(offer, state) if counter_fn is not None else None
    if counter is None or not 0 < counter < offer:
        counter = max(config.unit_cost, offer - config.concession_step)
    counter = min(counter, state.remaining_budget)
    if counter <= 0:
        raise BudgetExhausted("no budget left to counter with")
    state.last_offer = offer
    state.last_counter = counter
    return BuyerDecision(Decision.COUNTER, counter)


class Buyer(Protocol):
    def decide(self, offer: float, state: BuyerState, config: ArenaConfig,
               item: int, history: str) -> BuyerDecision: ...


class ScriptedBuyer:
    def decide(self, offer, state, config, item, history):
        return buyer_decide(offer, state, config)


class LLMBuyer:
    """Buyer whose counter prices come from a model; thresholds stay hard."""

    def __init__(self, client: ChatClient, model: str = "default", temperature: float = 0.0):
        self.client = client
        self.model = model
        self.temperature = temperature

    def decide(self, offer, state, config, item, history):
        def counter_fn(o: float, st: BuyerState) -> float | None:
            prompt = fill(load_prompt("arena_buyer"), item=item + 1, n_items=config.n_items,
                          budget=_fmt(st.remaining_budget), offer=_fmt(o), history=history or "(none)")
            reply = self.client.ask(self.model, prompt, "Your reply:", self.temperature)
            move = parse_seller_line(reply)
            return move[1] if move and move[0] == "offer" else None

        return buyer_decide(offer, state, config, counter_fn)


# --------------------------------------------------------------------------
# seller


@dataclass(frozen=True)
class SellerMove:
    kind: str  # "offer" | "accept"
    price: float | None = None
    utterance: str = ""


@dataclass(frozen=True)
class Turn:
    side: str  # "seller" | "buyer"
    action: str  # offer | accept_counter | Accept | Counter | Reject
    price: float | None
    utterance: str

    def to_dict(self) -> dict:
        return {"side": self.side, "action": self.action, "price": self.price, "utterance": self.utterance}

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(d["side"], d["action"], d["price"], d["utterance"])


@dataclass(frozen=True)
class SellerView:
    item: int
    turns: tuple[Turn, ...]
    last_counter: float | None
    strategy: str
    config: ArenaConfig


class Seller(Protocol):
    def next_move(self, view: SellerView) -> SellerMove: ...


def _fmt(price: float) -> str:
    return f"{price:g}"


def _offer_line(price: float) -> str:
    return f"I can offer this item at ${_fmt(price)}.\nOFFER: ${_fmt(price)}"


class FixedPriceSeller:
    def __init__(self, price: float):
        self.price = price

    def next_move(self, view):
        return SellerMove("offer", self.price, _offer_line(self.price))


class ScheduleSeller:
    """Plays a fixed per-item schedule of prices and ``"accept"`` moves.

    The schedule restarts for each item; its last entry repeats.
    """

    def __init__(self, schedule: Sequence[float | str]):
        if not schedule:
            raise ValueError("empty schedule")
        self.schedule = list(schedule)

    def next_move(self, view):
        k = sum(1 for t in view.turns if t.side == "seller")
        step = self.schedule[min(k, len(self.schedule) - 1)]
        if step == "accept":
            return SellerMove("accept", view.last_counter, "Fine, we have a deal.\nACCEPT")
        return SellerMove("offer", float(step), _offer_line(float(step)))


class RandomSeller:
    """Seeded random seller used to stress the state machine."""

    def __init__(self, seed: int, accept_prob: float = 0.25):
        self.rng = random.Random(seed)
        self.accept_prob = accept_prob

    def next_move(self, view):
        cfg = view.config
        if view.last_counter is not None and self.rng.random() < self.accept_prob:
            return SellerMove("accept", view.last_counter, "Agreed.\nACCEPT")
        offers = [t.price for t in view.turns if t.side == "seller" and t.action == "offer"]
        if not offers:
            price = self.rng.randint(int(cfg.unit_cost) - 5, int(cfg.reject_above) + 10)
        else:
            price = offers[-1] + self.rng.choice([-6, -4, -3, -2, -1, 0, 1, 2])
        price = float(max(1, price))
        return SellerMove("offer", price, _offer_line(price))


_PRICE_RE = re.compile(r"\$\s*(\d+(?:\.\d+)?)")


def parse_seller_line(text: str) -> tuple[str, float | None] | None:
    """Read the final move line: ``ACCEPT`` or the last ``$<number>`` on it."""
    lines = [ln.strip() for ln in (text or "").strip().splitlines() if ln.strip()]
    if not lines:
        return None
    if re.fullmatch(r"\**ACCEPT\**\.?", lines[-1], re.IGNORECASE):
        return ("accept", None)
    for ln in reversed(lines):
        found = _PRICE_RE.findall(ln)
        if found:
            return ("offer", float(found[-1]))
    return None


class LLMSeller:
    def __init__(self, client: ChatClient, model: str = "default", temperature: float = 0.0,
                 seed: int | None = None):
        self.client = client
        self.model = model
        self.temperature = temperature
        self.seed = seed

    def next_move(self, view):
        cfg = view.config
        strategy = f"Strategy notes from your last review:\n{view.strategy}\n" if view.strategy else ""
        prompt = fill(load_prompt("arena_seller"), item=view.item + 1, n_items=cfg.n_items,
                      unit_cost=_fmt(cfg.unit_cost), target=_fmt(cfg.seller_target),
                      strategy=strategy, history=render_turns(view.turns) or "(no messages yet)")
        req = ChatRequest(self.model, prompt, (("user", "Your message:"),), self.temperature, 512, self.seed)
        reply = self.client.complete(req).text
        move = parse_seller_line(reply)
        if move is None or (move[0] == "accept" and view.last_counter is None):
            reminder = "End with a final line 'OFFER: $<price>'" + (
                " or 'ACCEPT'." if view.last_counter is not None else ".")
            reply = self.client.complete(req.followup(reply, reminder)).text
            move = parse_seller_line(reply)
        if move is None or (move[0] == "accept" and view.last_counter is None):
            raise MalformedOffer(f"no price in seller message: {reply[-120:]!r}")
        if move[0] == "accept":
            return SellerMove("accept", view.last_counter, reply.strip())
        if move[1] <= 0:
            raise MalformedOffer(f"non-positive offer {move[1]}")
        return SellerMove("offer", move[1], reply.strip())


# --------------------------------------------------------------------------
# session records


@dataclass(frozen=True)
class ItemOutcome:
    index: int
    turns: tuple[Turn, ...]
    closed: bool
    final_price: float | None
    profit: float
    end_reason: str

    @property
    def n_turns(self) -> int:
        return sum(1 for t in self.turns if t.side == "seller")

    @property
    def offers(self) -> list[float]:
        return [t.price for t in self.turns if t.side == "seller" and t.action == "offer"]

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "turns": [t.to_dict() for t in self.turns],
            "closed": self.closed,
            "final_price": self.final_price,
            "profit": self.profit,
            "end_reason": self.end_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ItemOutcome":
        return cls(d["index"], tuple(Turn.from_dict(t) for t in d["turns"]), d["closed"],
                   d["final_price"], d["profit"], d["end_reason"])


@dataclass(frozen=True)
class ReflectionRecord:
    after_item: int
    mode: Reflection
    segments: tuple[tuple[str, str], ...]

    def to_dict(self) -> dict:
        return {"after_item": self.after_item, "mode": self.mode.value,
                "segments": [list(s) for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "ReflectionRecord":
        return cls(d["after_item"], Reflection(d["mode"]), tuple(tuple(s) for s in d["segments"]))


@dataclass(frozen=True)
class StrategyContext:
    preamble: str = ""
    reflections: tuple[ReflectionRecord, ...] = ()


@register_payload
@dataclass(frozen=True)
class NegotiationSession:
    config: ArenaConfig
    items: tuple[ItemOutcome, ...]
    reflections: tuple[ReflectionRecord, ...] = ()
    session_id: str = ""

    @property
    def total_profit(self) -> float:
        return sum(i.profit for i in self.items)

    @property
    def spent(self) -> float:
        return sum(i.final_price for i in self.items if i.closed)

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "config": self.config.to_dict(),
            "items": [i.to_dict() for i in self.items],
            "reflections": [r.to_dict() for r in self.reflections],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NegotiationSession":
        return cls(
            config=ArenaConfig.from_dict(d["config"]),
            items=tuple(ItemOutcome.from_dict(i) for i in d["items"]),
            reflections=tuple(ReflectionRecord.from_dict(r) for r in d.get("reflections", [])),
            session_id=d.get("session_id", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)


# --------------------------------------------------------------------------
# running


def render_turns(turns: Sequence[Turn]) -> str:
    return "\n".join(f"[{t.side.upper()}] {t.utterance}" for t in turns)


def _buyer_utterance(d: BuyerDecision, offer: float) -> str:
    if d.kind is Decision.ACCEPT:
        return f"Deal at ${_fmt(d.price)}."
    if d.kind is Decision.COUNTER:
        return f"That's too high. I can only do ${_fmt(d.price)} for this item."
    if d.reason == "budget":
        return f"I can't afford ${_fmt(offer)} with what's left of my budget. No deal."
    return f"${_fmt(offer)} is far more than I'll pay. No deal."


def negotiate_item(
    index: int,
    config: ArenaConfig,
    seller: Seller,
    buyer: Buyer,
    state: BuyerState,
    strategy: str = "",
) -> ItemOutcome:
    state.new_item()
    turns: list[Turn] = []

    def done(closed: bool, price: float | None, reason: str) -> ItemOutcome:
        profit = price - config.unit_cost if closed else 0.0
        return ItemOutcome(index, tuple(turns), closed, price if closed else None, profit, reason)

    for _ in range(config.max_turns_per_item):
        view = SellerView(index, tuple(turns), state.last_counter, strategy, config)
        move = seller.next_move(view)
        if move.kind == "accept":
            if state.last_counter is None:
                raise MalformedOffer("seller accepted with no counter on the table")
            price = state.last_counter
            if price > state.remaining_budget:
                turns.append(Turn("seller", "accept_counter", price, move.utterance))
                return done(False, None, "budget")
            state.remaining_budget -= price
            turns.append(Turn("seller", "accept_counter", price, move.utterance))
            return done(True, price, "counter_accepted")

        offer = move.price
        if offer is None or offer <= 0:
            raise MalformedOffer(f"invalid offer {offer!r}")
        turns.append(Turn("seller", "offer", offer, move.utterance))
        try:
            decision = buyer.decide(offer, state, config, index, render_turns(turns))
        except BudgetExhausted:
            decision = BuyerDecision(Decision.REJECT, offer, "budget")
        turns.append(Turn("buyer", decision.kind.value, decision.price, _buyer_utterance(decision, offer)))
        if decision.kind is Decision.ACCEPT:
            return done(True, offer, "accepted")
        if decision.kind is Decision.REJECT:
            return done(False, None, "budget" if decision.reason == "budget" else "rejected")
    return done(False, None, "turn_limit")


def _call(client: ChatClient, model: str, prompt: str, side: str) -> str:
    try:
        text = client.ask(model, prompt, "Write your analysis.")
    except TransportError as exc:
        raise TransportError(str(exc), side=side) from exc
    return text.strip()


def apply_reflection(
    mode: Reflection | str,
    history: Sequence[ItemOutcome],
    client: ChatClient | None,
    context: StrategyContext = StrategyContext(),
    model: str = "default",
) -> StrategyContext:
    """Run one reflection round over the most recent item.

    TAS mode captures three segments (actor dialectic, reviewer dialectic,
    combined synthesis); each must be non-empty.  The last segment becomes
    the seller's strategy preamble.
    """
    mode = Reflection(mode)
    if mode is Reflection.NONE or not history:
        return context
    if client is None:
        raise ValueError(f"reflection mode {mode.value} needs a client")
    transcript = render_item_transcript(history[-1])

    if mode is Reflection.SOLO:
        solo = _call(client, model, fill(load_prompt("reflect_solo"), history=transcript), "actor")
        segments = (("ACTOR self_reflection", solo),)
        preamble = solo
    elif mode is Reflection.DUAL:
        actor = _call(client, model, fill(load_prompt("reflect_dual_actor"), history=transcript), "actor")
        reviewer = _call(client, model, fill(load_prompt("reflect_dual_reviewer"), history=transcript,
                                             actor=actor), "reviewer")
        segments = (("ACTOR", actor), ("REVIEWER", reviewer))
        preamble = f"Representative: {actor}\nDirector: {reviewer}"
    else:
        actor = _call(client, model, fill(load_prompt("reflect_tas_actor"), history=transcript), "actor")
        if not actor:
            raise FormatError(FormatErrorKind.MISSING_SEGMENT, "empty actor dialectic", side="actor")
        reviewer = _call(client, model, fill(load_prompt("reflect_tas_reviewer"), history=transcript),
                         "reviewer")
        if not reviewer:
            raise FormatError(FormatErrorKind.MISSING_SEGMENT, "empty reviewer dialectic", side="reviewer")
        combined = _call(client, model, fill(load_prompt("reflect_tas_combined"), actor=actor,
                                             reviewer=reviewer), "combined")
        if not combined:
            raise FormatError(FormatErrorKind.MISSING_SEGMENT, "empty combined synthesis", side="combined")
        segments = (("ACTOR full_dialectic", actor), ("REVIEWER full_dialectic", reviewer),
                    ("COMBINED", combined))
        preamble = combined

    record = ReflectionRecord(history[-1].index, mode, segments)
    return StrategyContext(preamble, context.reflections + (record,))


def run_session(
    config: ArenaConfig,
    seller: Seller,
    buyer: Buyer | None = None,
    reflection_client: ChatClient | None = None,
    model: str = "default",
    session_id: str = "",
) -> NegotiationSession:
    buyer = buyer or ScriptedBuyer()
    if reflection_client is None:
        reflection_client = getattr(seller, "client", None)
    state = BuyerState(config.buyer_budget)
    context = StrategyContext()
    items: list[ItemOutcome] = []
    for index in range(config.n_items):
        if index > 0:
            context = apply_reflection(config.reflection, items, reflection_client, context, model)
        items.append(negotiate_item(index, config, seller, buyer, state, context.preamble))
    return NegotiationSession(config, tuple(items), context.reflections, session_id)


# --------------------------------------------------------------------------
# metrics and rendering


@dataclass(frozen=True)
class ArenaMetrics:
    total_profit: float = 0.0
    avg_profit_per_item: float = 0.0
    avg_turns: float = 0.0
    success_rate: float = 0.0
    avg_profit_per_deal: float = 0.0
    avg_profit_per_turn: float = 0.0
    n_sessions: int = 0
    n_items: int = 0
    n_deals: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def arena_metrics(sessions: Sequence[NegotiationSession]) -> ArenaMetrics:
    items = [i for s in sessions for i in s.items]
    if not items:
        return ArenaMetrics(n_sessions=len(sessions))
    total = sum(i.profit for i in items)
    deals = sum(1 for i in items if i.closed)
    turns = sum(i.n_turns for i in items)
    return ArenaMetrics(
        total_profit=total,
        avg_profit_per_item=total / len(items),
        avg_turns=turns / len(items),
        success_rate=deals / len(items),
        avg_profit_per_deal=total / deals if deals else 0.0,
        avg_profit_per_turn=total / turns if turns else 0.0,
        n_sessions=len(sessions),
        n_items=len(items),
        n_deals=deals,
    )


def offer_price_series(sessions: Sequence[NegotiationSession]) -> list[tuple[int, float, int]]:
    """``(turn, mean seller offer, n)`` per turn index over items that closed."""
    sums: dict[int, list[float]] = {}
    for s in sessions:
        for item in s.items:
            if not item.closed:
                continue
            for k, price in enumerate(item.offers, start=1):
                sums.setdefault(k, []).append(price)
    return [(k, sum(v) / len(v), len(v)) for k, v in sorted(sums.items())]


def render_item_transcript(item: ItemOutcome) -> str:
    outcome = f"closed at ${_fmt(item.final_price)}" if item.closed else f"no deal ({item.end_reason})"
    return f"{render_turns(item.turns)}\n[RESULT] {outcome}, profit ${_fmt(item.profit)}"


def render_transcript(session: NegotiationSession) -> str:
    """Human-readable log: rounds, then the reflection segments after each."""
    by_item = {r.after_item: r for r in session.reflections}
    blocks = []
    for item in session.items:
        blocks.append(f"ROUND {item.index + 1}\n{render_item_transcript(item)}")
        ref = by_item.get(item.index)
        if ref is not None:
            body = "\n\n".join(f"--- {label} ---\n{text}" for label, text in ref.segments)
            blocks.append(f"{ref.mode.value.upper()} REFLECTION (post round {item.index + 1})\n{body}")
    return "\n\n".join(blocks) + "\n"


def with_reflection(config: ArenaConfig, mode: Reflection | str) -> ArenaConfig:
    return replace(config, reflection=Reflection(mode))
