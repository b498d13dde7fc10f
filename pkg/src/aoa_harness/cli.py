"""Command-line entry point.

Exit status: 0 on success, 1 on usage or validation errors, 2 when the
model endpoint could not be reached within the retry budget.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .arena import (
    FixedPriceSeller,
    LLMBuyer,
    LLMSeller,
    RandomSeller,
    Reflection,
    ScheduleSeller,
    ScriptedBuyer,
    arena_metrics,
    render_transcript,
    run_session,
)
from .client import ChatClient, HttpBackend, RetryPolicy, ScriptedBehavior, TokenBucket
from .config import RunConfig, config_hash, load_config
from .datagen import convergence_filter, generate_corpus, synthesize_tas_pair
from .errors import HarnessError, ProviderError, TransportError, UsageError
from .labeler import LabeledCase, assign_label, check_split_counts, label_counts
from .model import (
    Domain,
    Pairing,
    Reject,
    ResultEnvelope,
    ResultStore,
    RunHeader,
    iter_jsonl,
    load_cases,
    load_records,
    load_traces,
    write_jsonl,
)
from .probe import ProbeMode, aggregate_metrics, run_case_probe, run_paired_probe, run_probes
from .report import ReportFormat, render_report
from .reward import WEIGHT_PRESETS, RewardWeights, composite_reward

log = logging.getLogger("aoa_harness")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_usage()}")


# --------------------------------------------------------------------------
# plumbing


class Context:
    """Effective config plus lazily built client and output helpers."""

    def __init__(self, args: argparse.Namespace):
        base = load_config(args.config)
        self.config: RunConfig = base.with_overrides(
            endpoint=args.endpoint,
            model=args.model,
            script=args.script,
            out_dir=args.out_dir,
            seed=args.seed,
            parallel=getattr(args, "parallel", None),
        )
        self.command = args.command + (f" {args.what}" if getattr(args, "what", None) else "")
        self.hash = config_hash(self.config)
        self.run_id = hashlib.sha256(f"{self.command}:{self.hash}".encode()).hexdigest()[:12]
        self._client: ChatClient | None = None

    @property
    def model(self) -> str:
        return self.config.resolve_model()

    def path(self, p: str) -> Path:
        out = Path(p)
        return out if out.is_absolute() else Path(self.config.out_dir) / out

    def client(self) -> ChatClient:
        if self._client is None:
            cfg = self.config
            if cfg.endpoint == "scripted":
                if not cfg.script:
                    raise UsageError("--endpoint scripted needs --script RULES.json")
                backend = ScriptedBehavior.from_file(cfg.script)
            else:
                backend = HttpBackend(cfg.endpoint)
            r = cfg.retry
            limiter = TokenBucket(r.rate_per_sec) if r.rate_per_sec else None
            self._client = ChatClient(backend, RetryPolicy(r.max_attempts, r.base_delay, r.jitter, r.max_delay),
                                      limiter, seed=cfg.seed)
        return self._client

    def store(self, p: str) -> ResultStore:
        path = self.path(p)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("", encoding="utf-8")
        store = ResultStore(path)
        store.append(self.envelope(RunHeader(self.command, self.config.to_dict(), self.hash)))
        return store

    def envelope(self, payload) -> ResultEnvelope:
        return ResultEnvelope(payload, self.run_id, config_hash=self.hash)

    def save_capture_log(self) -> None:
        if self._client is not None and self._client.captured:
            self._client.save_log(self.path("requests.log.jsonl"))


def _report_rejects(path: str, rejects: list[Reject]) -> None:
    for r in rejects:
        print(f"{path}:{r.line}: skipped ({r.reason})", file=sys.stderr)


def _load_labeled(path: str) -> list[LabeledCase]:
    rejects: list[Reject] = []
    out = load_records(path, LabeledCase.from_dict, rejects)
    _report_rejects(path, rejects)
    return out


# --------------------------------------------------------------------------
# subcommands


def cmd_probe(args, ctx: Context) -> int:
    mode = ProbeMode(args.mode)
    client = ctx.client()
    cfg = ctx.config
    golds = None
    if args.traces:
        if mode is not ProbeMode.FORCED_CHOICE:
            raise UsageError("--traces runs in forced-choice mode; use --cases for dual-view/tas")
        rejects: list[Reject] = []
        items = load_traces(args.traces, rejects)
        _report_rejects(args.traces, rejects)

        def probe(t):
            return run_paired_probe(t, client, ctx.model, cfg.temperature, seed=cfg.seed)
    else:
        if mode is ProbeMode.FORCED_CHOICE:
            raise UsageError("--cases needs --mode dual-view or tas")
        items = _load_labeled(args.cases)
        golds = {lc.case_id: lc.label for lc in items}

        def probe(lc):
            return run_case_probe(lc, client, ctx.model, mode, cfg.temperature, seed=cfg.seed)

    outcomes = run_probes(items, probe, cfg.parallel)
    with ctx.store(args.out) as store:
        for o in outcomes:
            store.append(ctx.envelope(o))
    summary = aggregate_metrics(outcomes, golds)
    print(json.dumps(summary.to_dict(), sort_keys=True))
    ctx.save_capture_log()
    return 0


def cmd_label(args, ctx: Context) -> int:
    rejects: list[Reject] = []
    cases = load_cases(args.cases, rejects)
    _report_rejects(args.cases, rejects)
    labeled = [assign_label(c) for c in cases]
    write_jsonl(ctx.path(args.out), (lc.to_dict() for lc in labeled))
    counts = {k.value: v for k, v in label_counts(labeled).items()}
    print(json.dumps({"n": len(labeled), **counts}, sort_keys=True))
    if args.check:
        dataset, _, split = args.check.partition(":")
        if not check_split_counts(labeled, dataset, split):
            print(f"label counts do not match the reference {args.check} split", file=sys.stderr)
            return 1
    return 0


def _rollouts(path: str) -> list[tuple[str, str]]:
    out = []
    for lineno, line in iter_jsonl(path):
        try:
            d = json.loads(line)
            text = d.get("text", d.get("completion"))
            if not isinstance(text, str):
                raise KeyError("text")
            out.append((str(d["case_id"]), text))
        except (ValueError, KeyError, AttributeError):
            raise UsageError(f"{path}:{lineno}: rollout needs case_id and text") from None
    return out


def cmd_reward_eval(args, ctx: Context) -> int:
    if args.preset:
        w = WEIGHT_PRESETS[args.preset]
    else:
        d = ctx.config.weights
        w = RewardWeights(
            d.alpha if args.alpha is None else args.alpha,
            d.beta if args.beta is None else args.beta,
            d.gamma if args.gamma is None else args.gamma,
        )
    cases = {lc.case_id: lc for lc in _load_labeled(args.cases)}
    rollouts = _rollouts(args.rollouts)
    totals = []
    with ctx.store(args.out) as store:
        for case_id, text in rollouts:
            if case_id not in cases:
                raise UsageError(f"rollout refers to unknown case {case_id!r}")
            lc = cases[case_id]
            b = composite_reward(text, lc.label, lc.case, w, query_match=args.query_match)
            totals.append(b.total)
            store.append(ctx.envelope(b))
    mean = sum(totals) / len(totals) if totals else 0.0
    print(json.dumps({"n": len(totals), "mean_total": mean, "weights": list(w.as_tuple())}))
    return 0


def _parse_domains(names: str) -> list[Domain]:
    if names == "all":
        return list(Domain)
    return [Domain.parse(s.strip()) for s in names.split(",") if s.strip()]


def cmd_datagen(args, ctx: Context) -> int:
    client = ctx.client()
    if args.what == "scenarios":
        pairings = list(Pairing) if args.pairing == "both" else [Pairing(args.pairing)]
        records = generate_corpus(_parse_domains(args.domains), args.per_domain, pairings,
                                  client, ctx.model, args.budget)
        with ctx.store(args.out) as store:
            for r in records:
                store.append(ctx.envelope(r))
        print(json.dumps({"scenarios": len(records)}))
    else:
        labeled = _load_labeled(args.cases)
        pairs = run_probes(labeled, lambda lc: synthesize_tas_pair(lc, client, ctx.model, seed=ctx.config.seed),
                           ctx.config.parallel)
        kept, dropped = convergence_filter(pairs) if args.filter else (pairs, [])
        with ctx.store(args.out) as store:
            for p in kept:
                store.append(ctx.envelope(p))
        reasons: dict[str, int] = {}
        for d in dropped:
            reasons[d.reason.value] = reasons.get(d.reason.value, 0) + 1
        print(json.dumps({"pairs": len(pairs), "kept": len(kept), "dropped": reasons}, sort_keys=True))
    ctx.save_capture_log()
    return 0


def _seller(choice: str, ctx: Context, seed: int):
    kind, _, arg = choice.partition(":")
    if kind == "random":
        return RandomSeller(seed)
    if kind == "fixed":
        return FixedPriceSeller(float(arg))
    if kind == "schedule":
        steps = [s if s == "accept" else float(s) for s in arg.split(",")]
        return ScheduleSeller(steps)
    if kind == "llm":
        return LLMSeller(ctx.client(), ctx.model, ctx.config.temperature, seed)
    raise UsageError(f"unknown seller {choice!r} (random, fixed:P, schedule:P1,P2,..., llm)")


def cmd_arena(args, ctx: Context) -> int:
    config = ctx.config.arena
    if args.reflection:
        config = replace(config, reflection=Reflection(args.reflection))
    seed = ctx.config.seed
    buyer = LLMBuyer(ctx.client(), ctx.model) if args.buyer == "endpoint" else ScriptedBuyer()
    needs_client = config.reflection is not Reflection.NONE
    sessions = []
    for i in range(args.sessions):
        seller = _seller(args.seller, ctx, seed + i)
        client = ctx.client() if needs_client else None
        sessions.append(run_session(config, seller, buyer, client, ctx.model, session_id=f"s{seed + i}"))
    with ctx.store(args.out) as store:
        for s in sessions:
            store.append(ctx.envelope(s))
    if args.transcript:
        text = "\n".join(f"=== SESSION {s.session_id} ===\n{render_transcript(s)}" for s in sessions)
        ctx.path(args.transcript).write_text(text, encoding="utf-8")
    print(json.dumps(arena_metrics(sessions).to_dict(), sort_keys=True))
    ctx.save_capture_log()
    return 0


def cmd_report(args, ctx: Context) -> int:
    fmt = ReportFormat(args.format)
    if args.report_dir:
        out_dir = ctx.path(args.report_dir)
    elif fmt is not ReportFormat.TABLE or args.out_dir:
        out_dir = Path(ctx.config.out_dir)
    else:
        # a bare table report only goes to stdout
        out_dir = None
    text, paths = render_report(args.inp, fmt, out_dir)
    print(text)
    for p in paths:
        print(f"wrote {p}", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML or JSON run config")
    common.add_argument("--out-dir", help="directory for all outputs (default: config or cwd)")
    common.add_argument("--endpoint", help="base URL of an OpenAI-compatible server, or 'scripted'")
    common.add_argument("--script", help="rules file for the scripted backend")
    common.add_argument("--model", help="model name or alias")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="aoa-harness", description="Run attribution-bias experiments against a chat "
                "endpoint or an offline script.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    sp = sub.add_parser("probe", parents=[common], help="paired actor/observer probe")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--traces", help="InteractionTrace JSONL")
    src.add_argument("--cases", help="LabeledCase JSONL (dual-view / tas modes)")
    sp.add_argument("--mode", choices=[m.value for m in ProbeMode], default="forced-choice")
    sp.add_argument("--parallel", type=int)
    sp.add_argument("--out", default="results.jsonl")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("label", parents=[common], help="assign attribution labels to cases")
    sp.add_argument("--cases", required=True)
    sp.add_argument("--out", default="labeled_cases.jsonl")
    sp.add_argument("--check", metavar="DATASET:SPLIT", help="compare counts with a reference split")
    sp.set_defaults(func=cmd_label)

    sp = sub.add_parser("reward-eval", parents=[common], help="score rollouts with the composite reward")
    sp.add_argument("--rollouts", required=True)
    sp.add_argument("--cases", required=True)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--preset", choices=sorted(WEIGHT_PRESETS))
    sp.add_argument("--query-match", action="store_true", help="Search credit only for a matching query")
    sp.add_argument("--out", default="rewards.jsonl")
    sp.set_defaults(func=cmd_reward_eval)

    sp = sub.add_parser("datagen", help="teacher-driven data synthesis")
    dsub = sp.add_subparsers(dest="what", parser_class=_Parser, required=True)
    d = dsub.add_parser("scenarios", parents=[common])
    d.add_argument("--domains", default="all")
    d.add_argument("--per-domain", type=int, default=10)
    d.add_argument("--pairing", choices=["human-agent", "agent-agent", "both"], default="both")
    d.add_argument("--budget", type=int, default=3)
    d.add_argument("--out", default="scenarios.jsonl")
    d.set_defaults(func=cmd_datagen)
    d = dsub.add_parser("tas", parents=[common])
    d.add_argument("--cases", required=True)
    d.add_argument("--parallel", type=int)
    d.add_argument("--no-filter", dest="filter", action="store_false")
    d.add_argument("--out", default="tas_pairs.jsonl")
    d.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("arena", parents=[common], help="run negotiation sessions")
    sp.add_argument("--reflection", choices=[r.value for r in Reflection])
    sp.add_argument("--sessions", type=int, default=1)
    sp.add_argument("--buyer", choices=["scripted", "endpoint"], default="scripted")
    sp.add_argument("--seller", default="random", help="random | fixed:P | schedule:P1,P2,... | llm")
    sp.add_argument("--out", default="arena.jsonl")
    sp.add_argument("--transcript", help="also write a readable transcript here")
    sp.set_defaults(func=cmd_arena)

    sp = sub.add_parser("report", parents=[common], help="tables and plots from a results file")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--format", choices=[f.value for f in ReportFormat], default="table")
    sp.add_argument("--report-dir", help="where report files go (default: --out-dir)")
    sp.set_defaults(func=cmd_report)
    return p


_PAIRING_ALIASES = {"human-agent": Pairing.HUMAN_AGENT.value, "agent-agent": Pairing.AGENT_AGENT.value}


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError(parser.format_help())
        if getattr(args, "pairing", None) in _PAIRING_ALIASES:
            args.pairing = _PAIRING_ALIASES[args.pairing]
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        ctx = Context(args)
        return args.func(args, ctx)
    except (TransportError, ProviderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (HarnessError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
