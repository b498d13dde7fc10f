"""Tables, CSV files and static plots built from results files alone."""

from __future__ import annotations

import csv
import enum
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from statistics import mean
from typing import Sequence

from .arena import NegotiationSession, arena_metrics, offer_price_series
from .model import ResultEnvelope, RunHeader, read_results
from .probe import PairedOutcome, aggregate_metrics
from .reward import RewardBreakdown


class ReportFormat(str, enum.Enum):
    TABLE = "table"
    CSV = "csv"
    PLOT = "plot"


PROBE_COLUMNS = ("model", "pairing", "mode", "V-AOA", "R-AOA", "Int.", "Ext.", "Flip",
                 "Invalid", "N", "flip_rate", "acc")
REWARD_COLUMNS = ("weights", "n", "mean_r1", "mean_r2", "mean_r3", "mean_total", "max_total")
ARENA_COLUMNS = ("reflection", "sessions", "items", "deals", "total_profit", "avg_profit_per_item",
                 "avg_profit_per_deal", "avg_profit_per_turn", "avg_turns", "success_rate")
SERIES_COLUMNS = ("reflection", "turn", "avg_offer", "n")


@dataclass
class ReportData:
    config_hashes: list[str] = field(default_factory=list)
    probe_rows: list[dict] = field(default_factory=list)
    reward_rows: list[dict] = field(default_factory=list)
    reward_totals: dict[str, list[float]] = field(default_factory=dict)
    arena_rows: list[dict] = field(default_factory=list)
    series_rows: list[dict] = field(default_factory=list)

    @property
    def config_hash(self) -> str:
        return ",".join(self.config_hashes) or "none"

    @property
    def empty(self) -> bool:
        return not (self.probe_rows or self.reward_rows or self.arena_rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def summarize(envelopes: Sequence[ResultEnvelope]) -> ReportData:
    data = ReportData()
    probes: dict[tuple, list[PairedOutcome]] = defaultdict(list)
    rewards: dict[tuple, list[RewardBreakdown]] = defaultdict(list)
    sessions: dict[str, list[NegotiationSession]] = defaultdict(list)
    for env in envelopes:
        if env.config_hash and env.config_hash not in data.config_hashes:
            data.config_hashes.append(env.config_hash)
        p = env.payload
        if isinstance(p, PairedOutcome):
            probes[(p.model, p.pairing or "", p.mode.value)].append(p)
        elif isinstance(p, RewardBreakdown):
            rewards[p.weights].append(p)
        elif isinstance(p, NegotiationSession):
            sessions[p.config.reflection.value].append(p)
        elif isinstance(p, RunHeader) and p.config_hash not in data.config_hashes:
            data.config_hashes.append(p.config_hash)

    for (model, pairing, mode), outs in probes.items():
        m = aggregate_metrics(outs)
        data.probe_rows.append({
            "model": model, "pairing": pairing, "mode": mode,
            "V-AOA": m.n_vaoa, "R-AOA": m.n_raoa, "Int.": m.n_internal, "Ext.": m.n_external,
            "Flip": m.flip, "Invalid": m.n_invalid, "N": m.n_total,
            "flip_rate": m.flip_rate, "acc": m.acc,
        })
    for weights, rs in rewards.items():
        label = ":".join(f"{w:g}" for w in weights)
        totals = [r.total for r in rs]
        data.reward_totals[label] = totals
        data.reward_rows.append({
            "weights": label, "n": len(rs),
            "mean_r1": mean(r.r1_format for r in rs),
            "mean_r2": mean(r.r2_attribution for r in rs),
            "mean_r3": mean(r.r3_answer for r in rs),
            "mean_total": mean(totals), "max_total": max(totals),
        })
    for mode, ss in sessions.items():
        m = arena_metrics(ss)
        data.arena_rows.append({
            "reflection": mode, "sessions": m.n_sessions, "items": m.n_items, "deals": m.n_deals,
            "total_profit": m.total_profit, "avg_profit_per_item": m.avg_profit_per_item,
            "avg_profit_per_deal": m.avg_profit_per_deal, "avg_profit_per_turn": m.avg_profit_per_turn,
            "avg_turns": m.avg_turns, "success_rate": m.success_rate,
        })
        for turn, avg, n in offer_price_series(ss):
            data.series_rows.append({"reflection": mode, "turn": turn, "avg_offer": avg, "n": n})
    return data


def _markdown_table(columns: Sequence[str], rows: Sequence[dict]) -> str:
    head = "| " + " | ".join(columns) + " |"
    sep = "|" + "|".join("---" for _ in columns) + "|"
    body = ["| " + " | ".join(_fmt(r[c]) for c in columns) + " |" for r in rows]
    return "\n".join([head, sep, *body])


def render_markdown(data: ReportData) -> str:
    parts = ["# Harness report", "", f"config_hash: {data.config_hash}", ""]
    if data.empty:
        parts += ["No results.", ""]
    if data.probe_rows:
        cols = ("Model", "Pairing", "Mode", "V-AOA", "R-AOA", "Int.", "Ext.", "Flip", "Invalid", "N",
                "Flip rate", "Acc")
        rows = [dict(zip(cols, (r[c] for c in PROBE_COLUMNS))) for r in data.probe_rows]
        parts += ["## Attribution probe", "", _markdown_table(cols, rows), ""]
    if data.reward_rows:
        parts += ["## Reward", "", _markdown_table(REWARD_COLUMNS, data.reward_rows), ""]
    if data.arena_rows:
        parts += ["## Sales arena", "", _markdown_table(ARENA_COLUMNS, data.arena_rows), ""]
    if data.series_rows:
        parts += ["### Average seller offer by turn (closed items)", "",
                  _markdown_table(SERIES_COLUMNS, data.series_rows), ""]
    return "\n".join(parts)


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict], config_hash: str) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("config_hash", *columns))
        for r in rows:
            w.writerow((config_hash, *(_fmt(r[c]) for c in columns)))
    return path


def _write_csvs(data: ReportData, out_dir: Path) -> list[Path]:
    h = data.config_hash
    return [
        _write_csv(out_dir / "probe_summary.csv", PROBE_COLUMNS, data.probe_rows, h),
        _write_csv(out_dir / "reward_summary.csv", REWARD_COLUMNS, data.reward_rows, h),
        _write_csv(out_dir / "arena_summary.csv", ARENA_COLUMNS, data.arena_rows, h),
        _write_csv(out_dir / "arena_offer_series.csv", SERIES_COLUMNS, data.series_rows, h),
    ]


def _write_plots(data: ReportData, out_dir: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    meta = {"Description": f"config_hash={data.config_hash}"}
    out = []

    def save(fig, name):
        fig.text(0.99, 0.01, f"config {data.config_hash}", ha="right", fontsize=6, color="gray")
        path = out_dir / name
        fig.savefig(path, dpi=120, metadata=meta)
        plt.close(fig)
        out.append(path)

    if data.series_rows:
        fig, ax = plt.subplots(figsize=(6, 4))
        for mode in dict.fromkeys(r["reflection"] for r in data.series_rows):
            pts = [(r["turn"], r["avg_offer"]) for r in data.series_rows if r["reflection"] == mode]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=mode)
        ax.set_xlabel("turn")
        ax.set_ylabel("average offer ($)")
        ax.legend()
        save(fig, "arena_offer_prices.png")
    if data.probe_rows:
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = [f"{r['model']}\n{r['pairing']}" for r in data.probe_rows]
        bottom = [0.0] * len(labels)
        for col in ("V-AOA", "R-AOA", "Int.", "Ext.", "Invalid"):
            vals = [r[col] for r in data.probe_rows]
            ax.bar(labels, vals, bottom=bottom, label=col)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel("count")
        ax.legend(fontsize=7)
        save(fig, "probe_categories.png")
    if data.reward_totals:
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, totals in data.reward_totals.items():
            ax.hist(totals, bins=min(20, max(1, len(set(totals)))), alpha=0.6, label=label)
        ax.set_xlabel("total reward")
        ax.legend(title="weights")
        save(fig, "reward_totals.png")
    return out


def render_report(
    results: str | Path | Sequence[ResultEnvelope],
    fmt: ReportFormat | str = ReportFormat.TABLE,
    out_dir: str | Path | None = None,
) -> tuple[str, list[Path]]:
    """Build the report; returns the markdown text and any files written.

    ``results`` is a results file or already-loaded envelopes.  Files are
    only written when ``out_dir`` is given (plot and csv formats need it).
    """
    fmt = ReportFormat(fmt)
    envelopes = read_results(results) if isinstance(results, (str, Path)) else list(results)
    data = summarize(envelopes)
    text = render_markdown(data)
    paths: list[Path] = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if fmt is ReportFormat.TABLE:
            (out / "report.md").write_text(text, encoding="utf-8")
            paths.append(out / "report.md")
        else:
            paths += _write_csvs(data, out)
            if fmt is ReportFormat.PLOT:
                paths += _write_plots(data, out)
    return text, paths

