"""Report output: JSON summary, a flat per-turn TSV, and figures.

The TSV has one row per scored turn (states and changes as compact JSON
columns) and is the input both for re-scoring and for the per-turn accuracy
curves rendered alongside it.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from sqldst.evaluation import EvalReport, TurnTrace, changes_match, states_match

REPORT_JSON = "report.json"
PER_TURN_TSV = "per_turn.tsv"
TRACES_JSONL = "traces.jsonl"
JGA_BY_TURN_PNG = "jga_by_turn.png"
PER_DOMAIN_PNG = "jga_per_domain.png"


def report_json_bytes(report: EvalReport) -> bytes:
    return (json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def write_per_turn_table(traces: list[TurnTrace], path) -> None:
    cols = ["dialogue_id", "turn_index", "gold_state", "pred_state", "gold_change",
            "pred_change", "state_correct", "change_correct", "error"]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(cols) + "\n")
        for t in traces:
            f.write("\t".join([
                t.dialogue_id,
                str(t.turn_index),
                json.dumps(t.gold_state, sort_keys=True),
                json.dumps(t.pred_state, sort_keys=True),
                json.dumps(t.gold_change, sort_keys=True),
                json.dumps(t.pred_change, sort_keys=True),
                str(int(states_match(t.pred_state, t.gold_state))),
                str(int(changes_match(t.pred_change, t.gold_change))),
                t.error or "",
            ]) + "\n")


def plot_jga_by_turn(report: EvalReport, path) -> None:
    rows = report.per_turn_index_jga
    if not rows:
        return
    idx = [r[0] for r in rows]
    state = [r[1] for r in rows]
    change = [r[2] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(idx, change, marker="o", label="state-change JGA")
    ax.plot(idx, state, marker="s", label="accumulated-state JGA")
    ax.set_xlabel("turn index")
    ax.set_ylabel("JGA")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_per_domain(report: EvalReport, path) -> None:
    if not report.jga_per_domain:
        return
    domains = list(report.jga_per_domain)
    rates = [report.jga_per_domain[d] for d in domains]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(domains, rates)
    ax.set_ylabel("per-domain JGA")
    ax.set_ylim(0, 1.02)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_report(report: EvalReport, outdir, traces: list[TurnTrace] | None = None,
                 figures: bool = True) -> Path:
    """Write report.json plus, when traces are given, the per-turn table,
    the raw trace file, and the figures. Returns the report path."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / REPORT_JSON
    report_path.write_bytes(report_json_bytes(report))
    if traces is not None:
        from sqldst.pipeline import save_traces

        write_per_turn_table(traces, out / PER_TURN_TSV)
        save_traces(traces, out / TRACES_JSONL)
    if figures:
        plot_jga_by_turn(report, out / JGA_BY_TURN_PNG)
        plot_per_domain(report, out / PER_DOMAIN_PNG)
    return report_path
