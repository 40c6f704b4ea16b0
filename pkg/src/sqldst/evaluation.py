"""Scoring: joint goal accuracy variants, slot-value F1, and the copy baseline.

States and changes compare as normalized sets, so scoring is invariant to
slot ordering and to spelling variants that the value normalizer folds
together. Gold values of "none" or "" count as slot-absent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from sqldst.retrieval import ExemplarPool, RetrievalQuery
from sqldst.state import DELETE_VALUE, apply_change, normalize_slot, normalize_state, normalize_value, split_slot


def _norm_change(change: dict[str, str]) -> dict[str, str]:
    out = {}
    for key, value in change.items():
        out[normalize_slot(key)] = value if value == DELETE_VALUE else normalize_value(value)
    return out


def states_match(pred: dict[str, str], gold: dict[str, str]) -> bool:
    """Exact-state equality up to normalization (the unit the JGA counts)."""
    return normalize_state(pred) == normalize_state(gold)


def changes_match(pred: dict[str, str], gold: dict[str, str]) -> bool:
    return _norm_change(pred) == _norm_change(gold)


def _check_aligned(preds, golds):
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")


def jga(preds: list[dict[str, str]], golds: list[dict[str, str]]) -> float:
    """Fraction of turns whose predicted state matches gold exactly."""
    _check_aligned(preds, golds)
    if not golds:
        return 1.0
    return sum(states_match(p, g) for p, g in zip(preds, golds)) / len(golds)


def _project(state: dict[str, str], domain: str) -> dict[str, str]:
    return {k: v for k, v in state.items() if split_slot(k)[0] == domain}


def per_domain_jga(preds, golds, domain: str, ont=None) -> float:
    """JGA after projecting onto one domain, over turns where either side is active.

    A domain active in no turn at all scores 1.0 (vacuously) over count 0.
    """
    if ont is not None and not ont.has_domain(domain):
        raise ValueError(f"unknown domain: {domain}")
    _check_aligned(preds, golds)
    hits = total = 0
    for p, g in zip(preds, golds):
        pp, gp = _project(normalize_state(p), domain), _project(normalize_state(g), domain)
        if not pp and not gp:
            continue
        total += 1
        hits += pp == gp
    return hits / total if total else 1.0


def per_domain_active_turns(preds, golds, domain: str) -> int:
    _check_aligned(preds, golds)
    return sum(
        bool(_project(normalize_state(p), domain) or _project(normalize_state(g), domain))
        for p, g in zip(preds, golds))


def change_jga(pred_changes, gold_changes) -> float:
    """Fraction of turns with exact state-change equality."""
    _check_aligned(pred_changes, gold_changes)
    if not gold_changes:
        return 1.0
    return sum(changes_match(p, g) for p, g in zip(pred_changes, gold_changes)) / len(gold_changes)


def slot_value_f1(preds, golds) -> float:
    """Micro-averaged F1 over (slot, value) pairs pooled across turns."""
    _check_aligned(preds, golds)
    matched = n_pred = n_gold = 0
    for p, g in zip(preds, golds):
        pp = set(normalize_state(p).items())
        gg = set(normalize_state(g).items())
        matched += len(pp & gg)
        n_pred += len(pp)
        n_gold += len(gg)
    if n_pred == 0 and n_gold == 0:
        return 0.0
    precision = matched / n_pred if n_pred else 0.0
    recall = matched / n_gold if n_gold else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class TurnTrace:
    """One scored turn; the unit the report, trace file, and plots build on."""

    dialogue_id: str
    turn_index: int
    gold_state: dict[str, str]
    pred_state: dict[str, str]
    gold_change: dict[str, str]
    pred_change: dict[str, str]
    raw_completion: str = ""
    error: str | None = None


@dataclass
class EvalReport:
    jga_all: float
    jga_per_domain: dict[str, float]
    change_jga: float
    slot_value_f1: float
    per_turn_index_jga: list[tuple[int, float, float, int]]  # (index, state, change, count)
    n_dialogues: int
    n_turns: int
    error_log: list[tuple[str, int, str]] = field(default_factory=list)
    vacuous: bool = False

    def to_dict(self) -> dict:
        return {
            "jga_all": self.jga_all,
            "jga_per_domain": self.jga_per_domain,
            "change_jga": self.change_jga,
            "slot_value_f1": self.slot_value_f1,
            "per_turn_index_jga": [list(row) for row in self.per_turn_index_jga],
            "n_dialogues": self.n_dialogues,
            "n_turns": self.n_turns,
            "error_log": [list(row) for row in self.error_log],
            "vacuous": self.vacuous,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalReport":
        return cls(
            jga_all=raw["jga_all"],
            jga_per_domain=dict(raw["jga_per_domain"]),
            change_jga=raw["change_jga"],
            slot_value_f1=raw["slot_value_f1"],
            per_turn_index_jga=[tuple(row) for row in raw["per_turn_index_jga"]],
            n_dialogues=raw["n_dialogues"],
            n_turns=raw["n_turns"],
            error_log=[tuple(row) for row in raw.get("error_log", [])],
            vacuous=raw.get("vacuous", False),
        )


def per_turn_index_stats(traces: list[TurnTrace]) -> list[tuple[int, float, float, int]]:
    """State and change JGA bucketed by position within the dialogue."""
    buckets: dict[int, list[TurnTrace]] = {}
    for tr in traces:
        buckets.setdefault(tr.turn_index, []).append(tr)
    rows = []
    for idx in sorted(buckets):
        group = buckets[idx]
        state_acc = sum(states_match(t.pred_state, t.gold_state) for t in group) / len(group)
        change_acc = sum(changes_match(t.pred_change, t.gold_change) for t in group) / len(group)
        rows.append((idx, state_acc, change_acc, len(group)))
    return rows


def build_report(traces: list[TurnTrace], domains: list[str] = ()) -> EvalReport:
    """Aggregate per-turn traces into the full report."""
    preds = [t.pred_state for t in traces]
    golds = [t.gold_state for t in traces]
    pred_changes = [t.pred_change for t in traces]
    gold_changes = [t.gold_change for t in traces]
    if not traces:
        return EvalReport(
            jga_all=1.0, jga_per_domain={d: 1.0 for d in domains}, change_jga=1.0,
            slot_value_f1=1.0, per_turn_index_jga=[], n_dialogues=0, n_turns=0,
            vacuous=True)
    return EvalReport(
        jga_all=jga(preds, golds),
        jga_per_domain={d: per_domain_jga(preds, golds, d) for d in domains},
        change_jga=change_jga(pred_changes, gold_changes),
        slot_value_f1=slot_value_f1(preds, golds),
        per_turn_index_jga=per_turn_index_stats(traces),
        n_dialogues=len({t.dialogue_id for t in traces}),
        n_turns=len(traces),
        error_log=[(t.dialogue_id, t.turn_index, t.error) for t in traces if t.error],
    )


def copy_baseline(pool: ExemplarPool, retriever, test_dialogues,
                  representation: str = "prev_state_plus_turn",
                  domains: list[str] = ()) -> EvalReport:
    """Predict each turn by copying the nearest retrieved exemplar's label.

    Measures retriever quality in isolation; accumulation and scoring are
    identical to LM runs (self-conditioned on the predicted state).
    """
    from sqldst.dialogues import make_turn_context  # local: dialogues sits above this module
    from sqldst.prompting import render_context

    if not pool.records:
        raise ValueError("empty exemplar pool")
    traces = []
    for d in test_dialogues:
        prev: dict[str, str] = {}
        for t, turn in enumerate(d.turns):
            ctx = make_turn_context(d, t, prev, representation)
            query = RetrievalQuery(context_text=render_context(ctx),
                                   gold_change=d.gold_changes[t])
            ids = retriever.retrieve(query, 1)
            pred_change = dict(pool.record(ids[0]).change)
            state = apply_change(prev, pred_change)
            traces.append(TurnTrace(
                dialogue_id=d.id, turn_index=t, gold_state=turn.state,
                pred_state=state, gold_change=d.gold_changes[t],
                pred_change=pred_change))
            prev = state
    return build_report(traces, domains)
