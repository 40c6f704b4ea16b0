"""Dialogue data ingestion and selection-pool sampling.

Dialogue files are line-delimited JSON records::

    {"id": "...", "turns": [{"system": "...", "user": "...", "state": {"domain-slot": "value"}}]}

Turns pair one system utterance with the user reply that follows it; the
first system utterance of a dialogue is empty. Per-turn gold states are
cumulative; gold changes are derived by diffing consecutive states (turn 0
diffs against the empty state) and re-applying them must reproduce every
gold state exactly, which is checked at load.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from functools import cached_property

from sqldst.prompting import (FULL_HISTORY, PREV_STATE_PLUS_TURN, TurnContext,
                              render_context)
from sqldst.retrieval import ExemplarPool, build_record
from sqldst.state import apply_change, diff_states, normalize_state, split_slot


@dataclass(frozen=True)
class Turn:
    system: str
    user: str
    state: dict[str, str]


@dataclass(frozen=True)
class DialogueRecord:
    id: str
    turns: tuple[Turn, ...]

    @cached_property
    def gold_changes(self) -> tuple[dict[str, str], ...]:
        changes = []
        prev: dict[str, str] = {}
        for turn in self.turns:
            changes.append(diff_states(prev, turn.state))
            prev = turn.state
        return tuple(changes)

    def check_accumulation(self) -> None:
        state: dict[str, str] = {}
        for t, (turn, change) in enumerate(zip(self.turns, self.gold_changes)):
            state = apply_change(state, change)
            if state != turn.state:
                raise ValueError(f"dialogue {self.id} turn {t}: gold changes do not "
                                 f"reproduce the gold state")


def load_dialogues(path) -> list[DialogueRecord]:
    """Read, normalize, and validate a dialogue file."""
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: {e.msg}") from e
            try:
                rec = _parse_record(raw)
            except (KeyError, TypeError, AttributeError) as e:
                rid = raw.get("id", f"line {lineno}") if isinstance(raw, dict) else f"line {lineno}"
                raise ValueError(f"{path}: bad dialogue record {rid}: {e}") from e
            rec.check_accumulation()
            records.append(rec)
    return records


def _parse_record(raw: dict) -> DialogueRecord:
    rid = str(raw["id"])
    turns = []
    for i, t in enumerate(raw["turns"]):
        state = normalize_state(t["state"])
        for key in state:
            try:
                split_slot(key)
            except ValueError as e:
                raise ValueError(f"dialogue {rid} turn {i}: {e}") from e
        turns.append(Turn(system=t.get("system", ""), user=t.get("user", ""), state=state))
    return DialogueRecord(id=rid, turns=tuple(turns))


def write_dialogues(records: list[DialogueRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps({
                "id": rec.id,
                "turns": [{"system": t.system, "user": t.user, "state": t.state}
                          for t in rec.turns],
            }) + "\n")


def make_turn_context(dialogue: DialogueRecord, turn_index: int,
                      prev_state: dict[str, str],
                      representation: str = PREV_STATE_PLUS_TURN) -> TurnContext:
    """Context for one turn: prior state (or history) plus the current pair."""
    turn = dialogue.turns[turn_index]
    history = None
    if representation == FULL_HISTORY:
        history = tuple((t.system, t.user) for t in dialogue.turns[:turn_index])
    return TurnContext(prev_state=prev_state, system_utt=turn.system,
                       user_utt=turn.user, representation=representation,
                       full_history=history)


def sample_pool(dialogues: list[DialogueRecord], fraction: float, seed: int,
                representation: str = PREV_STATE_PLUS_TURN) -> ExemplarPool:
    """Sample ceil(fraction*N) whole dialogues, then flatten every turn.

    Contexts are rendered from gold previous states; labels are gold
    changes. Sampling is uniform without replacement and reproducible per
    seed.
    """
    if not dialogues:
        raise ValueError("no dialogues to sample from")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n = math.ceil(fraction * len(dialogues))
    rng = random.Random(seed)
    sampled = rng.sample(dialogues, n)
    records = []
    for d in sampled:
        prev: dict[str, str] = {}
        for t, (turn, change) in enumerate(zip(d.turns, d.gold_changes)):
            ctx = make_turn_context(d, t, prev, representation)
            records.append(build_record(
                id=f"{d.id}:{t}",
                context_text=render_context(ctx),
                change=change,
                context=ctx,
            ))
            prev = turn.state
    return ExemplarPool(tuple(records))
