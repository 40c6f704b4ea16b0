"""Turn-context rendering and prompt assembly under a length budget.

The length unit is whitespace-delimited token count scaled by 1.35, a
model-free stand-in for LM tokens. The default budget of 3600 units leaves
completion headroom under a 4096-token context limit.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from sqldst.codec import serialize_change, serialize_traditional, PER_DOMAIN_STATEMENTS
from sqldst.ontology import Ontology

PREV_STATE_PLUS_TURN = "prev_state_plus_turn"
FULL_HISTORY = "full_history"
SINGLE_TURN = "single_turn"
REPRESENTATIONS = (PREV_STATE_PLUS_TURN, FULL_HISTORY, SINGLE_TURN)

MOST_SIMILAR_LAST = "most_similar_last"
MOST_SIMILAR_FIRST = "most_similar_first"

SQL_INSTRUCTION = ("Using valid SQLite, answer the following multi-turn "
                   "conversational questions for the tables provided above.")
TRADITIONAL_INSTRUCTION = ("answer the following multi-turn conversational "
                           "questions for the ontology provided above.")

DEFAULT_BUDGET = 3600.0
UNITS_PER_TOKEN = 1.35


class BudgetTooSmall(ValueError):
    pass


def prompt_units(text: str) -> float:
    return len(text.split()) * UNITS_PER_TOKEN


def truncate_to_units(text: str, max_units: float) -> str:
    """Drop leading whitespace tokens until the text fits the budget."""
    tokens = text.split()
    keep = int(max_units / UNITS_PER_TOKEN + 1e-9)
    if len(tokens) <= keep:
        return text
    return " ".join(tokens[len(tokens) - keep:])


@dataclass(frozen=True)
class TurnContext:
    prev_state: dict[str, str]
    system_utt: str
    user_utt: str
    representation: str = PREV_STATE_PLUS_TURN
    full_history: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown representation: {self.representation}")
        if (self.representation == FULL_HISTORY) != (self.full_history is not None):
            raise ValueError("full_history is required exactly when representation is full_history")


def render_context(ctx: TurnContext, pad_empty: bool = True) -> str:
    """Three lines: [context], [system], and the Q:/[user] line.

    With pad_empty (the pipeline default) an empty [context] or [system]
    line keeps its trailing space; the crafted zero-shot formatting example
    is rendered without it.
    """
    if ctx.representation == FULL_HISTORY:
        parts = [u for pair in ctx.full_history for u in pair if u]
        content = " ".join(parts)
    elif ctx.representation == SINGLE_TURN:
        content = ""
    else:
        content = ", ".join(f"{k}: {v}" for k, v in ctx.prev_state.items())

    def line(tag: str, body: str) -> str:
        if body or pad_empty:
            return f"{tag} {body}"
        return tag

    return "\n".join([line("[context]", content),
                      line("[system]", ctx.system_utt),
                      f"Q: [user] {ctx.user_utt}"])


@dataclass
class PromptSpec:
    schema_text: str
    instruction: str
    exemplars: list[tuple[TurnContext, dict[str, str]]]
    test: TurnContext
    ontology: Ontology
    format: str = "sql"
    max_prompt_units: float = DEFAULT_BUDGET
    exemplar_order: str = MOST_SIMILAR_LAST
    multi_domain_style: str = PER_DOMAIN_STATEMENTS
    formatting_example: tuple[TurnContext, dict[str, str]] | None = None

    def __post_init__(self):
        if self.format not in ("sql", "traditional"):
            raise ValueError(f"unknown prompt format: {self.format}")
        if self.exemplar_order not in (MOST_SIMILAR_LAST, MOST_SIMILAR_FIRST):
            raise ValueError(f"unknown exemplar order: {self.exemplar_order}")
        if self.max_prompt_units <= 0:
            raise ValueError("max_prompt_units must be positive")


def default_instruction(fmt: str) -> str:
    return SQL_INSTRUCTION if fmt == "sql" else TRADITIONAL_INSTRUCTION


def _label(change: dict[str, str], spec: PromptSpec) -> str:
    if spec.format == "sql":
        return "SQL: " + serialize_change(change, spec.ontology, spec.multi_domain_style)
    return "A: " + serialize_traditional(change)


def _example_block(number: int, ctx: TurnContext, change: dict[str, str],
                   spec: PromptSpec, pad_empty: bool = True) -> str:
    return f"Example #{number}\n{render_context(ctx, pad_empty=pad_empty)}\n{_label(change, spec)}"


def _assemble(spec: PromptSpec, exemplars: list[tuple[TurnContext, dict[str, str]]]) -> str:
    head = f"{spec.schema_text}\n\n-- {spec.instruction}\n\n"
    number = 1
    parts = [head]
    if spec.formatting_example is not None:
        ctx, change = spec.formatting_example
        parts.append(_example_block(number, ctx, change, spec, pad_empty=False) + "\n\n")
        number += 1
    for ctx, change in exemplars:
        parts.append(_example_block(number, ctx, change, spec) + "\n\n\n")
        number += 1
    tail = "SQL: SELECT * FROM" if spec.format == "sql" else "A:"
    parts.append(f"Example #{number}\n{render_context(spec.test)}\n{tail}")
    return "".join(parts)


def _fit_history(ctx: TurnContext, change, spec: PromptSpec, share: float) -> TurnContext:
    """Truncate a full-history exemplar, oldest utterance pairs first."""
    while ctx.full_history and len(ctx.full_history) > 1:
        block = _example_block(1, ctx, change, spec)
        if prompt_units(block) <= share:
            break
        ctx = dataclasses.replace(ctx, full_history=ctx.full_history[1:])
    return ctx


def build_prompt(spec: PromptSpec) -> str:
    """Assemble schema, instruction, example blocks, and the test block.

    Exemplars are given most-similar-first (retrieval rank order) and laid
    out per spec.exemplar_order. When the rendered prompt exceeds the
    budget, exemplars drop one at a time from the far-from-test end and the
    remaining blocks renumber contiguously.
    """
    exemplars = list(spec.exemplars)
    if spec.exemplar_order == MOST_SIMILAR_LAST:
        exemplars.reverse()
    if any(ctx.representation == FULL_HISTORY for ctx, _ in exemplars) and exemplars:
        base = prompt_units(_assemble(spec, []))
        share = max(0.0, spec.max_prompt_units - base) / len(exemplars)
        exemplars = [(_fit_history(ctx, change, spec, share), change)
                     for ctx, change in exemplars]
    while True:
        prompt = _assemble(spec, exemplars)
        if prompt_units(prompt) <= spec.max_prompt_units:
            return prompt
        if not exemplars:
            raise BudgetTooSmall(
                f"prompt needs {math.ceil(prompt_units(prompt))} units "
                f"with no exemplars; budget is {spec.max_prompt_units}")
        exemplars.pop(0)


def zero_shot_formatting_example(ont: Ontology) -> tuple[TurnContext, dict[str, str]]:
    """The crafted hotel turn used as the single zero-shot formatting example."""
    if not ont.has_domain("hotel"):
        raise ValueError("formatting example needs the hotel domain")
    ctx = TurnContext(
        prev_state={},
        system_utt="",
        user_utt="i am looking for a guest house to stay in the west. i do not need internet .",
    )
    change = {"hotel-type": "guest house", "hotel-area": "west", "hotel-internet": "no"}
    return ctx, change
