"""Dialogue-state values and the apply/diff algebra.

A dialogue state is a dict mapping "domain-slot" keys to value strings.
A state change is the same shape; the reserved value ``DELETE_VALUE``
("NONE") marks a slot for removal. Both are treated as immutable by every
function here: callers always get fresh dicts back.
"""

from __future__ import annotations

from importlib import resources

DELETE_VALUE = "NONE"

_default_replacements: dict[str, str] | None = None


def load_replacements(path) -> dict[str, str]:
    """Read a raw<TAB>canonical value-replacement table."""
    table = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected raw<TAB>canonical")
            raw, canonical = line.split("\t", 1)
            table[raw] = canonical
    return table


def default_replacements() -> dict[str, str]:
    global _default_replacements
    if _default_replacements is None:
        ref = resources.files("sqldst.data").joinpath("replacements.tsv")
        with resources.as_file(ref) as path:
            _default_replacements = load_replacements(path)
    return _default_replacements


def normalize_value(raw: str, replacements: dict[str, str] | None = None) -> str:
    """Lowercase, trim, collapse whitespace, then apply whole-value replacements."""
    value = " ".join(raw.lower().split())
    table = default_replacements() if replacements is None else replacements
    return table.get(value, value)


def normalize_slot(raw: str) -> str:
    """Slot keys fold to lowercase with underscores ("hotel-book stay" ->
    "hotel-book_stay"), so data-side spellings meet schema column names."""
    return " ".join(raw.lower().split()).replace(" ", "_")


def split_slot(key: str) -> tuple[str, str]:
    """Split a "domain-slot" key at the first hyphen."""
    domain, sep, slot = key.partition("-")
    if not sep or not domain or not slot:
        raise ValueError(f"not a domain-slot key: {key!r}")
    return domain, slot


def validate_state(state: dict[str, str]) -> None:
    for key, value in state.items():
        split_slot(key)
        if value == DELETE_VALUE:
            raise ValueError(f"state holds the deletion token for {key}")
        if value != normalize_value(value):
            raise ValueError(f"unnormalized value for {key}: {value!r}")


def validate_change(change: dict[str, str]) -> None:
    for key, value in change.items():
        split_slot(key)
        if value != DELETE_VALUE and value != normalize_value(value):
            raise ValueError(f"unnormalized value for {key}: {value!r}")


def apply_change(prev: dict[str, str], change: dict[str, str]) -> dict[str, str]:
    """Apply a state change: DELETE_VALUE removes a slot, anything else upserts.

    Deleting an absent slot is a silent no-op. ``prev`` is not modified.
    """
    state = dict(prev)
    for key, value in change.items():
        if value == DELETE_VALUE:
            state.pop(key, None)
        else:
            state[key] = value
    return state


def diff_states(prev: dict[str, str], curr: dict[str, str]) -> dict[str, str]:
    """Minimal change c with apply_change(prev, c) == curr.

    Additions and value changes come first in ``curr`` order, then deletions
    in ``prev`` order.
    """
    change = {}
    for key, value in curr.items():
        if prev.get(key) != value:
            change[key] = value
    for key in prev:
        if key not in curr:
            change[key] = DELETE_VALUE
    return change


def normalize_state(state: dict[str, str], replacements: dict[str, str] | None = None) -> dict[str, str]:
    """Normalize keys and values; empty or "none" values drop the slot."""
    out = {}
    for key, value in state.items():
        value = normalize_value(value, replacements)
        if value in ("", "none"):
            continue
        out[normalize_slot(key)] = value
    return out
