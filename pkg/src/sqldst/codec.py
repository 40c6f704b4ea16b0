"""Bidirectional codec between state changes and their prompt surface forms.

Serialization is strict (unknown slots raise); parsing is tolerant because
the input is raw language-model output. By default unknown columns are
dropped condition by condition while the rest of a statement survives;
``on_unknown_column="error"`` raises instead. Unknown tables and inputs with
no recognizable structure always raise, and the pipeline maps any raised
codec error to an empty change.
"""

from __future__ import annotations

import re

from sqldst.ontology import Ontology
from sqldst.state import DELETE_VALUE, normalize_value, split_slot

PER_DOMAIN_STATEMENTS = "per_domain_statements"
RENAMED_ALIASES = "renamed_aliases"

EMPTY_CHANGE_SQL = "SELECT * FROM none;"


class ParseError(ValueError):
    """Carries the offending span as (start, end) offsets into the raw text."""

    def __init__(self, message: str, raw: str = "", span: tuple[int, int] | None = None):
        self.span = span
        self.text = raw[span[0]:span[1]] if span else ""
        if span:
            message = f"{message}: {self.text!r} at {span[0]}..{span[1]}"
        super().__init__(message)


class MalformedSql(ParseError):
    pass


class UnknownTable(ParseError):
    pass


class UnknownColumn(ParseError):
    pass


def _quote_mask(text: str) -> list[bool]:
    """mask[i] is True when text[i] sits inside a quoted region."""
    mask = [False] * len(text)
    quote = None
    for i, ch in enumerate(text):
        if quote is None:
            if ch in "'\"":
                quote = ch
                mask[i] = True
        else:
            mask[i] = True
            if ch == quote:
                quote = None
    return mask


def _split_outside_quotes(text: str, pattern: str, base: int = 0) -> list[tuple[int, int]]:
    """Spans of text between separator matches that fall outside quotes."""
    mask = _quote_mask(text)
    spans, start = [], 0
    for m in re.finditer(pattern, text):
        if any(mask[m.start():m.end()]):
            continue
        spans.append((base + start, base + m.start()))
        start = m.end()
    spans.append((base + start, base + len(text)))
    return spans


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    return value


def _clean_value(raw_value: str) -> str:
    value = _unquote(raw_value)
    if value == DELETE_VALUE:
        return DELETE_VALUE
    return normalize_value(value)


def serialize_change(change: dict[str, str], ont: Ontology,
                     style: str = PER_DOMAIN_STATEMENTS) -> str:
    """Render a state change as one or more SELECT statements.

    Conditions follow ontology slot order within a domain and ontology
    domain order across domains; columns render under their display names.
    """
    if style not in (PER_DOMAIN_STATEMENTS, RENAMED_ALIASES):
        raise ValueError(f"unknown multi-domain style: {style}")
    if not change:
        return EMPTY_CHANGE_SQL
    by_domain: dict[str, list[tuple[int, str, str]]] = {}
    for key, value in change.items():
        domain, slot = split_slot(key)
        if not ont.has_domain(domain):
            raise UnknownTable(f"unknown domain: {domain}")
        sdef = ont.slot_def(domain, slot)
        if sdef is None:
            raise UnknownColumn(f"unknown slot for domain: {domain}-{slot}")
        by_domain.setdefault(domain, []).append(
            (ont.slot_order(domain, sdef.name), sdef.rendered_name, value))
    domains = sorted(by_domain, key=ont.domain_order)
    for conds in by_domain.values():
        conds.sort()

    def where(conds):
        return " AND ".join(f"{name} = {value}" for _, name, value in conds)

    if len(domains) == 1 or style == PER_DOMAIN_STATEMENTS:
        stmts = [f"SELECT * FROM {d} WHERE {where(by_domain[d])}" for d in domains]
        return "; ".join(stmts) + ";"
    tables = ", ".join(f"{d} AS d_{i + 1}" for i, d in enumerate(domains))
    conds = " AND ".join(
        f"d_{i + 1}.{name} = {value}"
        for i, d in enumerate(domains)
        for _, name, value in by_domain[d])
    return f"SELECT * FROM {tables} WHERE {conds};"


_HEAD_RE = re.compile(r"^\s*(?:SELECT\s+\*\s+FROM\b|FROM\b)?\s*", re.IGNORECASE)
_WHERE_RE = re.compile(r"\bWHERE\b", re.IGNORECASE)


def parse_completion(raw: str, ont: Ontology, on_unknown_column: str = "drop") -> dict[str, str]:
    """Parse a raw SQL-form completion back into a state change.

    Accepts completions with or without the "SELECT * FROM" head, multiple
    semicolon-separated statements, "AND"-joined conditions, "AS d_i" table
    aliases with qualified columns, and quoted or bare multi-word values
    (bare values run to the next AND, semicolon, or end of input). Display
    names map back to canonical slot names; values pass through
    normalize_value; table "none" or a missing WHERE yields no assignments.
    """
    if on_unknown_column not in ("drop", "error"):
        raise ValueError("on_unknown_column must be 'drop' or 'error'")
    change: dict[str, str] = {}
    for start, end in _split_outside_quotes(raw, r";"):
        stmt = raw[start:end]
        if not stmt.strip():
            continue
        _parse_statement(raw, start, end, ont, on_unknown_column, change)
    return change


def _parse_statement(raw: str, start: int, end: int, ont: Ontology,
                     on_unknown_column: str, change: dict[str, str]) -> None:
    stmt = raw[start:end]
    head = _HEAD_RE.match(stmt)
    body_off = head.end()
    m = _WHERE_RE.search(stmt, body_off)
    if m:
        table_part = stmt[body_off:m.start()]
        cond_start = start + m.end()
        cond_text = raw[cond_start:end]
    else:
        table_part = stmt[body_off:]
        cond_text = ""
        cond_start = end
    tables = _parse_tables(raw, start + body_off, table_part, ont)
    if not cond_text.strip():
        return
    if tables is None:  # FROM none
        return
    default_domain = next(iter(tables.values()))
    for cstart, cend in _split_outside_quotes(cond_text, r"\s+AND\s+", base=cond_start):
        cond = raw[cstart:cend]
        if not cond.strip():
            continue
        eq = cond.find("=")
        if eq < 0:
            raise MalformedSql("condition without '='", raw, (cstart, cend))
        lhs, rhs = cond[:eq], cond[eq + 1:]
        column = lhs.strip().lower()
        domain = default_domain
        if "." in column:
            qualifier, column = column.split(".", 1)
            domain = tables.get(qualifier)
            if domain is None:
                if ont.has_domain(qualifier):
                    domain = qualifier
                else:
                    raise UnknownTable("unknown table qualifier", raw, (cstart, cend))
        canonical = ont.canonical_slot(domain, column)
        if canonical is None:
            if on_unknown_column == "error":
                raise UnknownColumn(f"unknown column for {domain}", raw, (cstart, cend))
            continue
        change[f"{domain}-{canonical}"] = _clean_value(rhs)


def _parse_tables(raw: str, base: int, table_part: str, ont: Ontology) -> dict[str, str] | None:
    """Alias->domain map for the FROM list; None when the table is "none"."""
    entries = _split_outside_quotes(table_part, r",", base=base)
    tables: dict[str, str] = {}
    for tstart, tend in entries:
        tokens = raw[tstart:tend].split()
        if not tokens:
            continue
        name = tokens[0].lower()
        alias = None
        if len(tokens) >= 3 and tokens[1].upper() == "AS":
            alias = tokens[2].lower()
        if name == "none":
            return None
        if not ont.has_domain(name):
            raise UnknownTable("unknown table", raw, (tstart, tend))
        tables[alias or name] = name
    if not tables:
        raise MalformedSql("no table in FROM clause", raw, (base, base + len(table_part)))
    return tables


def serialize_traditional(change: dict[str, str]) -> str:
    """Render "domain-slot: value, domain-slot: value;" in the change's own order."""
    if not change:
        return ";"
    return ", ".join(f"{key}: {value}" for key, value in change.items()) + ";"


def parse_traditional(raw: str, ont: Ontology, on_unknown_column: str = "drop") -> dict[str, str]:
    """Parse a traditional-format completion; tolerant of a missing semicolon."""
    if on_unknown_column not in ("drop", "error"):
        raise ValueError("on_unknown_column must be 'drop' or 'error'")
    body = raw.strip()
    if body.endswith(";"):
        body = body[:-1]
    if not body.strip() or body.strip().lower() == "none":
        return {}
    change: dict[str, str] = {}
    parts: list[tuple[str, str]] = []
    for piece in body.split(","):
        if ":" in piece:
            key, value = piece.split(":", 1)
            parts.append((key.strip(), value.strip()))
        elif parts:
            # a comma inside a value: glue the piece back onto the last value
            slot, prev = parts[-1]
            parts[-1] = (slot, f"{prev},{piece}".strip())
        else:
            raise MalformedSql("no slot-value structure", raw, (0, len(raw)))
    for key, value in parts:
        try:
            domain, slot = split_slot(key.lower())
        except ValueError:
            raise MalformedSql(f"not a domain-slot key: {key!r}", raw)
        if not ont.has_domain(domain):
            raise UnknownTable(f"unknown domain: {domain}", raw)
        canonical = ont.canonical_slot(domain, slot)
        if canonical is None:
            if on_unknown_column == "error":
                raise UnknownColumn(f"unknown slot: {domain}-{slot}", raw)
            continue
        change[f"{domain}-{canonical}"] = _clean_value(value)
    return change
