"""Task schema: domains, slots, value inventories, and prompt-text rendering.

The ontology file is JSON with a top-level ``domains`` list. Each domain
carries ``slots`` (name, kind, values[], display_name?, int_like?,
sql_check?) and ``example_rows`` (list of rows, one value per slot). Two
optional per-domain fields pin the exact bytes of the rendered example
table when a schema prompt must match an existing text: ``example_header_text``
and ``example_rows_text`` (verbatim lines; they must collapse to the same
single-spaced content as the corresponding value lists). A domain may also
set ``sql_trailing_comma`` to keep a comma after its final column line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

from sqldst.state import normalize_value


class OntologyError(ValueError):
    pass


@dataclass(frozen=True)
class SlotDef:
    domain: str
    name: str
    kind: str  # "categorical" or "open"
    values: tuple[str, ...]
    display_name: str | None = None
    int_like: bool = False
    sql_check: bool = True

    @property
    def rendered_name(self) -> str:
        return self.display_name or self.name

    @property
    def full_name(self) -> str:
        return f"{self.domain}-{self.name}"

    def admits(self, value: str) -> bool:
        """Membership check; defined only for categorical slots."""
        if self.kind != "categorical":
            raise OntologyError(f"{self.full_name} is not categorical")
        norm = normalize_value(value)
        return norm == "dontcare" or norm in {normalize_value(v) for v in self.values}


@dataclass(frozen=True)
class DomainDef:
    name: str
    slots: tuple[SlotDef, ...]
    example_rows: tuple[tuple[str, ...], ...]
    example_header_text: str | None = None
    example_rows_text: tuple[str, ...] | None = None
    sql_trailing_comma: bool = False


@dataclass(frozen=True)
class Ontology:
    """Immutable after load; safe to share across threads."""

    domain_defs: tuple[DomainDef, ...]
    _slot_index: dict[tuple[str, str], SlotDef] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        for dom in self.domain_defs:
            for s in dom.slots:
                self._slot_index[(dom.name, s.name)] = s
                # accept display names and space/underscore variants on lookup
                for base in (s.name, s.display_name or ""):
                    for alias in (base, base.replace("_", " "), base.replace(" ", "_")):
                        if alias:
                            self._slot_index.setdefault((dom.name, alias), s)

    @property
    def domains(self) -> list[str]:
        return [d.name for d in self.domain_defs]

    @property
    def slots(self) -> list[SlotDef]:
        return [s for d in self.domain_defs for s in d.slots]

    def has_domain(self, name: str) -> bool:
        return any(d.name == name for d in self.domain_defs)

    def domain(self, name: str) -> DomainDef:
        for d in self.domain_defs:
            if d.name == name:
                return d
        raise OntologyError(f"unknown domain: {name}")

    def domain_order(self, name: str) -> int:
        return self.domains.index(name)

    def canonical_slot(self, domain: str, name_or_display: str) -> str | None:
        """Resolve a slot or display name to the canonical slot name."""
        s = self._slot_index.get((domain, name_or_display))
        return s.name if s else None

    def slot_def(self, domain: str, name_or_display: str) -> SlotDef | None:
        return self._slot_index.get((domain, name_or_display))

    def slot_order(self, domain: str, slot: str) -> int:
        for i, s in enumerate(self.domain(domain).slots):
            if s.name == slot:
                return i
        raise OntologyError(f"unknown slot: {domain}-{slot}")


def _parse_slot(domain: str, raw: dict, seen: set) -> SlotDef:
    name = raw["name"]
    if (domain, name) in seen:
        raise OntologyError(f"duplicate slot: {domain}-{name}")
    seen.add((domain, name))
    kind = raw.get("kind", "open")
    if kind not in ("categorical", "open"):
        raise OntologyError(f"{domain}-{name}: bad kind {kind!r}")
    values = tuple(raw.get("values", []))
    if kind == "categorical" and not values:
        raise OntologyError(f"{domain}-{name}: categorical slot with empty inventory")
    for v in values:
        if v != " ".join(v.lower().split()):
            raise OntologyError(f"{domain}-{name}: value not lowercase/single-spaced: {v!r}")
    return SlotDef(
        domain=domain,
        name=name,
        kind=kind,
        values=values,
        display_name=raw.get("display_name"),
        int_like=bool(raw.get("int_like", False)),
        sql_check=bool(raw.get("sql_check", True)),
    )


def _parse_domain(raw: dict, seen_slots: set) -> DomainDef:
    name = raw["name"]
    slots = tuple(_parse_slot(name, s, seen_slots) for s in raw.get("slots", []))
    rows = tuple(tuple(r) for r in raw.get("example_rows", []))
    for r in rows:
        if len(r) != len(slots):
            raise OntologyError(f"{name}: example row has {len(r)} values for {len(slots)} slots")
        for s, v in zip(slots, r):
            if s.kind == "categorical" and not s.admits(v):
                raise OntologyError(f"{name}: example value {v!r} not in {s.full_name} inventory")
    rows_text = raw.get("example_rows_text")
    if rows_text is not None:
        if len(rows_text) != len(rows):
            raise OntologyError(f"{name}: example_rows_text length mismatch")
        for cells, text in zip(rows, rows_text):
            if " ".join(" ".join(cells).split()) != " ".join(text.split()):
                raise OntologyError(f"{name}: example_rows_text disagrees with example_rows: {text!r}")
        rows_text = tuple(rows_text)
    return DomainDef(
        name=name,
        slots=slots,
        example_rows=rows,
        example_header_text=raw.get("example_header_text"),
        example_rows_text=rows_text,
        sql_trailing_comma=bool(raw.get("sql_trailing_comma", False)),
    )


def ontology_from_dict(raw: dict) -> Ontology:
    seen_domains: set[str] = set()
    seen_slots: set[tuple[str, str]] = set()
    defs = []
    for d in raw.get("domains", []):
        if d["name"] in seen_domains:
            raise OntologyError(f"duplicate domain: {d['name']}")
        seen_domains.add(d["name"])
        defs.append(_parse_domain(d, seen_slots))
    return Ontology(tuple(defs))


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise OntologyError(f"{path}: line {e.lineno} col {e.colno}: {e.msg}") from e
    try:
        return ontology_from_dict(raw)
    except KeyError as e:
        raise OntologyError(f"{path}: missing field {e}") from e


def bundled_ontology(name: str = "multiwoz") -> Ontology:
    """Load a packaged ontology: "multiwoz" or "multiwoz-zeroshot"."""
    filename = {
        "multiwoz": "multiwoz_ontology.json",
        "multiwoz-zeroshot": "multiwoz_ontology_zeroshot.json",
    }.get(name)
    if filename is None:
        raise OntologyError(f"no bundled ontology named {name!r}")
    ref = resources.files("sqldst.data").joinpath(filename)
    with resources.as_file(ref) as path:
        return load_ontology(path)


def _check_inventory(values: tuple[str, ...]) -> list[str]:
    # "dontcare" leads the CHECK list by convention, wherever the file put it
    if "dontcare" in values:
        return ["dontcare"] + [v for v in values if v != "dontcare"]
    return list(values)


def _sql_block(dom: DomainDef) -> str:
    lines = [f"CREATE TABLE {dom.name}("]
    for i, s in enumerate(dom.slots):
        name = s.rendered_name
        col = f"  {name} {'int' if s.int_like else 'text'}"
        if s.kind == "categorical" and s.sql_check:
            col += f" CHECK ({name} IN ({', '.join(_check_inventory(s.values))}))"
        if i < len(dom.slots) - 1 or dom.sql_trailing_comma:
            col += ","
        lines.append(col)
    lines.append(")")
    n = len(dom.example_rows)
    header = dom.example_header_text
    if header is None:
        header = "  ".join(s.rendered_name for s in dom.slots)
    rows = dom.example_rows_text
    if rows is None:
        rows = ["  ".join(r) for r in dom.example_rows]
    lines += ["/*", f"{n} example rows:", f"SELECT * FROM {dom.name} LIMIT {n};", header, *rows, "*/"]
    return "\n".join(lines)


def render_schema_sql(ont: Ontology) -> str:
    """One CREATE TABLE block per domain, each followed by its example rows."""
    return "\n\n".join(_sql_block(d) for d in ont.domain_defs)


def render_schema_traditional(ont: Ontology) -> str:
    """Per-domain "domain-slot: values" listing; open slots end with ", etc."."""
    blocks = []
    for dom in ont.domain_defs:
        lines = []
        for s in dom.slots:
            listing = ", ".join(s.values)
            if s.kind == "open":
                listing += ", etc."
            lines.append(f"{dom.name}-{s.rendered_name}: {listing}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)
