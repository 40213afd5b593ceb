"""Domain types and a strict, round-trip-safe parser/renderer for the
hierarchical theorem-proof text format.

A record carries up to three tagged sections, always in this order:

    <tech>
    Let's analyze the conditions in this question. ...
    <construction>: Event inclusion {X > x} ... | no
    <theorem call>: Markov's inequality and ...  | no
    <transformation>: no
    </tech>
    <sketch>
    1. ...
    </sketch>
    <proof>
    ...
    </proof>

Section and category tags are matched case-insensitively but otherwise
exactly.  Bodies are opaque payload (LaTeX is never interpreted); the
tag strings themselves are reserved and must not appear inside bodies.
Parsing is strict about section order and multiplicity, lenient about
surrounding whitespace, and tolerates trailing text after ``</proof>``
(recorded on the record as a warning flag, excluded from equality).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

SECTION_ORDER = ("tech", "sketch", "proof")

CATEGORY_ORDER = ("construction", "theorem call", "transformation")

# Literal category body that marks an absent technique.
ABSENT_MARKER = "no"


class TechniqueCategory(Enum):
    CONSTRUCTION = "construction"
    THEOREM_CALL = "theorem call"
    TRANSFORMATION = "transformation"


class StageView(Enum):
    """Which components of a record a curriculum stage uses."""

    PROOF_ONLY = "proof_only"
    SKETCH_PROOF = "sketch_proof"
    FULL = "full"

    @property
    def required_sections(self) -> tuple[str, ...]:
        if self is StageView.PROOF_ONLY:
            return ("proof",)
        if self is StageView.SKETCH_PROOF:
            return ("sketch", "proof")
        return ("tech", "sketch", "proof")


class ParseError(ValueError):
    """Base class for structural errors in the tagged format.

    Carries the offending tag name and the UTF-8 byte offset where the
    problem was detected.
    """

    def __init__(self, message: str, tag: str, byte_offset: int):
        super().__init__(f"{message} (tag {tag!r}, byte offset {byte_offset})")
        self.tag = tag
        self.byte_offset = byte_offset


class MissingSectionError(ParseError):
    pass


class DuplicateSectionError(ParseError):
    pass


class OutOfOrderSectionsError(ParseError):
    pass


class MissingCategoryTagError(ParseError):
    pass


class DuplicateCategoryTagError(ParseError):
    pass


class UnclosedTagError(ParseError):
    pass


class StrayTextError(ParseError):
    """Non-whitespace content before or between sections."""


class ViewComponentMissingError(ValueError):
    """Render was asked for a view whose components the record lacks."""


class SchemaViolationError(ValueError):
    """Corpus line does not match the JSONL schema.

    ``pointer`` is a JSON-pointer path to the offending field.
    """

    def __init__(self, message: str, pointer: str):
        super().__init__(f"{message} (at {pointer})")
        self.pointer = pointer


@dataclass(frozen=True)
class TheoremRecord:
    """A base theorem-proof pair: the raw material for annotation."""

    id: str
    question: str
    proof: str

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")
        if not self.proof.strip():
            raise ValueError("proof must be non-empty")


@dataclass(frozen=True)
class TechniqueAnnotation:
    """One technique slot.  ``description is None`` means the category is
    absent (rendered as the literal body "no")."""

    category: TechniqueCategory
    description: str | None = None

    def __post_init__(self):
        if self.description is not None:
            body = self.description.strip()
            # A stored description equal to the absent marker would be
            # indistinguishable from Absent after one render/parse cycle.
            if not body or body.casefold() == ABSENT_MARKER:
                raise ValueError("description must be None or non-empty text other than the absent marker")

    @property
    def absent(self) -> bool:
        return self.description is None


@dataclass(frozen=True)
class InsightBlock:
    """The analysis preamble plus exactly one technique slot per category,
    in canonical category order."""

    analysis: str
    techniques: tuple[TechniqueAnnotation, TechniqueAnnotation, TechniqueAnnotation]

    def __post_init__(self):
        cats = tuple(t.category.value for t in self.techniques)
        if cats != CATEGORY_ORDER:
            raise ValueError(f"techniques must be one per category in order {CATEGORY_ORDER}, got {cats}")

    def technique(self, category: TechniqueCategory) -> TechniqueAnnotation:
        return self.techniques[CATEGORY_ORDER.index(category.value)]


@dataclass(frozen=True)
class HierarchicalRecord:
    """A (question, techniques, sketch, proof) record.

    ``id`` and ``question`` are None for records parsed from bare tagged
    text (the tagged form does not carry them).  The hierarchy is nested:
    a record with an insight block must also have a sketch.
    ``original_proof`` preserves the pre-annotation proof when the
    annotation pipeline replaced it.
    """

    proof: str
    insight: InsightBlock | None = None
    sketch: str | None = None
    id: str | None = None
    question: str | None = None
    original_proof: str | None = None
    trailing_text_ignored: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.proof.strip():
            raise ValueError("proof must be non-empty")
        if self.insight is not None and self.sketch is None:
            raise ValueError("a record with an insight block must have a sketch")
        if self.question is not None and not self.question.strip():
            raise ValueError("question, when present, must be non-empty")

    def natural_view(self) -> StageView:
        """The widest view this record supports."""
        if self.insight is not None:
            return StageView.FULL
        if self.sketch is not None:
            return StageView.SKETCH_PROOF
        return StageView.PROOF_ONLY


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


def _find_all(low: str, needle: str) -> list[int]:
    out = []
    start = 0
    while True:
        i = low.find(needle, start)
        if i < 0:
            return out
        out.append(i)
        start = i + len(needle)


@dataclass(frozen=True)
class _Section:
    name: str
    open_start: int
    body_start: int
    body_end: int
    close_end: int


def _scan_sections(text: str, view: StageView) -> tuple[list[_Section], bool]:
    """Locate the tagged sections, enforcing order, multiplicity and
    closure.  Returns the sections in positional order plus a flag for
    non-whitespace trailing text after ``</proof>``."""
    low = text.lower()

    proof_opens = _find_all(low, "<proof>")
    if not proof_opens:
        raise MissingSectionError("required section missing", "proof", _byte_offset(text, len(text)))
    proof_open = proof_opens[0]
    proof_close = low.find("</proof>", proof_open + len("<proof>"))
    if proof_close < 0:
        raise UnclosedTagError("section never closed", "proof", _byte_offset(text, proof_open))
    proof_close_end = proof_close + len("</proof>")

    # Everything up to the proof opening tag is the "head": the region
    # where tech and sketch may appear.  Tag-like strings inside the
    # proof body or after </proof> are payload/trailing, not structure.
    head = low[:proof_open]
    opens: list[tuple[int, str]] = [(proof_open, "proof")]
    for name in ("tech", "sketch"):
        hits = _find_all(head, f"<{name}>")
        if len(hits) > 1:
            raise DuplicateSectionError("section appears more than once", name, _byte_offset(text, hits[1]))
        if hits:
            opens.append((hits[0], name))
    opens.sort()

    # Canonical rank must be non-decreasing along positional order.
    last_rank = -1
    for pos, name in opens:
        rank = SECTION_ORDER.index(name)
        if rank < last_rank:
            raise OutOfOrderSectionsError("section out of order", name, _byte_offset(text, pos))
        last_rank = rank

    present = {name for _, name in opens}
    for name in view.required_sections:
        if name not in present:
            raise MissingSectionError("required section missing", name, _byte_offset(text, len(text)))
    # Nesting: an insight block only makes sense above a sketch.
    if "tech" in present and "sketch" not in present:
        raise MissingSectionError("tech section requires a sketch section", "sketch", _byte_offset(text, proof_open))

    sections: list[_Section] = []
    for idx, (pos, name) in enumerate(opens):
        body_start = pos + len(f"<{name}>")
        if name == "proof":
            close, close_end = proof_close, proof_close_end
        else:
            next_open = opens[idx + 1][0]
            close = low.find(f"</{name}>", body_start)
            if close < 0 or close >= next_open:
                raise UnclosedTagError("section never closed", name, _byte_offset(text, pos))
            close_end = close + len(f"</{name}>")
        sections.append(_Section(name, pos, body_start, close, close_end))

    # Only whitespace may precede the first section or separate sections.
    cursor = 0
    for sec in sections:
        gap = text[cursor:sec.open_start]
        if gap.strip():
            raise StrayTextError("unexpected text outside sections", sec.name, _byte_offset(text, cursor + len(gap) - len(gap.lstrip())))
        cursor = sec.close_end

    trailing = bool(text[proof_close_end:].strip())
    return sections, trailing


def _parse_tech_body(body: str, body_offset: int, text: str) -> InsightBlock:
    low = body.lower()
    hits: list[tuple[int, str]] = []
    for name in CATEGORY_ORDER:
        positions = _find_all(low, f"<{name}>")
        if not positions:
            raise MissingCategoryTagError("category tag missing", name, _byte_offset(text, body_offset))
        if len(positions) > 1:
            raise DuplicateCategoryTagError("category tag appears more than once", name, _byte_offset(text, body_offset + positions[1]))
        hits.append((positions[0], name))
    hits.sort()

    analysis = body[: hits[0][0]].strip()
    descriptions: dict[str, str | None] = {}
    for idx, (pos, name) in enumerate(hits):
        start = pos + len(f"<{name}>")
        # Optional colon right after the tag, per the canonical line form.
        rest = body[start:]
        if rest.lstrip().startswith(":"):
            start += len(rest) - len(rest.lstrip()) + 1
        end = hits[idx + 1][0] if idx + 1 < len(hits) else len(body)
        desc = body[start:end].strip()
        if not desc or desc.casefold() == ABSENT_MARKER:
            descriptions[name] = None
        else:
            descriptions[name] = desc

    techniques = tuple(
        TechniqueAnnotation(TechniqueCategory(name), descriptions[name]) for name in CATEGORY_ORDER
    )
    return InsightBlock(analysis=analysis, techniques=techniques)


def parse_hierarchical(text: str, view: StageView) -> HierarchicalRecord:
    """Parse tagged text into a record.

    The view names the sections that must be present; any further
    hierarchy sections found in the text are parsed too.  For
    ``PROOF_ONLY``, text without a ``<proof>`` tag is accepted wholesale
    as the proof body (stage-1 targets are emitted untagged).
    """
    if view is StageView.PROOF_ONLY and "<proof>" not in text.lower():
        body = text.strip()
        if not body:
            raise MissingSectionError("required section missing", "proof", 0)
        return HierarchicalRecord(proof=body)

    sections, trailing = _scan_sections(text, view)
    parts = {sec.name: sec for sec in sections}

    proof_sec = parts["proof"]
    proof = text[proof_sec.body_start : proof_sec.body_end].strip()
    if not proof:
        raise MissingSectionError("proof body is empty", "proof", _byte_offset(text, proof_sec.body_start))

    sketch = None
    if "sketch" in parts:
        sec = parts["sketch"]
        sketch = text[sec.body_start : sec.body_end].strip()

    insight = None
    if "tech" in parts:
        sec = parts["tech"]
        insight = _parse_tech_body(text[sec.body_start : sec.body_end], sec.body_start, text)

    return HierarchicalRecord(
        proof=proof,
        insight=insight,
        sketch=sketch,
        trailing_text_ignored=trailing,
    )


def render_hierarchical(record: HierarchicalRecord, view: StageView) -> str:
    """Render the canonical tagged form for the requested view.

    Sections are emitted in tech/sketch/proof order with one newline
    after each opening tag and one before each closing tag; category
    lines appear in fixed order with absent slots rendered as "no".
    """
    need = view.required_sections
    if "tech" in need and record.insight is None:
        raise ViewComponentMissingError("view requires a tech section the record lacks")
    if "sketch" in need and record.sketch is None:
        raise ViewComponentMissingError("view requires a sketch section the record lacks")

    pieces = []
    if "tech" in need:
        lines = [record.insight.analysis] if record.insight.analysis else []
        for tech in record.insight.techniques:
            body = ABSENT_MARKER if tech.absent else tech.description
            lines.append(f"<{tech.category.value}>: {body}")
        pieces.append("<tech>\n" + "\n".join(lines) + "\n</tech>")
    if "sketch" in need:
        pieces.append("<sketch>\n" + record.sketch + "\n</sketch>")
    pieces.append("<proof>\n" + record.proof + "\n</proof>")
    return "\n".join(pieces)


def extract_proof_body(text: str) -> str:
    """Best-effort extraction of the final proof component.

    Texts in the tagged format are reduced to the ``<proof>`` body;
    anything else is returned trimmed.  Used at evaluation time so
    hierarchical outputs are judged on the proof alone.
    """
    low = text.lower()
    open_idx = low.find("<proof>")
    if open_idx < 0:
        return text.strip()
    start = open_idx + len("<proof>")
    close = low.find("</proof>", start)
    body = text[start:] if close < 0 else text[start:close]
    return body.strip()


# --- JSONL corpus persistence -------------------------------------------
#
# One record per line:
#   {"id": str, "question": str, "proof": str,
#    "tech": {"analysis": str, "construction": str|null,
#             "theorem_call": str|null, "transformation": str|null} | null,
#    "sketch": str|null, "original_proof": str|null}
# Null category fields encode absent techniques.  "original_proof" is an
# optional extension key carrying the pre-annotation proof when the
# annotated proof replaced it.

_TOP_KEYS = {"id", "question", "proof", "tech", "sketch", "original_proof"}
_TECH_KEYS = {"analysis", "construction", "theorem_call", "transformation"}
_CATEGORY_JSON_KEYS = ("construction", "theorem_call", "transformation")


def _expect_str(value, pointer: str, allow_none: bool = False) -> str | None:
    if value is None and allow_none:
        return None
    if not isinstance(value, str):
        raise SchemaViolationError(f"expected string, got {type(value).__name__}", pointer)
    return value


def parse_corpus_line(json_text: str) -> HierarchicalRecord:
    """Parse one JSONL corpus line into a record."""
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise SchemaViolationError(f"invalid JSON: {exc}", "/") from exc
    if not isinstance(obj, dict):
        raise SchemaViolationError("line must be a JSON object", "/")
    for key in obj:
        if key not in _TOP_KEYS:
            raise SchemaViolationError("unknown key", f"/{key}")
    for key in ("id", "question", "proof"):
        if key not in obj:
            raise SchemaViolationError("required key missing", f"/{key}")

    rec_id = _expect_str(obj["id"], "/id")
    question = _expect_str(obj["question"], "/question")
    proof = _expect_str(obj["proof"], "/proof")
    sketch = _expect_str(obj.get("sketch"), "/sketch", allow_none=True)
    original_proof = _expect_str(obj.get("original_proof"), "/original_proof", allow_none=True)
    for key, value in (("id", rec_id), ("question", question), ("proof", proof)):
        if not value.strip():
            raise SchemaViolationError("must be non-empty", f"/{key}")

    insight = None
    tech = obj.get("tech")
    if tech is not None:
        if not isinstance(tech, dict):
            raise SchemaViolationError("tech must be an object or null", "/tech")
        for key in tech:
            if key not in _TECH_KEYS:
                raise SchemaViolationError("unknown key", f"/tech/{key}")
        if "analysis" not in tech:
            raise SchemaViolationError("required key missing", "/tech/analysis")
        analysis = _expect_str(tech["analysis"], "/tech/analysis")
        techniques = []
        for name, category in zip(_CATEGORY_JSON_KEYS, TechniqueCategory):
            desc = _expect_str(tech.get(name), f"/tech/{name}", allow_none=True)
            try:
                techniques.append(TechniqueAnnotation(category, desc))
            except ValueError as exc:
                # Absence is encoded as null, never as the marker string.
                raise SchemaViolationError(str(exc), f"/tech/{name}") from exc
        if sketch is None:
            raise SchemaViolationError("records with tech must carry a sketch", "/sketch")
        insight = InsightBlock(analysis=analysis, techniques=tuple(techniques))

    try:
        return HierarchicalRecord(
            proof=proof,
            insight=insight,
            sketch=sketch,
            id=rec_id,
            question=question,
            original_proof=original_proof,
        )
    except ValueError as exc:
        raise SchemaViolationError(str(exc), "/") from exc


def render_corpus_line(record: HierarchicalRecord) -> str:
    """Serialize a record to one JSONL corpus line (inverse of
    :func:`parse_corpus_line`).  Key order is fixed so identical records
    serialize byte-identically."""
    if record.id is None or record.question is None:
        raise ValueError("corpus lines require id and question")
    tech = None
    if record.insight is not None:
        tech = {"analysis": record.insight.analysis}
        for name, annotation in zip(_CATEGORY_JSON_KEYS, record.insight.techniques):
            tech[name] = annotation.description
    obj = {
        "id": record.id,
        "question": record.question,
        "proof": record.proof,
        "tech": tech,
        "sketch": record.sketch,
    }
    if record.original_proof is not None:
        obj["original_proof"] = record.original_proof
    return json.dumps(obj, ensure_ascii=False)
