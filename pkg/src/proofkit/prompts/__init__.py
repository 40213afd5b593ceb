"""Versioned prompt template library.

Templates live as plain text files next to this module, one per id,
with a sidecar ``manifest.json`` recording each template's declared
slots and content digest.  Slot markers are ``{name}`` with lowercase
names; brace pairs that are LaTeX (``\\{x_1\\}``), format examples
(``\\begin{enumerate}``) or free-text placeholders (``{sub-score}``)
are not slots and pass through :func:`fill` untouched.

Bodies are data, not code: operators can point the library at an
override directory to swap prompts without a rebuild, and every
pipeline artifact records :func:`template_digest` so outputs stay
traceable to the exact prompt version that produced them.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path

# A slot is {lowercase_name} not preceded by a word character (rules out
# \begin{enumerate}) or a backslash (rules out \{ LaTeX escapes).
_SLOT_RE = re.compile(r"(?<![\w\\])\{([a-z_]+)\}")


class TemplateId(Enum):
    DATA_CONSTRUCTION = "data_construction"
    PROOF_EVALUATION = "proof_evaluation"
    HIERARCHICAL_VERIFIER = "hierarchical_verifier"
    INSIGHT_GENERATION = "insight_generation"
    INSIGHT_EVALUATION = "insight_evaluation"
    PLAN_AND_SOLVE = "plan_and_solve"
    LEAST_TO_MOST = "least_to_most"
    SELF_DISCOVER = "self_discover"


class MissingSlotError(ValueError):
    def __init__(self, slot: str):
        super().__init__(f"no binding for slot {slot!r}")
        self.slot = slot


class UnknownSlotError(ValueError):
    def __init__(self, slot: str):
        super().__init__(f"binding {slot!r} does not name a template slot")
        self.slot = slot


class TemplateDriftError(RuntimeError):
    """Shipped template bytes no longer match the manifest digest."""


@dataclass(frozen=True)
class PromptTemplate:
    id: TemplateId
    body: str
    slots: tuple[str, ...]

    def __post_init__(self):
        found = set(_SLOT_RE.findall(self.body))
        declared = set(self.slots)
        if found != declared:
            raise ValueError(
                f"template {self.id.value}: declared slots {sorted(declared)} "
                f"do not match markers in body {sorted(found)}"
            )


def fill(template: PromptTemplate, bindings: dict[str, str]) -> str:
    """Replace every slot marker with its binding, in one pass.

    Single-pass substitution means binding text is inserted verbatim and
    never rescanned, so a question containing the string "{response}"
    cannot hijack a later slot.
    """
    for slot in template.slots:
        if slot not in bindings:
            raise MissingSlotError(slot)
    for name in bindings:
        if name not in template.slots:
            raise UnknownSlotError(name)
    return _SLOT_RE.sub(lambda m: bindings[m.group(1)], template.body)


def template_digest(template: PromptTemplate) -> str:
    """Content hash of the template body (hex sha256)."""
    return hashlib.sha256(template.body.encode("utf-8")).hexdigest()


def _template_dir() -> Path:
    return Path(resources.files(__package__) / "templates")


def load_manifest(directory: Path | None = None) -> dict:
    directory = directory or _template_dir()
    with open(directory / "manifest.json", encoding="utf-8") as fh:
        return json.load(fh)


def load_template(template_id: TemplateId, directory: Path | None = None, verify: bool = True) -> PromptTemplate:
    """Load one template from disk, checking it against the manifest.

    ``directory`` may point at an operator override tree with its own
    manifest.json; ``verify=False`` skips drift detection.
    """
    directory = directory or _template_dir()
    manifest = load_manifest(directory)
    entry = next((e for e in manifest["templates"] if e["id"] == template_id.value), None)
    if entry is None:
        raise KeyError(f"manifest has no entry for {template_id.value}")
    body = (directory / f"{template_id.value}.txt").read_text(encoding="utf-8")
    template = PromptTemplate(id=template_id, body=body, slots=tuple(entry["slots"]))
    if verify and template_digest(template) != entry["sha256"]:
        raise TemplateDriftError(
            f"template {template_id.value} drifted: digest {template_digest(template)} "
            f"does not match manifest {entry['sha256']}"
        )
    return template


def all_templates(directory: Path | None = None) -> dict[TemplateId, PromptTemplate]:
    return {tid: load_template(tid, directory) for tid in TemplateId}
