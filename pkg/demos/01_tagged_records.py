"""
Tagged proof records from the ground up.

A record wraps a proof in up to three sections: a <tech> block naming
the key ideas, a <sketch> giving the plan, and the <proof> itself.
This script builds one by hand, renders it in each view, parses the
text back, and pokes the parser with malformed input to show what the
error types look like.

Run it directly; it needs no network and writes nothing to disk.
"""

from __future__ import annotations

from proofkit.hierarchy import (
    HierarchicalRecord,
    InsightBlock,
    OutOfOrderSectionsError,
    ParseError,
    StageView,
    TechniqueAnnotation,
    TechniqueCategory,
    extract_proof_body,
    parse_corpus_line,
    parse_hierarchical,
    render_corpus_line,
    render_hierarchical,
)

# === BUILD A RECORD ===

# The insight block always carries exactly three technique slots, one per
# category, in a fixed order. A slot with description=None renders as the
# literal word "no".
record = HierarchicalRecord(
    id="demo-001",
    question=(
        "Show that among any $n+1$ integers there are two whose "
        "difference is divisible by $n$."
    ),
    insight=InsightBlock(
        analysis=(
            "Let's analyze the conditions. There are only $n$ residues "
            "modulo $n$, so $n+1$ integers cannot all land in distinct "
            "residue classes."
        ),
        techniques=(
            TechniqueAnnotation(TechniqueCategory.CONSTRUCTION, None),
            TechniqueAnnotation(TechniqueCategory.THEOREM_CALL, "pigeonhole principle"),
            TechniqueAnnotation(
                TechniqueCategory.TRANSFORMATION, "reduce the integers modulo $n$"
            ),
        ),
    ),
    sketch=(
        "Map each integer to its residue mod $n$; two of the $n+1$ "
        "integers share a residue, and their difference is a multiple of $n$."
    ),
    proof=(
        "Consider the residues of the $n+1$ integers modulo $n$. There are "
        "only $n$ possible residues, so by the pigeonhole principle two of "
        "the integers, say $a$ and $b$, satisfy $a \\equiv b \\pmod n$. "
        "Then $n \\mid a - b$, as required."
    ),
)

print("=== rendering the same record in three views ===\n")
for view in StageView:
    text = render_hierarchical(record, view)
    print(f"--- view: {view.value} ({len(text)} chars) ---")
    print(text)
    print()

# === ROUND TRIP ===

# Rendering then parsing must reproduce the sections exactly, and the
# rendered bytes of the re-parsed record must match the original render.
full = render_hierarchical(record, StageView.FULL)
back = parse_hierarchical(full, StageView.FULL)
assert back.proof == record.proof
assert back.sketch == record.sketch
assert back.insight == record.insight
assert render_hierarchical(back, StageView.FULL) == full
print("round trip through FULL view: byte-identical render\n")

# The construction slot was "no", so it comes back as an absent annotation.
construction = back.insight.techniques[0]
print(f"construction slot after parsing: description={construction.description!r}")

# extract_proof_body strips the scaffolding regardless of which view
# produced the text, which is what a training loop needs when comparing
# model output against a reference proof.
assert extract_proof_body(full) == record.proof
assert extract_proof_body(render_hierarchical(record, StageView.PROOF_ONLY)) == record.proof
print("extract_proof_body recovers the identical proof from every view\n")

# === CORPUS LINES ===

# A record travels between tools as one JSON line with a fixed key order,
# so serialization is deterministic down to the byte.
line = render_corpus_line(record)
print("=== corpus line ===")
print(line)
reparsed = parse_corpus_line(line)
assert render_corpus_line(reparsed) == line
print("\ncorpus line round trip: byte-identical\n")

# === WHAT REJECTION LOOKS LIKE ===

# Sections must appear in tech, sketch, proof order. Swapping them is a
# structural error, not a warning.
swapped = (
    "<sketch>\nPlan first.\n</sketch>\n"
    "<tech>\nLet's analyze the conditions. Out of order.\n"
    "<construction>: no\n<theorem call>: no\n<transformation>: no\n</tech>\n"
    "<proof>\nBody.\n</proof>"
)
try:
    parse_hierarchical(swapped, StageView.FULL)
except OutOfOrderSectionsError as exc:
    print(f"swapped sections rejected: {exc}")

# Every category line must be present exactly once inside <tech>.
missing = (
    "<tech>\nLet's analyze the conditions. Missing a slot.\n"
    "<construction>: no\n<transformation>: no\n</tech>\n"
    "<sketch>\nPlan.\n</sketch>\n<proof>\nBody.\n</proof>"
)
try:
    parse_hierarchical(missing, StageView.FULL)
except ParseError as exc:
    print(f"missing category line rejected: {type(exc).__name__}: {exc}")

# Trailing chatter after the last closing tag is tolerated but flagged, so
# downstream code can decide whether to keep the record.
chatty = full + "\n\nI hope this annotation helps!"
tolerant = parse_hierarchical(chatty, StageView.FULL)
print(f"\ntrailing chatter tolerated, flag set: {tolerant.trailing_text_ignored}")
assert tolerant.proof == record.proof
