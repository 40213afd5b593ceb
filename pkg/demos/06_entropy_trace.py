"""
Token-entropy diagnostics for proof generations.

The idea under test: positions where a model commits to a named
technique carry unusually high predictive entropy, because that is where
the argument could branch. This script computes entropy traces from
token logprobs, detects spikes, aligns them with technique mentions in
an annotated record, and exhaustively verifies the probability bound
delta^k on a toy autoregressive model where every sequence can be
enumerated.
"""

from __future__ import annotations

import math
import random
import re

from proofkit.entropy import (
    SpikePolicy,
    annotate_spikes,
    align_spikes_to_techniques,
    check_bound,
    random_capped_model,
    token_entropy,
    trace_from_logprobs,
    uniform_capped_model,
)
from proofkit.gateway import TokenLogprobs
from proofkit.hierarchy import (
    HierarchicalRecord,
    InsightBlock,
    TechniqueAnnotation,
    TechniqueCategory,
)

# === PART 1: ENTROPY OF ONE POSITION ===

# Entropy is measured in nats over the renormalized alternatives the
# serving stack returned for a position.
assert token_entropy([1.0]) == 0.0
uniform4 = token_entropy([0.25, 0.25, 0.25, 0.25])
print(f"certain token: H = 0.0 nats")
print(f"uniform over 4: H = {uniform4:.6f} nats (ln 4 = {math.log(4):.6f})")
skewed = token_entropy([0.97, 0.01, 0.01, 0.01])
print(f"97% confident: H = {skewed:.6f} nats\n")

# === PART 2: A TRACE WITH PLANTED SPIKES ===

# The proof text below gets tokenized into whitespace-suffixed words so
# the token surfaces concatenate back to the exact proof string, which
# the alignment step requires.
PROOF = (
    "We begin by listing the residues of the twenty integers modulo nine, "
    "recording how often each class occurs and discarding empty classes. "
    "Once the classes are fixed we apply the pigeonhole principle to the "
    "residues, and the resulting collision closes the argument directly."
)

record = HierarchicalRecord(
    id="trace-demo",
    question="Show two of twenty integers differ by a multiple of nine.",
    proof=PROOF,
    sketch="Residues mod nine collide.",
    insight=InsightBlock(
        analysis="Let's analyze the conditions. Twenty exceeds nine, so residues collide.",
        techniques=(
            TechniqueAnnotation(TechniqueCategory.CONSTRUCTION, None),
            TechniqueAnnotation(TechniqueCategory.THEOREM_CALL, "pigeonhole principle"),
            TechniqueAnnotation(TechniqueCategory.TRANSFORMATION, "listing the residues"),
        ),
    ),
)

surfaces = re.findall(r"\S+\s*", PROOF)
assert "".join(surfaces) == PROOF

# Token index at which each character offset starts, so spikes can be
# planted exactly where the technique phrases begin.
starts = {}
offset = 0
for idx, surface in enumerate(surfaces):
    starts[offset] = idx
    offset += len(surface)

spike_at = {
    starts[PROOF.index("listing")],
    starts[PROOF.index("pigeonhole")],
    len(surfaces) - 1,  # a spike at the very end, far from any technique phrase
}

CALM = [("x", -0.02), ("y", -4.5)]          # near-certain position
BURST = [(f"alt{j}", -math.log(8)) for j in range(8)]  # 8-way uniform

tokens = [
    TokenLogprobs(surface, -0.02, tuple(BURST if i in spike_at else CALM))
    for i, surface in enumerate(surfaces)
]

trace = annotate_spikes(trace_from_logprobs(tokens), SpikePolicy(window=32, threshold=2.0))
print(f"trace of {len(trace.points)} tokens, spike indices: {trace.spike_indices}")
assert set(trace.spike_indices) == spike_at

print("\nidx  H(nats)  token")
for i, point in enumerate(trace.points):
    if i in spike_at or i < 3:
        marker = " <-- spike" if i in trace.spike_indices else ""
        print(f"{i:>3}  {point.entropy:.4f}  {point.token.strip()!r}{marker}")

# === PART 3: DO SPIKES LAND ON TECHNIQUE MENTIONS? ===

# Each spike is matched to the nearest occurrence of one of the record's
# technique descriptions, within a 40-character window. This is a
# descriptive report; misses are counted, not raised.
alignment = align_spikes_to_techniques(trace, record, window=40)
print(f"\nalignment: {alignment.hits} hits, {alignment.misses} misses")
for entry in alignment.alignments:
    where = f"char {entry.char_offset}"
    if entry.hit:
        print(f"  spike@{entry.spike_index} ({where}) -> {entry.matched_category} "
              f"(distance {entry.distance})")
    else:
        print(f"  spike@{entry.spike_index} ({where}) -> no technique phrase nearby")
assert alignment.hits == 2 and alignment.misses == 1

# === PART 4: THE delta^k BOUND, CHECKED EXHAUSTIVELY ===

# Toy setup: an alphabet of reasoning symbols plus designated technique
# symbols, and a model that caps every technique symbol's per-step
# probability at delta. Then any complete sequence using k technique
# symbols has probability at most delta^k. Small alphabets let us check
# every single sequence instead of sampling.
ALPHABET = ["t1", "t2", "a", "b", "c"]
TECHS = ["t1", "t2"]

model = random_capped_model(
    random.Random(7), ALPHABET, TECHS, max_length=6, delta=0.1, order=1
)
result = check_bound(model)
print("\n=== capped random model (order 1) ===")
print(f"sequences enumerated: {result.n_sequences} (= 5^6)")
print(f"total probability:    {result.total_probability:.12f}")
print(f"all satisfied:        {result.all_satisfied}")
print(f"max P(seq)/delta^k:   {result.max_ratio:.6f}")
print(f"per-depth technique marginals under delta: {result.marginals_ok}")
assert result.all_satisfied and result.marginals_ok

# keep_rows retains the entire per-sequence table, which only makes
# sense for tiny models. The rows show the bound tightening as k grows.
small = uniform_capped_model(ALPHABET, TECHS, max_length=3, delta=0.1, technique_prob=0.05)
table = check_bound(small, keep_rows=True)
print("\n=== per-sequence table (uniform model, 3 steps) ===")
by_k = {}
for row in table.rows:
    by_k.setdefault(row.k, row)
for k in sorted(by_k):
    row = by_k[k]
    print(f"k={k}: e.g. {'/'.join(row.sequence)}  "
          f"P={row.probability:.6f} <= delta^{k} = {row.bound:.6f}")

# The cap is enforced at construction, not discovered after the fact: a
# table that puts more than delta on a technique symbol at any step is
# not a valid model, so the bound can never silently rot.
from proofkit.entropy import InvalidModelError

try:
    uniform_capped_model(ALPHABET, TECHS, max_length=4, delta=0.1, technique_prob=0.3)
except InvalidModelError as exc:
    print(f"\nuncapped table rejected at construction: {exc}")
