"""
Emitting staged fine-tuning files from an annotated corpus.

A three-stage schedule trains on bare proofs first, then sketch+proof,
then the fully tagged record. Each stage becomes one JSONL file of chat
examples. The proof text is the same string at every stage; only the
scaffolding around it grows.
"""

from __future__ import annotations

import json
import tempfile
from importlib import resources
from pathlib import Path

from proofkit.curriculum import Schedule, TargetSelection, emit_schedule
from proofkit.corpus import load_corpus
from proofkit.hierarchy import extract_proof_body

# The package ships a small annotated corpus for experiments like this.
CORPUS = resources.files("proofkit") / "data" / "mini_corpus.jsonl"

with resources.as_file(CORPUS) as path:
    corpus = load_corpus(path)
print(f"loaded {len(corpus)} annotated records from the bundled corpus\n")

with tempfile.TemporaryDirectory() as tmp:
    out_dir = Path(tmp) / "stages"

    # === THREE-STAGE SCHEDULE ===

    manifest = emit_schedule(
        corpus,
        Schedule.THREE_STAGE,
        out_dir,
        target_selection=TargetSelection.ANNOTATED,
        epochs=3,
        system_prompt="You are a careful mathematician.",
    )

    print("=== manifest ===")
    print(json.dumps(manifest.as_dict(), indent=2)[:400], "...\n")

    for stage in manifest.stages:
        print(f"stage {stage['stage']}: file={stage['file']} "
              f"examples={stage['examples']} skipped={stage['skipped']} "
              f"epochs={stage['epochs']}")

    # === WHAT A TRAINING LINE LOOKS LIKE ===

    stage_files = [out_dir / s["file"] for s in manifest.stages]
    first = json.loads(stage_files[0].read_text().splitlines()[0])
    print("\nfirst line of stage 1 (roles only):",
          [m["role"] for m in first["messages"]])
    print("assistant target starts:", repr(first["messages"][-1]["content"][:60]))

    last = json.loads(stage_files[2].read_text().splitlines()[0])
    print("stage 3 assistant target starts:",
          repr(last["messages"][-1]["content"][:60]))

    # === THE INVARIANT THAT MAKES IT A CURRICULUM ===

    # For every record, stripping the tags off the stage-3 target must give
    # back exactly the stage-1 target. The model sees the same proof three
    # times with increasing annotation, never a different proof.
    stage1 = {json.loads(l)["source_id"]: json.loads(l)["messages"][-1]["content"]
              for l in stage_files[0].read_text().splitlines()}
    stage3 = {json.loads(l)["source_id"]: json.loads(l)["messages"][-1]["content"]
              for l in stage_files[2].read_text().splitlines()}
    for source_id, target in stage3.items():
        assert extract_proof_body(target) == stage1[source_id]
    print(f"\nchecked {len(stage3)} records: stage-3 target minus tags == stage-1 target")

    # === TWO-STAGE VARIANT ===

    # The two-stage schedule skips the sketch+proof middle step. Useful when
    # sketches are noisy or the token budget is tight.
    two = emit_schedule(corpus, Schedule.TWO_STAGE, Path(tmp) / "two")
    print(f"\ntwo-stage schedule emits {len(two.stages)} files: "
          f"{[s['stage'] for s in two.stages]}")

    # === ORIGINAL-PROOF TARGETS ===

    # Some records carry the scraped proof alongside the annotated rewrite.
    # TargetSelection.ORIGINAL trains against the scraped text where it
    # exists, which keeps the human phrasing in the loss.
    orig = emit_schedule(
        corpus,
        Schedule.THREE_STAGE,
        Path(tmp) / "orig",
        target_selection=TargetSelection.ORIGINAL,
    )
    orig_stage1 = {json.loads(l)["source_id"]: json.loads(l)["messages"][-1]["content"]
                   for l in (Path(tmp) / "orig" / orig.stages[0]["file"]).read_text().splitlines()}
    with_original = [r for r in corpus if r.original_proof is not None]
    print(f"\n{len(with_original)} records carry an original proof")
    for record in with_original:
        assert orig_stage1[record.id] == record.original_proof
        assert stage1[record.id] == record.proof
    print("ORIGINAL selection swaps in the scraped proof; ANNOTATED keeps the rewrite")
