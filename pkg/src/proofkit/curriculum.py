"""Stage-specific SFT dataset views over hierarchical records.

Stage 1 trains on bare proofs, stage 2 adds the sketch, stage 3 the
full tagged hierarchy; the tagged rendering keeps the technique ->
sketch -> proof order so the proof is always the final section and can
be extracted downstream by taking the last <proof> body.  A two-stage
schedule simply skips the middle view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .hierarchy import HierarchicalRecord, StageView, render_hierarchical

DEFAULT_EPOCHS = 3

STAGE_FILENAMES = {
    StageView.PROOF_ONLY: "stage1.jsonl",
    StageView.SKETCH_PROOF: "stage2.jsonl",
    StageView.FULL: "stage3.jsonl",
}


class IoFailureError(OSError):
    pass


class TargetSelection(Enum):
    ORIGINAL = "original"
    ANNOTATED = "annotated"


class Schedule(Enum):
    THREE_STAGE = "three_stage"
    TWO_STAGE = "two_stage"

    @property
    def stages(self) -> tuple[StageView, ...]:
        if self is Schedule.TWO_STAGE:
            return (StageView.PROOF_ONLY, StageView.FULL)
        return (StageView.PROOF_ONLY, StageView.SKETCH_PROOF, StageView.FULL)


@dataclass(frozen=True)
class StageExample:
    question: str
    target: str
    stage: StageView
    source_id: str


@dataclass(frozen=True)
class EmitResult:
    examples: tuple[StageExample, ...]
    skipped_ids: tuple[str, ...]

    @property
    def skipped(self) -> int:
        return len(self.skipped_ids)


def _effective_record(record: HierarchicalRecord, selection: TargetSelection) -> HierarchicalRecord:
    if selection is TargetSelection.ORIGINAL and record.original_proof is not None:
        return replace(record, proof=record.original_proof, original_proof=None)
    return record


def _has_components(record: HierarchicalRecord, stage: StageView) -> bool:
    if stage is StageView.FULL:
        return record.insight is not None and record.sketch is not None
    if stage is StageView.SKETCH_PROOF:
        return record.sketch is not None
    return True


def stage_target(record: HierarchicalRecord, stage: StageView) -> str:
    """The assistant-side training text for one record and stage."""
    if stage is StageView.PROOF_ONLY:
        return record.proof
    return render_hierarchical(record, stage)


def emit_stage(
    corpus: Sequence[HierarchicalRecord],
    stage: StageView,
    target_selection: TargetSelection = TargetSelection.ANNOTATED,
) -> EmitResult:
    """Build stage examples, skipping records lacking the stage's
    components; skipped ids are reported, never raised."""
    examples = []
    skipped = []
    for position, record in enumerate(corpus):
        source_id = record.id if record.id is not None else str(position)
        if record.question is None or not _has_components(record, stage):
            skipped.append(source_id)
            continue
        effective = _effective_record(record, target_selection)
        examples.append(
            StageExample(
                question=record.question,
                target=stage_target(effective, stage),
                stage=stage,
                source_id=source_id,
            )
        )
    return EmitResult(examples=tuple(examples), skipped_ids=tuple(skipped))


def chat_line(example: StageExample, system_prompt: str | None = None) -> str:
    """One JSONL chat line: optional system turn, then user question and
    assistant target."""
    messages = []
    if system_prompt is not None:
        messages.append({"role": "system", "content": system_prompt})
    messages.append({"role": "user", "content": example.question})
    messages.append({"role": "assistant", "content": example.target})
    return json.dumps({"messages": messages, "source_id": example.source_id}, ensure_ascii=False)


@dataclass(frozen=True)
class ScheduleManifest:
    schedule: Schedule
    target_selection: TargetSelection
    stages: tuple[dict, ...]

    def as_dict(self) -> dict:
        return {
            "schedule": self.schedule.value,
            "target_selection": self.target_selection.value,
            "stages": list(self.stages),
        }


def emit_schedule(
    corpus: Sequence[HierarchicalRecord],
    schedule: Schedule,
    out_dir,
    target_selection: TargetSelection = TargetSelection.ANNOTATED,
    epochs: int = DEFAULT_EPOCHS,
    system_prompt: str | None = None,
) -> ScheduleManifest:
    """Write one chat JSONL file per scheduled stage plus manifest.json."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailureError(f"cannot create {out_dir}: {exc}") from exc

    stage_entries = []
    for stage in schedule.stages:
        result = emit_stage(corpus, stage, target_selection)
        filename = STAGE_FILENAMES[stage]
        try:
            with open(out_dir / filename, "w", encoding="utf-8") as fh:
                for example in result.examples:
                    fh.write(chat_line(example, system_prompt) + "\n")
        except OSError as exc:
            raise IoFailureError(f"cannot write {out_dir / filename}: {exc}") from exc
        stage_entries.append(
            {
                "stage": stage.value,
                "file": filename,
                "examples": len(result.examples),
                "skipped": result.skipped,
                "epochs": epochs,
            }
        )

    manifest = ScheduleManifest(
        schedule=schedule, target_selection=target_selection, stages=tuple(stage_entries)
    )
    try:
        with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest.as_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write manifest: {exc}") from exc
    return manifest
