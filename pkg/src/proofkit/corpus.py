"""Annotation pipeline: base theorem-proof pairs in, validated
hierarchical records out.

Each base item is sent through the data-construction prompt; the
completion must parse as a full tagged record to be accepted.  Accepted
records are deduplicated on normalized question text and summarized
with technique-count statistics.  Two technique counts are tracked
because category bodies may name several theorems at once: the simple
count is the number of non-absent categories, the split count
additionally counts top-level ";" / " and " delimiters inside the
theorem-call body.  Both appear in reports so the ambiguity stays
visible.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import ChatGateway, CompletionRequest, GatewayError
from .hierarchy import (
    HierarchicalRecord,
    ParseError,
    StageView,
    TechniqueCategory,
    TheoremRecord,
    parse_corpus_line,
    parse_hierarchical,
    render_corpus_line,
)
from .prompts import TemplateId, fill, load_template, template_digest

GUIDING_PREFIX = "Let's analyze the conditions"


class PipelineConfigError(ValueError):
    pass


class IoFailureError(OSError):
    pass


class AnnotationStatus(Enum):
    ACCEPTED = "accepted"
    PARSE_FAILED = "parse_failed"
    API_FAILED = "api_failed"
    DUPLICATE_DROPPED = "duplicate_dropped"


@dataclass(frozen=True)
class AnnotationOutcome:
    record_id: str
    status: AnnotationStatus
    attempts: int
    record: HierarchicalRecord | None = None
    failure_detail: str | None = None
    lints: tuple[str, ...] = ()

    def __post_init__(self):
        if (self.status is AnnotationStatus.ACCEPTED) != (self.record is not None):
            raise ValueError("record must be present exactly when accepted")


def _build_annotated_record(base: TheoremRecord, completion: str) -> HierarchicalRecord:
    parsed = parse_hierarchical(completion, StageView.FULL)
    original = base.proof if parsed.proof != base.proof else None
    return replace(
        parsed,
        id=base.id,
        question=base.question,
        original_proof=original,
        trailing_text_ignored=False,
    )


def _lints_for(record: HierarchicalRecord) -> tuple[str, ...]:
    lints = []
    if record.insight is not None and not record.insight.analysis.startswith(GUIDING_PREFIX):
        lints.append(f"analysis does not begin with {GUIDING_PREFIX!r}")
    return tuple(lints)


def build_annotation_request(
    base: TheoremRecord, model: str, max_tokens: int = 4096, temperature: float = 0.0
) -> CompletionRequest:
    template = load_template(TemplateId.DATA_CONSTRUCTION)
    prompt = fill(template, {"question": base.question, "response": base.proof})
    return CompletionRequest.simple(model, prompt, max_tokens=max_tokens, temperature=temperature)


def annotate_one(
    base: TheoremRecord,
    gateway: ChatGateway,
    model: str,
    max_attempts: int = 3,
) -> AnnotationOutcome:
    """Annotate a single base record, retrying malformed or failed
    completions; every failure ends up in the outcome, never raised."""
    if max_attempts < 1:
        raise PipelineConfigError("max_attempts must be at least 1")
    request = build_annotation_request(base, model)
    failure: tuple[AnnotationStatus, str] | None = None
    for attempt in range(1, max_attempts + 1):
        try:
            completion = gateway.complete(request).text
        except GatewayError as exc:
            failure = (AnnotationStatus.API_FAILED, str(exc))
            continue
        try:
            record = _build_annotated_record(base, completion)
        except ParseError as exc:
            failure = (AnnotationStatus.PARSE_FAILED, str(exc))
            continue
        return AnnotationOutcome(
            record_id=base.id,
            status=AnnotationStatus.ACCEPTED,
            attempts=attempt,
            record=record,
            lints=_lints_for(record),
        )
    status, detail = failure
    return AnnotationOutcome(
        record_id=base.id, status=status, attempts=max_attempts, failure_detail=detail
    )


# --- dedup ---------------------------------------------------------------------


def normalize_question(text: str) -> str:
    return re.sub(r"\s+", " ", unicodedata.normalize("NFC", text)).strip()


def question_key(text: str) -> str:
    return hashlib.sha256(normalize_question(text).encode("utf-8")).hexdigest()


def dedup(records: Iterable[HierarchicalRecord]) -> tuple[list[HierarchicalRecord], list[str]]:
    """Keep the first record per normalized question; order preserved."""
    seen = set()
    kept = []
    dropped_ids = []
    for position, record in enumerate(records):
        if record.question is None:
            raise ValueError("dedup needs records with question text")
        key = question_key(record.question)
        if key in seen:
            dropped_ids.append(record.id if record.id is not None else str(position))
        else:
            seen.add(key)
            kept.append(record)
    return kept, dropped_ids


# --- statistics ------------------------------------------------------------------

_MATH_SPAN_RE = re.compile(r"\$[^$]*\$")


def split_theorem_call(body: str) -> list[str]:
    """Split a theorem-call body on top-level ";" and " and " delimiters,
    ignoring anything inside $...$ math."""
    masked = _MATH_SPAN_RE.sub(lambda m: "\x00" * len(m.group(0)), body)
    parts = []
    start = 0
    for m in re.finditer(r";|\band\b", masked):
        parts.append(body[start : m.start()])
        start = m.end()
    parts.append(body[start:])
    return [p.strip() for p in parts if p.strip()]


def technique_counts(record: HierarchicalRecord) -> tuple[int, int]:
    """(simple, split) technique counts for one record.

    Simple counts non-absent categories.  Split additionally counts the
    extra theorems named inside a multi-theorem theorem-call body.
    """
    if record.insight is None:
        return 0, 0
    simple = sum(1 for t in record.insight.techniques if not t.absent)
    call = record.insight.technique(TechniqueCategory.THEOREM_CALL)
    extra = 0
    if call.description is not None:
        extra = max(0, len(split_theorem_call(call.description)) - 1)
    return simple, simple + extra


@dataclass(frozen=True)
class CorpusStats:
    record_count: int
    technique_count_histogram: dict
    mean_techniques: float
    simple_count_histogram: dict
    mean_techniques_simple: float
    per_category_counts: dict
    top_techniques_per_category: dict

    def __post_init__(self):
        if sum(self.technique_count_histogram.values()) != self.record_count:
            raise ValueError("histogram must sum to record_count")

    def as_dict(self) -> dict:
        return {
            "record_count": self.record_count,
            "technique_count_histogram": {
                str(k): v for k, v in sorted(self.technique_count_histogram.items())
            },
            "mean_techniques": self.mean_techniques,
            "simple_count_histogram": {
                str(k): v for k, v in sorted(self.simple_count_histogram.items())
            },
            "mean_techniques_simple": self.mean_techniques_simple,
            "per_category_counts": {
                category.value: count for category, count in self.per_category_counts.items()
            },
            "top_techniques_per_category": {
                category.value: ranked
                for category, ranked in self.top_techniques_per_category.items()
            },
        }


def normalize_description(text: str) -> str:
    return re.sub(r"\s+", " ", unicodedata.normalize("NFC", text)).strip().casefold()


def compute_stats(records: Sequence[HierarchicalRecord], top_n: int = 10) -> CorpusStats:
    split_hist: Counter = Counter()
    simple_hist: Counter = Counter()
    category_counts = {category: 0 for category in TechniqueCategory}
    descriptions = {category: Counter() for category in TechniqueCategory}
    for record in records:
        simple, split = technique_counts(record)
        simple_hist[simple] += 1
        split_hist[split] += 1
        if record.insight is None:
            continue
        for technique in record.insight.techniques:
            if technique.absent:
                continue
            category_counts[technique.category] += 1
            descriptions[technique.category][normalize_description(technique.description)] += 1

    n = len(records)

    def hist_mean(hist: Counter) -> float:
        if n == 0:
            return 0.0
        return math.fsum(k * count for k, count in hist.items()) / n

    return CorpusStats(
        record_count=n,
        technique_count_histogram=dict(split_hist),
        mean_techniques=hist_mean(split_hist),
        simple_count_histogram=dict(simple_hist),
        mean_techniques_simple=hist_mean(simple_hist),
        per_category_counts=category_counts,
        top_techniques_per_category={
            category: counter.most_common(top_n) for category, counter in descriptions.items()
        },
    )


# --- pipeline ----------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    model: str
    out_path: Path
    report_path: Path | None = None
    max_attempts: int = 3
    max_in_flight: int = 8
    max_tokens: int = 4096
    temperature: float = 0.0

    def __post_init__(self):
        if not self.model:
            raise PipelineConfigError("model must be set")
        if self.max_attempts < 1:
            raise PipelineConfigError("max_attempts must be at least 1")
        if self.max_in_flight < 1:
            raise PipelineConfigError("max_in_flight must be at least 1")


@dataclass(frozen=True)
class AnnotationReport:
    total: int
    accepted: int
    acceptance_rate: float
    failure_breakdown: dict
    dropped_duplicates: int
    lint_count: int
    stats: CorpusStats
    prompt_digest: str
    model: str

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "accepted": self.accepted,
            "acceptance_rate": self.acceptance_rate,
            "failure_breakdown": dict(sorted(self.failure_breakdown.items())),
            "dropped_duplicates": self.dropped_duplicates,
            "lint_count": self.lint_count,
            "stats": self.stats.as_dict(),
            "prompt_digest": self.prompt_digest,
            "model": self.model,
        }


def load_base_corpus(path) -> list[TheoremRecord]:
    """Base corpus JSONL: one {"id", "question", "proof"} object per line."""
    records = []
    with open(Path(path), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(
                    TheoremRecord(id=str(obj["id"]), question=obj["question"], proof=obj["proof"])
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad base corpus line: {exc}") from exc
    return records


def run_pipeline(
    base: Sequence[TheoremRecord],
    gateway: ChatGateway,
    config: PipelineConfig,
) -> tuple[list[AnnotationOutcome], AnnotationReport]:
    """Annotate, dedup, summarize, and write the corpus file.

    Annotation requests fan out in rounds through the gateway's bounded
    batching; retries re-enter the next round so a transient failure
    never burns more than one attempt.  Output order follows the base
    corpus order, so a fixed mock script reproduces the file byte for
    byte.
    """
    out_path = Path(config.out_path)
    try:
        out_handle = open(out_path, "w", encoding="utf-8")
    except OSError as exc:
        raise IoFailureError(f"cannot write corpus file {out_path}: {exc}") from exc

    template = load_template(TemplateId.DATA_CONSTRUCTION)
    try:
        outcomes = _annotate_all(base, gateway, config)
    except BaseException:
        out_handle.close()
        raise

    ordered = [outcomes[i] for i in range(len(base))]
    accepted = [o for o in ordered if o.status is AnnotationStatus.ACCEPTED]
    kept, dropped_ids = dedup([o.record for o in accepted])
    dropped = set(dropped_ids)
    final_outcomes = []
    for outcome in ordered:
        if outcome.status is AnnotationStatus.ACCEPTED and outcome.record_id in dropped:
            outcome = replace(
                outcome,
                status=AnnotationStatus.DUPLICATE_DROPPED,
                record=None,
                failure_detail="duplicate question",
            )
        final_outcomes.append(outcome)

    try:
        with out_handle:
            for record in kept:
                out_handle.write(render_corpus_line(record) + "\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write corpus file {out_path}: {exc}") from exc

    stats = compute_stats(kept)
    breakdown = Counter(
        o.status.value for o in final_outcomes if o.status is not AnnotationStatus.ACCEPTED
    )
    report = AnnotationReport(
        total=len(base),
        accepted=len(kept),
        acceptance_rate=len(kept) / len(base) if base else 0.0,
        failure_breakdown=dict(breakdown),
        dropped_duplicates=len(dropped_ids),
        lint_count=sum(len(o.lints) for o in final_outcomes),
        stats=stats,
        prompt_digest=template_digest(template),
        model=config.model,
    )
    if config.report_path is not None:
        try:
            with open(Path(config.report_path), "w", encoding="utf-8") as fh:
                json.dump(report.as_dict(), fh, ensure_ascii=False, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise IoFailureError(f"cannot write report {config.report_path}: {exc}") from exc
    return final_outcomes, report


def _annotate_all(
    base: Sequence[TheoremRecord], gateway: ChatGateway, config: PipelineConfig
) -> dict[int, AnnotationOutcome]:
    outcomes: dict[int, AnnotationOutcome] = {}
    pending = list(range(len(base)))
    failures: dict[int, tuple[AnnotationStatus, str]] = {}

    for attempt in range(1, config.max_attempts + 1):
        if not pending:
            break
        requests = [
            build_annotation_request(
                base[i], config.model, max_tokens=config.max_tokens, temperature=config.temperature
            )
            for i in pending
        ]
        results = gateway.complete_batch(requests, max_in_flight=config.max_in_flight)
        next_pending = []
        for (_, result), i in zip(results, pending):
            if isinstance(result, GatewayError):
                failures[i] = (AnnotationStatus.API_FAILED, str(result))
                next_pending.append(i)
                continue
            try:
                record = _build_annotated_record(base[i], result.text)
            except ParseError as exc:
                failures[i] = (AnnotationStatus.PARSE_FAILED, str(exc))
                next_pending.append(i)
                continue
            outcomes[i] = AnnotationOutcome(
                record_id=base[i].id,
                status=AnnotationStatus.ACCEPTED,
                attempts=attempt,
                record=record,
                lints=_lints_for(record),
            )
        pending = next_pending

    for i in pending:
        status, detail = failures[i]
        outcomes[i] = AnnotationOutcome(
            record_id=base[i].id,
            status=status,
            attempts=config.max_attempts,
            failure_detail=detail,
        )
    return outcomes


def load_corpus(path) -> list[HierarchicalRecord]:
    """Read a corpus JSONL file, validating every line."""
    records = []
    with open(Path(path), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(parse_corpus_line(line))
            except Exception as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from exc
    return records
