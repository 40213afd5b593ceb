"""Human-audit protocol: stratified sampling, durable score storage,
and per-bin calibration reporting.

Samples live in an append-only JSONL event log with a periodically
compacted snapshot.  Every mutation is fsynced to the log before the
caller sees an acknowledgment, so a sample reported as Scored survives
a hard process kill.  Replay is idempotent, which makes the
snapshot-then-truncate compaction step crash-safe at any point.

Human totals are weighted with the same dimension weights the verifier
uses (0.30 insight, 0.30 validity, 0.25 completeness, 0.15 clarity) so
per-bin comparisons line up dimension for dimension.  The paper behind
the calibration table does not say how its human totals were formed;
this choice is the documented interpretation.
"""

from __future__ import annotations

import json
import math
import os
import random
import statistics
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .reward import RewardWeights

SCORE_BINS = ((0.0, 0.2), (0.2, 0.4), (0.4, 0.6), (0.6, 0.8), (0.8, 1.0))
BIN_LABELS = tuple(f"{lo:.1f}-{hi:.1f}" for lo, hi in SCORE_BINS)

DIMENSIONS = ("insight", "validity", "completeness", "clarity")


class EmptyPoolError(ValueError):
    pass


class UnknownSampleError(KeyError):
    pass


class OutOfRangeScoreError(ValueError):
    pass


class AlreadyScoredError(ValueError):
    pass


class NoScoredSamplesError(ValueError):
    pass


class SampleStatus(Enum):
    PENDING = "pending"
    SCORED = "scored"


def bin_index(total: float) -> int:
    """Lower-inclusive bins; the last bin also contains 1.0."""
    if not 0.0 <= total <= 1.0:
        raise OutOfRangeScoreError(f"total {total} outside [0, 1]")
    for i, (lo, hi) in enumerate(SCORE_BINS):
        if lo <= total < hi:
            return i
    return len(SCORE_BINS) - 1


def human_total(scores: Sequence[float], weights: RewardWeights | None = None) -> float:
    weights = weights or RewardWeights()
    w = (weights.insight, weights.validity, weights.completeness, weights.clarity)
    return math.fsum(wi * s for wi, s in zip(w, scores))


@dataclass(frozen=True)
class JudgedOutput:
    """One judged proof as it enters the audit pool."""

    item_id: str
    model_family: str
    benchmark: str
    llm_total: float
    question: str
    response: str


@dataclass(frozen=True)
class AuditSample:
    sample_id: str
    item_id: str
    model_family: str
    benchmark: str
    llm_total: float
    score_bin: int
    question: str
    response: str
    human_scores: tuple[float, float, float, float] | None = None
    reviewer_id: str | None = None

    def __post_init__(self):
        if self.score_bin != bin_index(self.llm_total):
            raise ValueError(
                f"score_bin {self.score_bin} inconsistent with llm_total {self.llm_total}"
            )
        if self.human_scores is not None:
            if len(self.human_scores) != 4:
                raise OutOfRangeScoreError("human_scores must have 4 dimensions")
            for s in self.human_scores:
                if not 0.0 <= s <= 1.0:
                    raise OutOfRangeScoreError(f"score {s} outside [0, 1]")

    @property
    def status(self) -> SampleStatus:
        return SampleStatus.SCORED if self.human_scores is not None else SampleStatus.PENDING

    @property
    def human_total(self) -> float | None:
        if self.human_scores is None:
            return None
        return human_total(self.human_scores)

    def as_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "item_id": self.item_id,
            "model_family": self.model_family,
            "benchmark": self.benchmark,
            "llm_total": self.llm_total,
            "score_bin": self.score_bin,
            "question": self.question,
            "response": self.response,
            "human_scores": list(self.human_scores) if self.human_scores else None,
            "reviewer_id": self.reviewer_id,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> AuditSample:
        return cls(
            sample_id=obj["sample_id"],
            item_id=obj["item_id"],
            model_family=obj["model_family"],
            benchmark=obj["benchmark"],
            llm_total=obj["llm_total"],
            score_bin=obj["score_bin"],
            question=obj["question"],
            response=obj["response"],
            human_scores=tuple(obj["human_scores"]) if obj.get("human_scores") else None,
            reviewer_id=obj.get("reviewer_id"),
        )


def stratified_sample(
    pool: Sequence[JudgedOutput], per_stratum: int, seed: int
) -> list[AuditSample]:
    """Draw up to per_stratum items uniformly without replacement from
    every (model_family, benchmark, score_bin) stratum; deterministic
    for a fixed seed."""
    if per_stratum < 1:
        raise ValueError("per_stratum must be at least 1")
    if not pool:
        raise EmptyPoolError("audit pool is empty")
    strata: dict[tuple[str, str, int], list[JudgedOutput]] = {}
    for item in pool:
        key = (item.model_family, item.benchmark, bin_index(item.llm_total))
        strata.setdefault(key, []).append(item)

    rng = random.Random(seed)
    samples = []
    counter = 0
    for key in sorted(strata):
        items = strata[key]
        for item in rng.sample(items, min(per_stratum, len(items))):
            samples.append(
                AuditSample(
                    sample_id=f"as-{counter:05d}-{item.item_id}",
                    item_id=item.item_id,
                    model_family=item.model_family,
                    benchmark=item.benchmark,
                    llm_total=item.llm_total,
                    score_bin=key[2],
                    question=item.question,
                    response=item.response,
                )
            )
            counter += 1
    return samples


# --- durable store ---------------------------------------------------------------

EVENTS_FILENAME = "events.jsonl"
SNAPSHOT_FILENAME = "snapshot.json"


class AuditStore:
    """Append-only event log plus compacted snapshot, single writer.

    Mutations append one event line, flush, and fsync before the
    in-memory state changes; readers therefore never observe a state
    that could be lost by a crash.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.events_path = self.directory / EVENTS_FILENAME
        self.snapshot_path = self.directory / SNAPSHOT_FILENAME
        self._lock = threading.Lock()
        self._samples: dict[str, AuditSample] = {}
        self._order: list[str] = []
        self._load()

    # -- persistence --------------------------------------------------------

    def _load(self):
        if self.snapshot_path.exists():
            with open(self.snapshot_path, encoding="utf-8") as fh:
                snapshot = json.load(fh)
            for obj in snapshot["samples"]:
                sample = AuditSample.from_dict(obj)
                self._samples[sample.sample_id] = sample
                self._order.append(sample.sample_id)
        if self.events_path.exists():
            with open(self.events_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._apply(json.loads(line))

    def _apply(self, event: dict):
        if event["type"] == "add_sample":
            sample = AuditSample.from_dict(event["sample"])
            if sample.sample_id not in self._samples:
                self._order.append(sample.sample_id)
            self._samples[sample.sample_id] = sample
        elif event["type"] == "score":
            sample = self._samples[event["sample_id"]]
            self._samples[sample.sample_id] = replace(
                sample,
                human_scores=tuple(event["scores"]),
                reviewer_id=event["reviewer_id"],
            )
        else:
            raise ValueError(f"unknown event type {event['type']!r}")

    def _append_event(self, event: dict):
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self):
        """Fold the event log into the snapshot; crash-safe because
        replaying already-folded events is a no-op."""
        with self._lock:
            tmp = self.snapshot_path.with_suffix(".json.tmp")
            payload = {"samples": [self._samples[sid].as_dict() for sid in self._order]}
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, ensure_ascii=False)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self.snapshot_path)
            with open(self.events_path, "w", encoding="utf-8") as fh:
                fh.flush()
                os.fsync(fh.fileno())

    # -- queries -------------------------------------------------------------

    def get(self, sample_id: str) -> AuditSample:
        try:
            return self._samples[sample_id]
        except KeyError:
            raise UnknownSampleError(sample_id) from None

    def all_samples(self) -> list[AuditSample]:
        return [self._samples[sid] for sid in self._order]

    def pending(self) -> list[AuditSample]:
        return [s for s in self.all_samples() if s.status is SampleStatus.PENDING]

    def scored(self) -> list[AuditSample]:
        return [s for s in self.all_samples() if s.status is SampleStatus.SCORED]

    # -- mutations -------------------------------------------------------------

    def add_samples(self, samples: Iterable[AuditSample]) -> int:
        added = 0
        with self._lock:
            for sample in samples:
                if sample.sample_id in self._samples:
                    continue
                self._append_event({"type": "add_sample", "sample": sample.as_dict()})
                self._samples[sample.sample_id] = sample
                self._order.append(sample.sample_id)
                added += 1
        return added

    def ingest_human_score(
        self,
        sample_id: str,
        reviewer_id: str,
        scores: Sequence[float],
        replace_existing: bool = False,
    ) -> AuditSample:
        """Record a reviewer's four dimension scores.

        Re-scoring an already Scored sample requires the explicit
        replacement flag and logs the prior value alongside the new one.
        """
        if len(scores) != 4:
            raise OutOfRangeScoreError(f"expected 4 dimension scores, got {len(scores)}")
        for s in scores:
            if not isinstance(s, (int, float)) or not math.isfinite(s) or not 0.0 <= s <= 1.0:
                raise OutOfRangeScoreError(f"score {s} outside [0, 1]")
        with self._lock:
            sample = self.get(sample_id)
            replaced = None
            if sample.status is SampleStatus.SCORED:
                if not replace_existing:
                    raise AlreadyScoredError(
                        f"sample {sample_id} already scored by {sample.reviewer_id}"
                    )
                replaced = {
                    "scores": list(sample.human_scores),
                    "reviewer_id": sample.reviewer_id,
                }
            event = {
                "type": "score",
                "sample_id": sample_id,
                "reviewer_id": reviewer_id,
                "scores": [float(s) for s in scores],
                "replaced": replaced,
            }
            self._append_event(event)
            self._apply(event)
            return self._samples[sample_id]

    def replacement_events(self) -> list[dict]:
        """Score events that replaced a prior value, straight from the log."""
        events = []
        if self.events_path.exists():
            with open(self.events_path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    event = json.loads(line)
                    if event.get("type") == "score" and event.get("replaced"):
                        events.append(event)
        return events


# --- calibration -------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationRow:
    bin_label: str
    count: int
    mean_llm: float
    mean_human: float
    difference: float


@dataclass(frozen=True)
class CalibrationReport:
    rows: tuple[CalibrationRow, ...]
    total_scored: int
    overall_correlation: float | None

    def __post_init__(self):
        if sum(r.count for r in self.rows) != self.total_scored:
            raise ValueError("bin counts must sum to the scored total")

    def as_dict(self) -> dict:
        return {
            "rows": [
                {
                    "bin": r.bin_label,
                    "count": r.count,
                    "mean_llm": r.mean_llm,
                    "mean_human": r.mean_human,
                    "difference": r.difference,
                }
                for r in self.rows
            ],
            "total_scored": self.total_scored,
            "overall_correlation": self.overall_correlation,
        }


def calibration_report(store: AuditStore) -> CalibrationReport:
    """Per-bin means of LLM and human totals over scored samples, plus
    Pearson correlation across all of them."""
    scored = store.scored()
    if not scored:
        raise NoScoredSamplesError("no scored samples to report on")

    by_bin: dict[int, list[AuditSample]] = {}
    for sample in scored:
        by_bin.setdefault(sample.score_bin, []).append(sample)

    rows = []
    for index in sorted(by_bin):
        members = by_bin[index]
        mean_llm = math.fsum(s.llm_total for s in members) / len(members)
        mean_human = math.fsum(s.human_total for s in members) / len(members)
        rows.append(
            CalibrationRow(
                bin_label=BIN_LABELS[index],
                count=len(members),
                mean_llm=mean_llm,
                mean_human=mean_human,
                difference=mean_llm - mean_human,
            )
        )

    llm_totals = [s.llm_total for s in scored]
    human_totals = [s.human_total for s in scored]
    try:
        correlation = statistics.correlation(llm_totals, human_totals)
    except statistics.StatisticsError:
        correlation = None
    return CalibrationReport(
        rows=tuple(rows), total_scored=len(scored), overall_correlation=correlation
    )
