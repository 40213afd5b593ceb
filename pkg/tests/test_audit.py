import json
import math
import random
import signal
import subprocess
import sys
from pathlib import Path

import pytest

from proofkit.audit import (
    AlreadyScoredError,
    AuditSample,
    AuditStore,
    CalibrationReport,
    CalibrationRow,
    EmptyPoolError,
    JudgedOutput,
    NoScoredSamplesError,
    OutOfRangeScoreError,
    UnknownSampleError,
    bin_index,
    calibration_report,
    human_total,
    stratified_sample,
)

SRC = Path(__file__).resolve().parent.parent / "src"


def judged(item_id, family="fam-a", benchmark="FIMO", total=0.5):
    return JudgedOutput(
        item_id=item_id,
        model_family=family,
        benchmark=benchmark,
        llm_total=total,
        question=f"Q for {item_id}",
        response=f"R for {item_id}",
    )


def pending_sample(sid, total=0.5, **kwargs):
    defaults = dict(
        sample_id=sid,
        item_id=f"item-{sid}",
        model_family="fam-a",
        benchmark="FIMO",
        llm_total=total,
        score_bin=bin_index(total),
        question="q",
        response="r",
    )
    defaults.update(kwargs)
    return AuditSample(**defaults)


# --- bins and totals -------------------------------------------------------------


def test_bin_edges_lower_inclusive():
    assert bin_index(0.0) == 0
    assert bin_index(0.19999) == 0
    assert bin_index(0.2) == 1
    assert bin_index(0.8) == 4
    assert bin_index(1.0) == 4


def test_bin_rejects_out_of_range():
    with pytest.raises(OutOfRangeScoreError):
        bin_index(1.01)
    with pytest.raises(OutOfRangeScoreError):
        bin_index(-0.1)


def test_human_total_uses_verifier_weights():
    assert human_total((1.0, 1.0, 1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)
    assert human_total((0.0, 1.0, 1.0, 1.0)) == pytest.approx(0.70, abs=1e-12)
    assert human_total((0.4, 0.4, 0.4, 0.4)) == pytest.approx(0.4, abs=1e-12)


def test_sample_invariants():
    with pytest.raises(ValueError):
        pending_sample("s1", total=0.9, score_bin=0)
    with pytest.raises(OutOfRangeScoreError):
        pending_sample("s1", human_scores=(0.5, 0.5, 0.5))
    with pytest.raises(OutOfRangeScoreError):
        pending_sample("s1", human_scores=(0.5, 0.5, 0.5, 1.2))
    scored = pending_sample("s1", human_scores=(0.5, 0.5, 0.5, 0.5), reviewer_id="r1")
    assert scored.status.value == "scored"
    assert scored.human_total == pytest.approx(0.5, abs=1e-12)


# --- stratified sampling -----------------------------------------------------------


def test_min_rule_per_stratum():
    pool = [judged(f"a{i}", family="fam-a", total=0.1) for i in range(10)]
    pool += [judged(f"b{i}", family="fam-b", total=0.1) for i in range(2)]
    samples = stratified_sample(pool, per_stratum=5, seed=1)
    by_family = {}
    for s in samples:
        by_family.setdefault(s.model_family, []).append(s)
    assert len(by_family["fam-a"]) == 5
    assert len(by_family["fam-b"]) == 2


def test_sampling_deterministic():
    pool = [judged(f"i{k}", total=k / 100) for k in range(100)]
    first = stratified_sample(pool, per_stratum=3, seed=42)
    second = stratified_sample(pool, per_stratum=3, seed=42)
    assert first == second


def test_sampling_without_replacement():
    pool = [judged(f"i{k}", total=0.5) for k in range(30)]
    samples = stratified_sample(pool, per_stratum=30, seed=7)
    assert len(samples) == 30
    assert len({s.sample_id for s in samples}) == 30
    assert len({s.item_id for s in samples}) == 30


def test_sampling_membership_full_scan():
    rng = random.Random(3)
    families = ["fam-a", "fam-b", "fam-c"]
    benchmarks = ["FIMO", "Putnam", "HMMT"]
    pool = [
        judged(
            f"i{k}",
            family=rng.choice(families),
            benchmark=rng.choice(benchmarks),
            total=rng.random(),
        )
        for k in range(1000)
    ]
    samples = stratified_sample(pool, per_stratum=4, seed=11)
    by_item = {p.item_id: p for p in pool}
    drawn_per_stratum = {}
    for s in samples:
        origin = by_item[s.item_id]
        assert s.model_family == origin.model_family
        assert s.benchmark == origin.benchmark
        assert s.llm_total == origin.llm_total
        assert s.score_bin == bin_index(origin.llm_total)
        key = (s.model_family, s.benchmark, s.score_bin)
        drawn_per_stratum[key] = drawn_per_stratum.get(key, 0) + 1
    stratum_sizes = {}
    for p in pool:
        key = (p.model_family, p.benchmark, bin_index(p.llm_total))
        stratum_sizes[key] = stratum_sizes.get(key, 0) + 1
    for key, drawn in drawn_per_stratum.items():
        assert drawn == min(4, stratum_sizes[key])
    assert set(drawn_per_stratum) == set(stratum_sizes)


def test_sampling_validation():
    with pytest.raises(EmptyPoolError):
        stratified_sample([], per_stratum=1, seed=0)
    with pytest.raises(ValueError):
        stratified_sample([judged("a")], per_stratum=0, seed=0)


# --- store basics --------------------------------------------------------------------


def test_store_add_and_reload(tmp_path):
    store = AuditStore(tmp_path)
    added = store.add_samples([pending_sample("s1"), pending_sample("s2", total=0.9)])
    assert added == 2
    assert store.add_samples([pending_sample("s1")]) == 0

    again = AuditStore(tmp_path)
    assert [s.sample_id for s in again.all_samples()] == ["s1", "s2"]
    assert len(again.pending()) == 2


def test_ingest_score_persists(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1")])
    updated = store.ingest_human_score("s1", "rev-1", [0.6, 0.7, 0.8, 0.9])
    assert updated.status.value == "scored"
    assert updated.reviewer_id == "rev-1"

    again = AuditStore(tmp_path)
    assert again.get("s1").human_scores == (0.6, 0.7, 0.8, 0.9)
    assert len(again.scored()) == 1


def test_ingest_validation(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1")])
    with pytest.raises(UnknownSampleError):
        store.ingest_human_score("nope", "r", [0.5] * 4)
    with pytest.raises(OutOfRangeScoreError):
        store.ingest_human_score("s1", "r", [0.5, 0.5, 0.5, 1.2])
    with pytest.raises(OutOfRangeScoreError):
        store.ingest_human_score("s1", "r", [0.5, 0.5, 0.5])
    with pytest.raises(OutOfRangeScoreError):
        store.ingest_human_score("s1", "r", [0.5, 0.5, 0.5, float("nan")])
    assert store.get("s1").status.value == "pending"


def test_rescore_requires_flag_and_logs_prior(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1")])
    store.ingest_human_score("s1", "rev-1", [0.5, 0.5, 0.5, 0.5])
    with pytest.raises(AlreadyScoredError):
        store.ingest_human_score("s1", "rev-2", [0.9, 0.9, 0.9, 0.9])
    updated = store.ingest_human_score(
        "s1", "rev-2", [0.9, 0.9, 0.9, 0.9], replace_existing=True
    )
    assert updated.human_scores == (0.9, 0.9, 0.9, 0.9)
    events = store.replacement_events()
    assert len(events) == 1
    assert events[0]["replaced"] == {"scores": [0.5, 0.5, 0.5, 0.5], "reviewer_id": "rev-1"}
    assert events[0]["reviewer_id"] == "rev-2"

    again = AuditStore(tmp_path)
    assert again.get("s1").human_scores == (0.9, 0.9, 0.9, 0.9)


def test_compaction_preserves_state(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample(f"s{i}", total=i / 10) for i in range(8)])
    store.ingest_human_score("s3", "rev", [0.4, 0.4, 0.4, 0.4])
    before = [(s.sample_id, s.status.value) for s in store.all_samples()]

    store.compact()
    assert (tmp_path / "snapshot.json").exists()
    assert (tmp_path / "events.jsonl").read_text(encoding="utf-8") == ""

    reloaded = AuditStore(tmp_path)
    assert [(s.sample_id, s.status.value) for s in reloaded.all_samples()] == before
    assert reloaded.get("s3").human_scores == (0.4, 0.4, 0.4, 0.4)


def test_compaction_replay_is_idempotent(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1"), pending_sample("s2")])
    store.ingest_human_score("s1", "rev", [0.5] * 4)
    stale_events = (tmp_path / "events.jsonl").read_bytes()
    store.compact()
    # A crash between snapshot write and log truncation leaves both the
    # folded snapshot and the old events behind; replay must not change
    # or duplicate anything.
    (tmp_path / "events.jsonl").write_bytes(stale_events)
    reloaded = AuditStore(tmp_path)
    assert [s.sample_id for s in reloaded.all_samples()] == ["s1", "s2"]
    assert reloaded.get("s1").human_scores == (0.5, 0.5, 0.5, 0.5)


def test_events_after_compaction_merge(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1")])
    store.compact()
    store.add_samples([pending_sample("s2")])
    store.ingest_human_score("s2", "rev", [0.2] * 4)
    reloaded = AuditStore(tmp_path)
    assert [s.sample_id for s in reloaded.all_samples()] == ["s1", "s2"]
    assert reloaded.get("s2").status.value == "scored"


def test_ack_survives_hard_kill(tmp_path):
    """A sample acknowledged as Scored must be durable before the ack."""
    store_dir = tmp_path / "store"
    child = f"""
import os, signal, sys
sys.path.insert(0, {str(SRC)!r})
from proofkit.audit import AuditStore, AuditSample
store = AuditStore({str(store_dir)!r})
store.add_samples([AuditSample(
    sample_id="s1", item_id="i1", model_family="fam", benchmark="FIMO",
    llm_total=0.5, score_bin=2, question="q", response="r")])
store.ingest_human_score("s1", "rev", [0.6, 0.6, 0.6, 0.6])
print("ACK", flush=True)
os.kill(os.getpid(), signal.SIGKILL)
"""
    proc = subprocess.run(
        [sys.executable, "-c", child], capture_output=True, text=True, timeout=60
    )
    assert "ACK" in proc.stdout
    assert proc.returncode == -signal.SIGKILL

    reloaded = AuditStore(store_dir)
    sample = reloaded.get("s1")
    assert sample.status.value == "scored"
    assert sample.human_scores == (0.6, 0.6, 0.6, 0.6)


# --- calibration ------------------------------------------------------------------------


PUBLISHED_TABLE = [
    # (bin count, llm mean, human mean)
    (22, 0.13, 0.15),
    (34, 0.32, 0.30),
    (41, 0.51, 0.46),
    (36, 0.68, 0.64),
    (27, 0.84, 0.79),
]


def seed_published_table(store):
    sid = 0
    for count, llm, human in PUBLISHED_TABLE:
        for _ in range(count):
            store.add_samples([pending_sample(f"s{sid:04d}", total=llm)])
            store.ingest_human_score(f"s{sid:04d}", "expert", [human] * 4)
            sid += 1


def test_calibration_reproduces_published_bins(tmp_path):
    store = AuditStore(tmp_path)
    seed_published_table(store)
    report = calibration_report(store)
    assert report.total_scored == 160
    assert len(report.rows) == 5
    for row, (count, llm, human) in zip(report.rows, PUBLISHED_TABLE):
        assert row.count == count
        assert row.mean_llm == pytest.approx(llm, abs=1e-12)
        assert row.mean_human == pytest.approx(human, abs=1e-12)
        assert row.difference == pytest.approx(llm - human, abs=1e-12)
    labels = [r.bin_label for r in report.rows]
    assert labels == ["0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"]


def test_calibration_requires_scored_samples(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1")])
    with pytest.raises(NoScoredSamplesError):
        calibration_report(store)


def test_calibration_single_sample_zero_difference(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1", total=0.4)])
    store.ingest_human_score("s1", "rev", [0.4] * 4)
    report = calibration_report(store)
    assert len(report.rows) == 1
    assert report.rows[0].difference == pytest.approx(0.0, abs=1e-12)
    assert report.overall_correlation is None


def test_calibration_only_populated_bins(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1", total=0.1), pending_sample("s2", total=0.9)])
    store.ingest_human_score("s1", "rev", [0.1] * 4)
    store.ingest_human_score("s2", "rev", [0.9] * 4)
    report = calibration_report(store)
    assert [r.bin_label for r in report.rows] == ["0.0-0.2", "0.8-1.0"]


def test_calibration_matches_full_scan_oracle(tmp_path):
    rng = random.Random(19)
    store = AuditStore(tmp_path)
    for i in range(60):
        total = rng.random()
        store.add_samples([pending_sample(f"s{i:03d}", total=total)])
        store.ingest_human_score(f"s{i:03d}", "rev", [rng.random() for _ in range(4)])
    report = calibration_report(store)

    scored = store.scored()
    populated = sorted({s.score_bin for s in scored})
    assert len(populated) == len(report.rows)
    for index, row in zip(populated, report.rows):
        members = [s for s in scored if s.score_bin == index]
        assert row.count == len(members)
        llm_mean = math.fsum(s.llm_total for s in members) / len(members)
        human_mean = math.fsum(
            math.fsum(w * x for w, x in zip((0.30, 0.30, 0.25, 0.15), s.human_scores))
            for s in members
        ) / len(members)
        assert row.mean_llm == pytest.approx(llm_mean, abs=1e-12)
        assert row.mean_human == pytest.approx(human_mean, abs=1e-12)
    assert sum(r.count for r in report.rows) == 60


def test_calibration_correlation_perfect(tmp_path):
    store = AuditStore(tmp_path)
    for i, total in enumerate([0.1, 0.3, 0.5, 0.7, 0.9]):
        store.add_samples([pending_sample(f"s{i}", total=total)])
        store.ingest_human_score(f"s{i}", "rev", [total] * 4)
    report = calibration_report(store)
    assert report.overall_correlation == pytest.approx(1.0, abs=1e-9)


def test_report_count_invariant():
    row = CalibrationRow("0.0-0.2", 3, 0.1, 0.1, 0.0)
    with pytest.raises(ValueError):
        CalibrationReport(rows=(row,), total_scored=5, overall_correlation=None)


def test_report_round_trips_to_json(tmp_path):
    store = AuditStore(tmp_path)
    store.add_samples([pending_sample("s1", total=0.25)])
    store.ingest_human_score("s1", "rev", [0.3] * 4)
    payload = calibration_report(store).as_dict()
    encoded = json.loads(json.dumps(payload))
    assert encoded["rows"][0]["bin"] == "0.2-0.4"
    assert encoded["total_scored"] == 1
