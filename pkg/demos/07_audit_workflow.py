"""
Human audit of verifier scores, end to end.

Verifier rewards are only trustworthy if humans broadly agree with them.
The audit workflow stratifies judged outputs by model family, benchmark,
and score bin, samples a fixed number from each stratum, collects
blind human scores, and reports per-bin calibration plus an overall
correlation. The store is a write-ahead event log: every mutation hits
disk before it is acknowledged, so a crash can lose at most the request
in flight, and replaying the log reproduces the exact state.
"""

from __future__ import annotations

import json
import random
import tempfile
from pathlib import Path

from proofkit.audit import (
    AlreadyScoredError,
    AuditStore,
    JudgedOutput,
    bin_index,
    calibration_report,
    human_total,
    stratified_sample,
)

# === A POOL OF JUDGED OUTPUTS ===

# Two model families evaluated on two benchmarks, with verifier totals
# spread over the whole range. In production this pool comes straight
# from reward or judge runs.
rng = random.Random(2024)
pool = []
for family in ("prover-large", "prover-small"):
    for benchmark in ("FIMO", "PutnamBench"):
        for k in range(30):
            llm_total = round(min(0.99, max(0.01, rng.betavariate(2.2, 1.8))), 4)
            pool.append(
                JudgedOutput(
                    item_id=f"{benchmark.lower()}-{k:03d}",
                    model_family=family,
                    benchmark=benchmark,
                    llm_total=llm_total,
                    question=f"Problem {k} from {benchmark}.",
                    response=f"Candidate proof {k} by {family}.",
                )
            )
print(f"pool: {len(pool)} judged outputs")

# Score bins are fixed at [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8),
# [0.8,1.0], the last one closed so a perfect 1.0 has a home.
print("bin_index(0.0) =", bin_index(0.0), " bin_index(0.79) =", bin_index(0.79),
      " bin_index(1.0) =", bin_index(1.0))

# === STRATIFIED SAMPLING ===

# One stratum per (family, benchmark, bin) combination; the same seed
# always picks the same samples, so an audit can be re-issued.
samples = stratified_sample(pool, per_stratum=2, seed=11)
again = stratified_sample(pool, per_stratum=2, seed=11)
assert [s.sample_id for s in samples] == [s.sample_id for s in again]
strata = {(s.model_family, s.benchmark, s.score_bin) for s in samples}
print(f"\nsampled {len(samples)} outputs across {len(strata)} non-empty strata "
      "(2 per stratum where available)")

# === THE EVENT-LOGGED STORE ===

with tempfile.TemporaryDirectory() as tmp:
    store_dir = Path(tmp) / "audit"
    store = AuditStore(store_dir)
    added = store.add_samples(samples)
    print(f"\nadded {added} samples to the store")

    # Adding the same batch twice is a no-op; the WAL stays replayable.
    assert store.add_samples(samples) == 0
    print("re-adding the same batch added 0 (idempotent)")

    events_file = store_dir / "events.jsonl"
    n_events = len(events_file.read_text().splitlines())
    print(f"events.jsonl holds {n_events} events, one per accepted mutation")

    # === HUMAN SCORES COME IN ===

    # Simulate reviewers whose four dimension scores track the verifier
    # total with noise. Scores land on the same 0.1 grid humans are shown.
    def fake_review(sample, reviewer_rng):
        base = min(1.0, max(0.0, sample.llm_total + reviewer_rng.gauss(0.0, 0.12)))
        return tuple(
            round(min(1.0, max(0.0, base + reviewer_rng.gauss(0.0, 0.05))) * 10) / 10
            for _ in range(4)
        )

    reviewer_rng = random.Random(5)
    pending = store.pending()
    for i, sample in enumerate(pending):
        reviewer = f"reviewer-{i % 3 + 1}"
        store.ingest_human_score(sample.sample_id, reviewer, fake_review(sample, reviewer_rng))
    print(f"\nscored {len(store.scored())} samples with 3 simulated reviewers")

    # The human total uses the same four weights as the verifier reward,
    # so the two columns of the calibration table are commensurable.
    example = store.scored()[0]
    print(f"example: human scores {example.human_scores} "
          f"-> weighted total {human_total(example.human_scores):.4f} "
          f"(verifier said {example.llm_total:.4f})")

    # Double scoring is rejected unless the caller explicitly replaces,
    # and a replacement is itself an event carrying what it overwrote.
    try:
        store.ingest_human_score(example.sample_id, "reviewer-9", (1.0, 1.0, 1.0, 1.0))
    except AlreadyScoredError as exc:
        print(f"\nsecond score rejected: {exc}")
    store.ingest_human_score(
        example.sample_id, "reviewer-9", (1.0, 1.0, 1.0, 1.0), replace_existing=True
    )
    replaced = store.replacement_events()
    print(f"explicit replace recorded: {len(replaced)} replacement event(s), "
          f"previous reviewer {replaced[0]['replaced']['reviewer_id']!r}")

    # === CALIBRATION REPORT ===

    report = calibration_report(store)
    print("\n=== calibration ===")
    print(f"{'bin':>8} {'n':>4} {'LLM mean':>9} {'human mean':>11} {'diff':>7}")
    for row in report.rows:
        print(f"{row.bin_label:>8} {row.count:>4} {row.mean_llm:>9.3f} "
              f"{row.mean_human:>11.3f} {row.difference:>+7.3f}")
    print(f"scored samples: {report.total_scored}, "
          f"overall correlation: {report.overall_correlation:.3f}")

    # === CRASH SAFETY: REPLAY AND COMPACTION ===

    # A brand-new store over the same directory replays the log and sees
    # the identical state, scores and all.
    replayed = AuditStore(store_dir)
    assert len(replayed.scored()) == len(store.scored())
    assert replayed.get(example.sample_id).human_scores == (1.0, 1.0, 1.0, 1.0)
    print("\nfresh store over the same directory replays to identical state")

    # Compaction folds the log into snapshot.json and truncates it, which
    # keeps replay time flat over long-lived audits.
    store.compact()
    snapshot = json.loads((store_dir / "snapshot.json").read_text())
    print(f"after compact(): events.jsonl holds "
          f"{len(events_file.read_text().splitlines())} events, "
          f"snapshot holds {len(snapshot['samples'])} samples")
    final = AuditStore(store_dir)
    assert len(final.all_samples()) == len(samples)
    report2 = calibration_report(final)
    assert report2.total_scored == report.total_scored
    print("state after compaction matches: same totals, same report")
