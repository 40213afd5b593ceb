"""
Annotating a base corpus with a (mock) language model.

The pipeline sends each bare theorem-proof pair to a chat model, expects
a tagged record back, validates it structurally, retries on garbage, and
drops duplicates. Here the model is a local mock server whose replies we
script ourselves, so the run is deterministic and offline. One record is
scripted to fail on the first attempt to show the retry path.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

from proofkit.corpus import (
    PipelineConfig,
    compute_stats,
    load_corpus,
    run_pipeline,
)
from proofkit.gateway import ChatGateway, RetryPolicy
from proofkit.hierarchy import StageView, TheoremRecord, parse_corpus_line, render_hierarchical
from proofkit.mockllm import MockLLMServer

os.environ.setdefault("PROOFKIT_API_KEY", "demo-key")

# === THE BASE CORPUS ===

# Five bare question/proof pairs, as they would arrive from a scrape.
# Note the fourth and fifth share a question up to whitespace; the
# pipeline deduplicates on the normalized question text.
BASE = [
    TheoremRecord(
        id="b-01",
        question="Prove that $\\sqrt{2}$ is irrational.",
        proof=(
            "Suppose $\\sqrt{2} = p/q$ in lowest terms. Then $p^2 = 2q^2$, so "
            "$p$ is even, say $p = 2r$. Then $4r^2 = 2q^2$ gives $q^2 = 2r^2$, "
            "so $q$ is even too, contradicting lowest terms."
        ),
    ),
    TheoremRecord(
        id="b-02",
        question="Show that the sum of the first $n$ odd numbers is $n^2$.",
        proof=(
            "Induct on $n$. For $n=1$ the sum is $1 = 1^2$. If the first $n$ "
            "odd numbers sum to $n^2$, adding the next odd number $2n+1$ "
            "gives $n^2 + 2n + 1 = (n+1)^2$."
        ),
    ),
    TheoremRecord(
        id="b-03",
        question="Prove that a graph with all vertex degrees at least $2$ contains a cycle.",
        proof=(
            "Take a maximal path $v_0 v_1 \\dots v_k$. Every neighbor of "
            "$v_0$ lies on the path, else the path extends. Since $v_0$ has "
            "degree at least $2$, it has a neighbor $v_i$ with $i \\ge 2$, "
            "and $v_0 v_1 \\dots v_i v_0$ is a cycle."
        ),
    ),
    TheoremRecord(
        id="b-04",
        question="Prove that $1 + 2 + \\dots + n = n(n+1)/2$.",
        proof=(
            "Write the sum forwards and backwards and add columnwise: each of "
            "the $n$ columns sums to $n+1$, so twice the sum is $n(n+1)$."
        ),
    ),
    TheoremRecord(
        id="b-05",
        question="Prove that  $1 + 2 + \\dots + n = n(n+1)/2$.",
        proof="Pair the first and last terms repeatedly; each pair sums to $n+1$.",
    ),
]

# === SCRIPTING THE ANNOTATOR ===

# Hand-written annotations, one per distinct question. A real model
# produces these; the mock server just needs something structurally valid
# that preserves the proof verbatim.
ANNOTATIONS = {
    "b-01": (
        "Let's analyze the conditions. Irrationality is a negative statement, "
        "so contradiction via a parity invariant of $p^2 = 2q^2$ is natural.",
        None,
        "infinite descent on parity",
        "clear denominators to $p^2 = 2q^2$",
        "Assume a reduced fraction, derive that both numerator and denominator "
        "are even, contradiction.",
    ),
    "b-02": (
        "Let's analyze the conditions. The claim is a closed form indexed by "
        "$n$, which points to induction with base case $n=1$.",
        None,
        "mathematical induction",
        "rewrite the step as $n^2 + (2n+1) = (n+1)^2$",
        "Base case, then absorb the next odd number into the square.",
    ),
    "b-03": (
        "Let's analyze the conditions. Degree lower bounds trap a maximal "
        "path's endpoint among its own vertices, forcing a chord.",
        "take a maximal path and examine its endpoint",
        None,
        None,
        "Extremal choice of path; the endpoint's second neighbor closes a cycle.",
    ),
    "b-04": (
        "Let's analyze the conditions. The sum is symmetric under reversal, "
        "so pairing terms with their mirrors evaluates it at once.",
        "write the sum twice, reversed",
        None,
        "add the two copies columnwise",
        "Double the sum by reversal, read off $n(n+1)$, halve.",
    ),
    # b-05 asks the same question as b-04 modulo whitespace. It still gets
    # annotated (the model cannot know), and the dedup stage drops it after
    # the fact on the normalized question text.
    "b-05": (
        "Let's analyze the conditions. Terms equidistant from the ends sum "
        "to the same value, so pairing evaluates the sum.",
        "pair the first and last remaining terms",
        None,
        None,
        "Repeatedly pair extremes; each pair contributes $n+1$.",
    ),
}


def tagged_reply(rec: TheoremRecord) -> str:
    analysis, cons, thm, trans, sketch = ANNOTATIONS[rec.id]
    lines = [
        "<tech>",
        analysis,
        f"<construction>: {cons or 'no'}",
        f"<theorem call>: {thm or 'no'}",
        f"<transformation>: {trans or 'no'}",
        "</tech>",
        "<sketch>",
        sketch,
        "</sketch>",
        "<proof>",
        rec.proof,
        "</proof>",
    ]
    return "\n".join(lines)


BY_QUESTION = {rec.question: rec for rec in BASE}
flaky_seen = {"count": 0}


def responder(body: dict) -> str:
    prompt = body["messages"][-1]["content"]
    match = next(rec for q, rec in BY_QUESTION.items() if q in prompt)
    # First attempt on b-02 returns prose with no tags at all; the
    # pipeline should retry and succeed on the second attempt.
    if match.id == "b-02" and flaky_seen["count"] == 0:
        flaky_seen["count"] += 1
        return "Sure! Here is a nicely annotated proof for you."
    return tagged_reply(match)


# === RUN ===

with tempfile.TemporaryDirectory() as tmp:
    out_path = Path(tmp) / "annotated.jsonl"
    report_path = Path(tmp) / "report.json"
    with MockLLMServer(responder=responder) as server:
        gateway = ChatGateway(
            server.url, retry=RetryPolicy(retries=2, base_delay=0.01, max_delay=0.02)
        )
        outcomes, report = run_pipeline(
            BASE,
            gateway,
            PipelineConfig(
                model="annotator-demo",
                out_path=out_path,
                report_path=report_path,
                max_attempts=3,
            ),
        )

    print("=== per-record outcomes ===")
    for outcome in outcomes:
        detail = f" ({outcome.failure_detail})" if outcome.failure_detail else ""
        print(f"{outcome.record_id}: {outcome.status.value}, attempts={outcome.attempts}{detail}")

    print("\n=== pipeline report ===")
    print(f"accepted {report.accepted}/{report.total} "
          f"(rate {report.acceptance_rate:.2f}), "
          f"duplicates dropped: {report.dropped_duplicates}")

    flaky = next(o for o in outcomes if o.record_id == "b-02")
    assert flaky.attempts == 2, "b-02 should have needed a retry"
    print(f"b-02 recovered after a malformed first reply (attempts={flaky.attempts})")

    dup = next(o for o in outcomes if o.record_id == "b-05")
    assert dup.status.value == "duplicate_dropped"
    print("b-05 annotated fine but dropped: same question as b-04 after normalization")

    # === WHAT LANDED ON DISK ===

    annotated = load_corpus(out_path)
    print(f"\noutput file holds {len(annotated)} tagged records")
    first_line = out_path.read_text().splitlines()[0]
    assert parse_corpus_line(first_line).proof == BASE[0].proof
    print("proof text preserved verbatim through annotation")

    # The report file is plain JSON, safe to feed to any dashboard.
    on_disk = json.loads(report_path.read_text())
    print(f"report.json keys: {sorted(on_disk)}")

    # === CORPUS STATISTICS ===

    stats = compute_stats(annotated)
    print("\n=== corpus statistics ===")
    print(f"records: {stats.record_count}")
    print(f"mean techniques per record (split count): {stats.mean_techniques:.3f}")
    print(f"technique count histogram: {dict(stats.technique_count_histogram)}")
    for category, counts in stats.top_techniques_per_category.items():
        if counts:
            name, n = counts[0]
            print(f"most common {category.value}: {name!r} (x{n})")

    # Every accepted record renders back through the full view, so the
    # annotated corpus is immediately usable as supervision text.
    sample = render_hierarchical(annotated[0], StageView.FULL)
    print(f"\nfirst annotated record, full view, first line: {sample.splitlines()[0]!r}")
