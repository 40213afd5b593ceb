"""
Judging candidate proofs with a panel of (mock) judge models.

Each judge scores a proof on validity, completeness, and clarity; the
harness recomputes the weighted total (0.4, 0.3, 0.3) from those three
numbers instead of trusting the judge's own arithmetic, averages across
judges, and flags items where any judge's stated total disagreed with
the recomputation. A separate categorical rubric grades how insightful
a model's proof plan is, without any numeric score.
"""

from __future__ import annotations

import json
import os
from importlib import resources

from proofkit.gateway import ChatGateway, RetryPolicy
from proofkit.judge import (
    evaluate_insightfulness,
    load_benchmark_spec,
    parse_judge_reply,
    report_to_dict,
    run_benchmark,
)
from proofkit.mockllm import MockLLMServer

os.environ.setdefault("PROOFKIT_API_KEY", "demo-key")

# === THE BENCHMARK ===

SPEC_PATH = resources.files("proofkit") / "data" / "benchmarks" / "fimo_sample.jsonl"
with resources.as_file(SPEC_PATH) as path:
    spec = load_benchmark_spec(path, name="fimo-sample")
print(f"benchmark {spec.name!r} with {len(spec.items)} items")
for item_id, question in spec.items:
    print(f"  {item_id}: {question[:64]}...")

# Candidate proofs keyed by item id, as a generation run would produce.
PROOFS = {
    "fimo-001": (
        "From $f(x+y)=f(x)+f(y)$ and monotonicity, $f(q) = qf(1)$ for all "
        "rational $q$; monotone extension forces $f(x) = xf(1)$ everywhere."
    ),
    "fimo-002": (
        "$\\binom{2n}{n} = \\binom{2n-1}{n-1} + \\binom{2n-1}{n}$ and the two "
        "summands are equal, so the central binomial coefficient is even."
    ),
    "fimo-003": (
        "Call an index a peak if every later term is smaller. Infinitely many "
        "peaks give a decreasing subsequence; finitely many let us climb "
        "forever after the last one, giving a nondecreasing subsequence."
    ),
}

# === SCRIPTING TWO JUDGES ===

# judge-a is systematically more generous than judge-b by one grid step on
# validity. Scores vary by item so the table is not flat.
RUBRIC = {
    "fimo-001": (1.0, 0.9, 0.9),
    "fimo-002": (0.9, 0.8, 1.0),
    "fimo-003": (0.8, 0.9, 0.7),
}


def judge_reply(v: float, c: float, cl: float) -> str:
    total = 0.4 * v + 0.3 * c + 0.3 * cl
    return (
        f"<score>\n{total:.2f}\n</score>\n<exp>\n"
        f'"validity": {v}\nexplanation: argument checks out\n'
        f'"completeness": {c}\nexplanation: coverage of cases\n'
        f'"clarity": {cl}\nexplanation: organization\n</exp>'
    )


def responder(body: dict) -> str:
    content = body["messages"][-1]["content"]
    proof_id = next(i for i, p in PROOFS.items() if p[:40] in content)
    v, c, cl = RUBRIC[proof_id]
    if body["model"] == "judge-b":
        v = round(v - 0.1, 1)
    return judge_reply(v, c, cl)


# === RUN THE PANEL ===

with MockLLMServer(responder=responder) as server:
    gateway = ChatGateway(
        server.url, retry=RetryPolicy(retries=1, base_delay=0.01, max_delay=0.02)
    )
    report = run_benchmark(spec, PROOFS, ["judge-a", "judge-b"], gateway)

    print("\n=== per-item results ===")
    for item in report.items:
        per_judge = ", ".join(
            f"{v.judge_id}={v.total:.3f}" for v in item.aggregated.verdicts
        )
        print(f"{item.item_id}: mean={item.aggregated.mean_total:.3f} ({per_judge})")

    print(f"\nbenchmark mean total: {report.mean_total:.4f}")
    print(f"best item total:      {report.max_total:.4f}")
    print(f"literal mismatch rate: {report.mismatch_rate:.2f}")

    # The report serializes to plain JSON for dashboards and regression
    # tracking across model versions.
    as_json = report_to_dict(report)
    print(f"report_to_dict keys: {sorted(as_json)}; "
          f"summary keys: {sorted(as_json['summary'])}")

    # === THE RECOMPUTED TOTAL IS THE ONE THAT COUNTS ===

    # A judge that writes 0.95 but whose dimension scores imply 0.85 gets
    # the recomputed value, plus a mismatch flag for the report.
    sloppy = (
        "<score>\n0.95\n</score>\n<exp>\n"
        '"validity": 1.0\nexplanation: fine\n'
        '"completeness": 0.5\nexplanation: skips a case\n'
        '"clarity": 1.0\nexplanation: crisp\n</exp>'
    )
    verdict = parse_judge_reply(sloppy, "sloppy-judge")
    print("\nsloppy judge stated 0.95, recomputed total "
          f"{verdict.total}, mismatch={verdict.literal_mismatch}")
    assert verdict.total == 0.85

    # === INSIGHTFULNESS, CATEGORICALLY ===

    # For insight grading there is no number at all: a candidate model
    # drafts its key idea for the problem, and a judge assigns one label
    # on each of three axes (depth, expression, coverage).
    IDEA = "IDEA-MARKER classify indices as peaks and split on whether they run out."

    def insight_responder(body: dict) -> str:
        content = body["messages"][-1]["content"]
        if "IDEA-MARKER" in content:
            return "1. deep identification\n2. simple scratch\n3. comprehensive"
        return IDEA

    with MockLLMServer(responder=insight_responder) as server2:
        verdict = evaluate_insightfulness(
            question=spec.items[2][1],
            judge_model="judge-a",
            candidate_model="prover-demo",
            gateway=ChatGateway(
                server2.url, retry=RetryPolicy(retries=1, base_delay=0.01, max_delay=0.02)
            ),
        )
    print("\ninsightfulness labels for the monotone-subsequence plan:")
    print(f"  depth:      {verdict.depth.value}")
    print(f"  expression: {verdict.expression.value}")
    print(f"  coverage:   {verdict.coverage.value}")
