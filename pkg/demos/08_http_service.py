"""
The HTTP service, driven the way a review frontend drives it.

One process serves reward scoring, judging, and the audit workflow over
plain JSON endpoints. Here the verifier behind the service is a mock
with scripted replies, the service runs on a background thread, and a
stock httpx client plays the role of the frontend: lease a sample, look
at it blind, submit scores, repeat.
"""

from __future__ import annotations

import os
import random
import tempfile
from pathlib import Path

import httpx

from proofkit.audit import AuditStore, JudgedOutput, stratified_sample
from proofkit.gateway import ChatGateway, RetryPolicy
from proofkit.mockllm import MockLLMServer
from proofkit.service import ServiceConfig, ThreadedServer, create_app

os.environ.setdefault("PROOFKIT_API_KEY", "demo-key")


def verifier_reply(i: float, v: float, c: float, cl: float) -> str:
    total = 0.30 * i + 0.30 * v + 0.25 * c + 0.15 * cl
    return (
        f"<score>\n{total:.2f}\n</score>\n<exp>\n"
        f'"insight_quality": {i}\nexplanation: w\n'
        f'"logical_validity": {v}\nexplanation: x\n'
        f'"completeness": {c}\nexplanation: y\n'
        f'"clarity": {cl}\nexplanation: z\n</exp>'
    )


# Four rollouts, scripted verifier verdicts in request order.
SCRIPT = [
    verifier_reply(0.9, 1.0, 0.9, 0.8),
    verifier_reply(0.7, 0.8, 0.8, 0.7),
    verifier_reply(0.4, 0.6, 0.5, 0.5),
    verifier_reply(0.1, 0.3, 0.2, 0.4),
]

rng = random.Random(8)
pool = [
    JudgedOutput(
        item_id=f"item-{k:02d}",
        model_family="prover-demo",
        benchmark="FIMO",
        llm_total=round(rng.uniform(0.05, 0.95), 3),
        question=f"Problem {k}.",
        response=f"Proof attempt {k}.",
    )
    for k in range(12)
]

with tempfile.TemporaryDirectory() as tmp:
    store = AuditStore(Path(tmp) / "audit")
    store.add_samples(stratified_sample(pool, per_stratum=2, seed=1))

    with MockLLMServer(script=SCRIPT) as verifier:
        gateway = ChatGateway(
            verifier.url, retry=RetryPolicy(retries=1, base_delay=0.01, max_delay=0.02)
        )
        # One verifier call in flight at a time, so the scripted replies
        # land on the responses in order and the output is reproducible.
        config = ServiceConfig(
            verifier_model="verifier-demo", group_size=4, max_verifier_in_flight=1
        )
        app = create_app(config, gateway, store)

        with ThreadedServer(app) as server:
            client = httpx.Client(base_url=server.url, timeout=10.0)

            print(f"service listening at {server.url}")
            print("healthz:", client.get("/healthz").json())

            # === REWARD A ROLLOUT GROUP ===

            body = {
                "question": "Prove that $2^n > n$ for all positive integers.",
                "responses": [f"candidate {k}" for k in range(4)],
            }
            data = client.post("/v1/reward/group", json=body).json()
            print("\nrewards:   ", [round(r, 4) for r in data["rewards"]])
            print("advantages:", [round(a, 4) for a in data["advantages"]])
            assert abs(sum(data["advantages"])) < 1e-9

            # === THE REVIEW LOOP ===

            # The lease payload is deliberately blind: no verifier total, no
            # bin, so the human cannot anchor on the machine's opinion.
            scored = 0
            while True:
                response = client.get("/v1/audit/next", params={"reviewer": "alice"})
                if response.status_code == 404:
                    break
                sample = response.json()
                assert "llm_total" not in sample and "score_bin" not in sample
                scores = [round(rng.uniform(0.2, 1.0) * 10) / 10 for _ in range(4)]
                done = client.post(
                    "/v1/audit/score",
                    json={
                        "sample_id": sample["sample_id"],
                        "reviewer": "alice",
                        "scores": scores,
                    },
                )
                assert done.status_code == 200
                scored += 1
            print(f"\nalice reviewed {scored} samples blind, one lease at a time")

            # === CALIBRATION OVER THE WIRE ===

            report = client.get("/v1/audit/report").json()
            print(f"report rows: {len(report['rows'])}, "
                  f"total scored: {report['total_scored']}, "
                  f"correlation: {report['overall_correlation']}")

            # Malformed payloads are a client bug, and the service says so
            # instead of guessing: unknown fields are rejected outright.
            bad = client.post(
                "/v1/audit/score",
                json={"sample_id": "x", "reviewer": "alice", "scores": [1, 1, 1, 1],
                      "verdict": "looks good"},
            )
            print(f"\nunknown field in payload -> HTTP {bad.status_code}")
            assert bad.status_code == 400
