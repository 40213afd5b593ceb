"""End-to-end acceptance gate.

One test per headline guarantee, each with an explicit runtime budget
and a printed pass line; run with -s (or read captured stdout) to see
the per-criterion summary.
"""

from __future__ import annotations

import contextlib
import json
import math
import random
import re
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import httpx
import pytest

from _support import (
    WORKED_CONSTRUCTION,
    WORKED_EXAMPLE,
    WORKED_THEOREM_CALL,
    random_record,
)
from proofkit.audit import AuditSample, AuditStore, bin_index, calibration_report
from proofkit.corpus import PipelineConfig, compute_stats, run_pipeline
from proofkit.curriculum import Schedule, emit_schedule
from proofkit.entropy import (
    SpikePolicy,
    TokenLogprobs,
    detect_spikes,
    random_capped_model,
    check_bound,
    token_entropy,
    trace_from_logprobs,
)
from proofkit.gateway import ChatGateway, RetryPolicy
from proofkit.hierarchy import (
    StageView,
    TechniqueCategory,
    TheoremRecord,
    extract_proof_body,
    parse_corpus_line,
    parse_hierarchical,
    render_corpus_line,
    render_hierarchical,
)
from proofkit.judge import parse_judge_reply
from proofkit.mockllm import MockLLMServer, ScriptedResponse
from proofkit.reward import (
    ScoreDistribution,
    expected_score,
    group_advantages,
    weighted_total,
)
from proofkit.service import ServiceConfig, ThreadedServer, create_app

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "proofkit" / "data"


@contextlib.contextmanager
def criterion(name: str, budget_seconds: float):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name}")
        raise
    elapsed = time.monotonic() - started
    assert elapsed < budget_seconds, (
        f"{name} took {elapsed:.3f}s, budget {budget_seconds}s"
    )
    print(f"ACCEPTANCE PASS: {name} ({elapsed:.3f}s < {budget_seconds:.0f}s)")


@pytest.fixture
def _key(monkeypatch):
    monkeypatch.setenv("PROOFKIT_API_KEY", "k")


def test_acceptance_1_reward_math():
    with criterion("reward math", 1.0):
        uniform = ScoreDistribution(probs=(1 / 11,) * 11)
        assert expected_score(uniform) == 0.5

        probs = [0.0] * 11
        probs[6] = 0.4
        probs[8] = 0.6
        assert abs(expected_score(ScoreDistribution(probs=tuple(probs))) - 0.72) <= 1e-12

        breakdown = weighted_total((0.0, 1.0, 1.0, 1.0))
        assert abs(breakdown.raw_total - 0.70) <= 1e-12
        assert breakdown.snapped_total == 0.7


def test_acceptance_2_advantage_suite():
    with criterion("group advantages", 5.0):
        rng = random.Random(20240817)
        for trial in range(1000):
            if trial % 50 == 0:
                rewards = [rng.choice([0.0, 0.3, 1.0])] * 16
            else:
                rewards = [rng.random() for _ in range(16)]
            adv = group_advantages(rewards)
            assert len(adv) == 16
            assert abs(math.fsum(adv)) <= 1e-9
            reward_std = statistics.pstdev(rewards)
            if reward_std > 1e-8:
                assert abs(statistics.pstdev(adv) - 1.0) <= 1e-6
            else:
                assert adv == (0.0,) * 16

            # Exact shift/scale invariance on dyadic inputs, where every
            # intermediate float operation is exact and scaling commutes
            # with rounding.
            dyadic = [rng.randrange(64) / 64.0 for _ in range(16)]
            base = group_advantages(dyadic)
            assert group_advantages([x + 0.25 for x in dyadic]) == base
            assert group_advantages([4.0 * x for x in dyadic]) == base
            assert group_advantages([2.0 * x - 0.5 for x in dyadic]) == base


def _judge_reply(v, c, cl, total):
    return (
        f"<score>\n{total}\n</score>\n<exp>\n"
        f'"validity": {v!r}\nexplanation: a\n'
        f'"completeness": {c!r}\nexplanation: b\n'
        f'"clarity": {cl!r}\nexplanation: c\n</exp>'
    )


def test_acceptance_3_judge_formula():
    with criterion("judge formula", 1.0):
        rng = random.Random(7)
        for _ in range(1000):
            v = round(rng.random(), 6)
            c = round(rng.random(), 6)
            cl = round(rng.random(), 6)
            verdict = parse_judge_reply(_judge_reply(v, c, cl, total=0.0), "j")
            oracle = float(
                Fraction(2, 5) * Fraction(v)
                + Fraction(3, 10) * Fraction(c)
                + Fraction(3, 10) * Fraction(cl)
            )
            assert abs(verdict.total - oracle) <= 1e-12

        example = parse_judge_reply(_judge_reply(1.0, 0.5, 1.0, total=0.85), "j")
        assert abs(example.total - 0.85) <= 1e-12
        assert not example.literal_mismatch


def test_acceptance_4_parser_round_trip():
    with criterion("parser round trip", 10.0):
        rng = random.Random(41)
        for _ in range(500):
            view = rng.choice(list(StageView))
            record = random_record(rng, view=view, with_identity=True)
            rendered = render_hierarchical(record, view)
            parsed = parse_hierarchical(rendered, view)
            assert render_hierarchical(parsed, view) == rendered

            line = render_corpus_line(record)
            assert render_corpus_line(parse_corpus_line(line)) == line

        worked = parse_hierarchical(WORKED_EXAMPLE, StageView.FULL)
        assert worked.insight.technique(TechniqueCategory.TRANSFORMATION).absent
        construction = worked.insight.technique(TechniqueCategory.CONSTRUCTION)
        assert construction.description == WORKED_CONSTRUCTION
        theorem_call = worked.insight.technique(TechniqueCategory.THEOREM_CALL)
        assert theorem_call.description == WORKED_THEOREM_CALL


def test_acceptance_5_bound_oracle():
    with criterion("technique probability bound", 60.0):
        alphabet = ["t1", "t2", "a", "b", "c", "d"]
        model = random_capped_model(
            random.Random(99), alphabet, ["t1", "t2"], max_length=8, delta=0.1
        )
        result = check_bound(model)
        assert result.n_sequences == 6**8
        assert result.all_satisfied
        assert not result.violations
        assert abs(result.total_probability - 1.0) <= 1e-9
        assert result.max_ratio <= 1.0 + 1e-9
        assert result.marginals_ok


def test_acceptance_6_calibration_reproduction(tmp_path):
    with criterion("calibration table", 1.0):
        published = [
            (22, 0.13, 0.15),
            (34, 0.32, 0.30),
            (41, 0.51, 0.46),
            (36, 0.68, 0.64),
            (27, 0.84, 0.79),
        ]
        store = AuditStore(tmp_path / "store")
        sid = 0
        for count, llm, human in published:
            for _ in range(count):
                store.add_samples(
                    [
                        AuditSample(
                            sample_id=f"s{sid:04d}",
                            item_id=f"i{sid:04d}",
                            model_family="m",
                            benchmark="b",
                            llm_total=llm,
                            score_bin=bin_index(llm),
                            question="q",
                            response="r",
                        )
                    ]
                )
                store.ingest_human_score(f"s{sid:04d}", "expert", [human] * 4)
                sid += 1
        report = calibration_report(store)
        assert [r.count for r in report.rows] == [c for c, _, _ in published]
        for row, (_, llm, human) in zip(report.rows, published):
            assert row.mean_llm == pytest.approx(llm, abs=1e-12)
            assert row.mean_human == pytest.approx(human, abs=1e-12)
        assert report.total_scored == 160


def _recount_mean_techniques(corpus_path: Path) -> float:
    """Independent technique recount straight off the JSON, bypassing the
    library's stats path."""
    total = 0
    n = 0
    for line in corpus_path.read_text(encoding="utf-8").splitlines():
        tech = json.loads(line)["tech"]
        k = 0
        for key in ("construction", "theorem_call", "transformation"):
            body = tech[key]
            if body is None:
                continue
            k += 1
            if key == "theorem_call":
                masked = re.sub(r"\$[^$]*\$", "", body)
                parts = [p for p in re.split(r";|\band\b", masked) if p.strip()]
                k += max(0, len(parts) - 1)
        total += k
        n += 1
    return total / n


def test_acceptance_7_pipeline_end_to_end(_key, tmp_path):
    with criterion("annotation pipeline end to end", 30.0):
        mini_path = DATA_DIR / "mini_corpus.jsonl"
        mini_lines = mini_path.read_text(encoding="utf-8").splitlines()
        records = [parse_corpus_line(line) for line in mini_lines]
        assert len(records) == 20

        by_question = {r.question: r for r in records}
        base = [
            TheoremRecord(id=r.id, question=r.question, proof=r.original_proof or r.proof)
            for r in records
        ]

        def responder(body):
            content = body["messages"][-1]["content"]
            for question, record in by_question.items():
                if question in content:
                    return ScriptedResponse(
                        text=render_hierarchical(record, StageView.FULL)
                    )
            return ScriptedResponse(status=500)

        outputs = []
        with MockLLMServer(responder=responder) as server:
            gw = ChatGateway(server.url, retry=RetryPolicy(retries=1, base_delay=0.01))
            gw._sleep = lambda _s: None
            for run in range(2):
                out = tmp_path / f"corpus-{run}.jsonl"
                config = PipelineConfig(model="annotator", out_path=out)
                _, report = run_pipeline(base, gw, config)
                assert report.accepted == 20
                outputs.append(out.read_bytes())

        assert outputs[0] == outputs[1]
        out_path = tmp_path / "corpus-0.jsonl"
        assert outputs[0] == mini_path.read_bytes()

        annotated = [parse_corpus_line(l) for l in out_path.read_text().splitlines()]
        stats = compute_stats(annotated)
        assert abs(stats.mean_techniques - _recount_mean_techniques(out_path)) <= 1e-12

        stage_dir = tmp_path / "stages"
        emit_schedule(annotated, Schedule.THREE_STAGE, stage_dir)
        stage_targets = {}
        for name in ("stage1.jsonl", "stage2.jsonl", "stage3.jsonl"):
            path = stage_dir / name
            assert path.exists()
            stage_targets[name] = {
                row["source_id"]: row["messages"][-1]["content"]
                for row in map(json.loads, path.read_text().splitlines())
            }
        assert len(stage_targets["stage3.jsonl"]) == 20
        for source_id, target in stage_targets["stage3.jsonl"].items():
            stripped = extract_proof_body(target)
            assert stripped == stage_targets["stage1.jsonl"][source_id]


def _verifier_reply(score):
    return (
        f"<score>\n{score}\n</score>\n<exp>\n"
        f'"insight_quality": {score}\nexplanation: a\n'
        f'"logical_validity": {score}\nexplanation: b\n'
        f'"completeness": {score}\nexplanation: c\n'
        f'"clarity": {score}\nexplanation: d\n</exp>'
    )


def test_acceptance_8_service_contract(_key, tmp_path):
    with criterion("service contract", 30.0):
        grid = [i / 10 for i in range(11)]

        def responder(body):
            content = body["messages"][-1]["content"]
            idx = int(re.search(r"R(\d+)", content).group(1))
            return ScriptedResponse(text=_verifier_reply(grid[idx % 11]))

        store = AuditStore(tmp_path / "store")
        with MockLLMServer(responder=responder) as llm:
            gw = ChatGateway(llm.url, retry=RetryPolicy(retries=1, base_delay=0.01))
            gw._sleep = lambda _s: None
            app = create_app(ServiceConfig(verifier_model="v"), gw, store)
            with ThreadedServer(app) as server:
                resp = httpx.post(
                    f"{server.url}/v1/reward/group",
                    json={"question": "Q", "responses": [f"R{i}" for i in range(16)]},
                    timeout=30,
                )
                assert resp.status_code == 200
                advantages = resp.json()["advantages"]
                assert len(advantages) == 16
                assert abs(sum(advantages)) <= 1e-9

                store.add_samples(
                    [
                        AuditSample(
                            sample_id=f"s{i:04d}",
                            item_id=f"i{i}",
                            model_family="m",
                            benchmark="b",
                            llm_total=0.5,
                            score_bin=bin_index(0.5),
                            question="q",
                            response="r",
                        )
                        for i in range(120)
                    ]
                )

                def fetch(client, reviewer):
                    resp = client.get(
                        f"{server.url}/v1/audit/next",
                        params={"reviewer": reviewer},
                        timeout=10,
                    )
                    assert resp.status_code == 200
                    return resp.json()["sample_id"]

                with httpx.Client() as c1, httpx.Client() as c2:
                    with ThreadPoolExecutor(max_workers=2) as pool:
                        for _ in range(100):
                            f1 = pool.submit(fetch, c1, "reviewer-1")
                            f2 = pool.submit(fetch, c2, "reviewer-2")
                            id1, id2 = f1.result(), f2.result()
                            assert id1 != id2
                            scored = c1.post(
                                f"{server.url}/v1/audit/score",
                                json={
                                    "sample_id": id1,
                                    "reviewer": "reviewer-1",
                                    "scores": [0.5, 0.5, 0.5, 0.5],
                                },
                                timeout=10,
                            )
                            assert scored.status_code == 200
        assert len(store.scored()) == 100


def test_acceptance_9_entropy_closed_forms():
    with criterion("entropy closed forms", 1.0):
        assert token_entropy([1.0]) == 0.0
        assert abs(token_entropy([0.25] * 4) - math.log(4)) <= 1e-9

        def alt(probs):
            return tuple((f"t{i}", math.log(p)) for i, p in enumerate(probs))

        tokens = []
        for i in range(40):
            probs = [0.9, 0.1] if i % 2 else [0.88, 0.12]
            tokens.append(
                TokenLogprobs(token=f"w{i}", logprob=-0.1, top_alternatives=alt(probs))
            )
        tokens.append(
            TokenLogprobs(token="pivot", logprob=-2.3, top_alternatives=alt([0.1] * 10))
        )
        trace = trace_from_logprobs(tokens)
        assert detect_spikes(trace, SpikePolicy()) == (40,)
