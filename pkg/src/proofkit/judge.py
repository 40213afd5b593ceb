"""LLM-as-judge harness.

Proofs are scored on three dimensions (validity 0.4, completeness 0.3,
clarity 0.3).  The judge reports a literal total, but the authoritative
total is recomputed from the sub-scores; disagreements are flagged and
surfaced as a benchmark-level mismatch rate.  Also hosts the
categorical insightfulness evaluation (depth / expression / coverage)
used to probe whether a model can guess a proof's core techniques from
the question alone.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum

from .gateway import ChatGateway, CompletionRequest, GatewayError
from .hierarchy import extract_proof_body
from .prompts import TemplateId, fill, load_template
from .reward import parse_verifier_literal_total

JUDGE_WEIGHTS = {"validity": 0.4, "completeness": 0.3, "clarity": 0.3}

# Benchmark sizes as documented; sample files ship with 3 items each.
EXPECTED_BENCHMARK_COUNTS = {"FIMO": 71, "Putnam": 166, "HMMT": 76}


class UnparseableVerdictError(ValueError):
    pass


class UnparseableLabelsError(ValueError):
    pass


class EmptyVerdictListError(ValueError):
    pass


@dataclass(frozen=True)
class JudgeVerdict:
    judge_id: str
    validity: float
    completeness: float
    clarity: float
    total: float
    explanations: dict = field(default_factory=dict, compare=False)
    literal_total: float | None = None
    literal_mismatch: bool = False


@dataclass(frozen=True)
class AggregatedVerdict:
    verdicts: tuple[JudgeVerdict, ...]
    mean_total: float
    mean_validity: float
    mean_completeness: float
    mean_clarity: float


class Depth(Enum):
    DEEP_IDENTIFICATION = "deep identification"
    SHALLOW_QUICK_GUESS = "shallow quick guess"
    MIXED = "mixed"


class Expression(Enum):
    DETAILED_EXPRESSION = "detailed expression"
    SIMPLE_SCRATCH = "simple scratch"
    MIXED = "mixed"


class Coverage(Enum):
    COMPREHENSIVE = "comprehensive"
    INCOMPLETE = "incomplete"
    MIXED = "mixed"


@dataclass(frozen=True)
class InsightVerdict:
    depth: Depth
    expression: Expression
    coverage: Coverage
    insight_text: str = field(default="", compare=False)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    items: tuple[tuple[str, str], ...]

    def matches_expected_count(self) -> bool | None:
        """True/False against the documented benchmark size, None for
        benchmarks without one."""
        expected = EXPECTED_BENCHMARK_COUNTS.get(self.name)
        return None if expected is None else len(self.items) == expected


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    aggregated: AggregatedVerdict | None
    flag: str | None = None

    @property
    def total(self) -> float:
        return self.aggregated.mean_total if self.aggregated else 0.0


@dataclass(frozen=True)
class BenchmarkReport:
    name: str
    items: tuple[ItemResult, ...]
    mean_total: float
    max_total: float
    mismatch_rate: float
    flagged: int


# --- verdict parsing --------------------------------------------------------

_SUBSCORE_RE = re.compile(
    r'"(validity|completeness|clarity)"\s*:\s*([01](?:\.\d+)?)'
    r"(?:\s*\n?\s*explanation:\s*([^\n]*))?",
    re.IGNORECASE,
)


def parse_judge_reply(text: str, judge_id: str) -> JudgeVerdict:
    scores: dict[str, float] = {}
    explanations: dict[str, str] = {}
    for m in _SUBSCORE_RE.finditer(text):
        dim = m.group(1).lower()
        if dim in scores:
            continue
        value = float(m.group(2))
        if not 0.0 <= value <= 1.0:
            raise UnparseableVerdictError(f"{dim} sub-score {value} outside [0, 1]")
        scores[dim] = value
        if m.group(3):
            explanations[dim] = m.group(3).strip()
    missing = [d for d in JUDGE_WEIGHTS if d not in scores]
    if missing:
        raise UnparseableVerdictError(f"sub-scores missing: {missing}")

    total = math.fsum(JUDGE_WEIGHTS[d] * scores[d] for d in JUDGE_WEIGHTS)
    literal = parse_verifier_literal_total(text)
    mismatch = literal is not None and abs(literal - total) > 1e-9
    return JudgeVerdict(
        judge_id=judge_id,
        validity=scores["validity"],
        completeness=scores["completeness"],
        clarity=scores["clarity"],
        total=total,
        explanations=explanations,
        literal_total=literal,
        literal_mismatch=mismatch,
    )


def judge_proof(
    question: str,
    proof: str,
    judge_model: str,
    gateway: ChatGateway,
    max_tokens: int = 2048,
) -> JudgeVerdict:
    """One judging pass; an unparseable reply is retried once before
    raising UnparseableVerdict."""
    if not proof.strip():
        raise ValueError("proof must be non-empty")
    template = load_template(TemplateId.PROOF_EVALUATION)
    prompt = fill(template, {"question": question, "response": proof})
    req = CompletionRequest.simple(judge_model, prompt, max_tokens=max_tokens)
    last: UnparseableVerdictError | None = None
    for _ in range(2):
        resp = gateway.complete(req)
        try:
            return parse_judge_reply(resp.text, judge_model)
        except UnparseableVerdictError as exc:
            last = exc
    raise last


def aggregate(verdicts: list[JudgeVerdict]) -> AggregatedVerdict:
    if not verdicts:
        raise EmptyVerdictListError("need at least one verdict")
    n = len(verdicts)
    return AggregatedVerdict(
        verdicts=tuple(verdicts),
        mean_total=math.fsum(v.total for v in verdicts) / n,
        mean_validity=math.fsum(v.validity for v in verdicts) / n,
        mean_completeness=math.fsum(v.completeness for v in verdicts) / n,
        mean_clarity=math.fsum(v.clarity for v in verdicts) / n,
    )


def run_benchmark(
    spec: BenchmarkSpec,
    proof_source: dict[str, str],
    judge_models: list[str],
    gateway: ChatGateway,
    max_in_flight: int = 8,
) -> BenchmarkReport:
    """Judge every item with every judge.

    Hierarchically tagged proofs are stripped to their <proof> body
    before entering the judge prompt.  Missing proofs and judge failures
    are flagged, scored 0, and never abort the run.
    """

    def judge_item(item_id: str, question: str) -> ItemResult:
        proof = proof_source.get(item_id)
        if proof is None or not proof.strip():
            return ItemResult(item_id, None, flag="missing proof")
        body = extract_proof_body(proof)
        verdicts = []
        for model in judge_models:
            try:
                verdicts.append(judge_proof(question, body, model, gateway))
            except (UnparseableVerdictError, GatewayError) as exc:
                return ItemResult(item_id, None, flag=f"{model}: {exc}")
        return ItemResult(item_id, aggregate(verdicts))

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        results = list(pool.map(lambda it: judge_item(*it), spec.items))

    totals = [r.total for r in results]
    judged = [v for r in results if r.aggregated for v in r.aggregated.verdicts]
    mismatches = sum(1 for v in judged if v.literal_mismatch)
    return BenchmarkReport(
        name=spec.name,
        items=tuple(results),
        mean_total=math.fsum(totals) / len(totals) if totals else 0.0,
        max_total=max(totals, default=0.0),
        mismatch_rate=mismatches / len(judged) if judged else 0.0,
        flagged=sum(1 for r in results if r.flag),
    )


# --- insightfulness ----------------------------------------------------------

_LABELS = {
    1: {
        "deep identification": Depth.DEEP_IDENTIFICATION,
        "shallow quick guess": Depth.SHALLOW_QUICK_GUESS,
        "mixed": Depth.MIXED,
    },
    2: {
        "detailed expression": Expression.DETAILED_EXPRESSION,
        "simple scratch": Expression.SIMPLE_SCRATCH,
        "mixed": Expression.MIXED,
    },
    3: {
        "comprehensive": Coverage.COMPREHENSIVE,
        "incomplete": Coverage.INCOMPLETE,
        "mixed": Coverage.MIXED,
    },
}


def _label_pattern(number: int, labels) -> re.Pattern:
    alternation = "|".join(re.escape(label).replace(r"\ ", r"\s+") for label in labels)
    # Number, then ./):, then optional markup (quotes, asterisks), then a
    # label.  Prose occurrences of "1." without a label simply don't match
    # and the search continues.
    return re.compile(rf"(?<!\d){number}\s*[.):]\s*[^a-zA-Z0-9\n]*({alternation})", re.IGNORECASE)


def parse_insight_labels(text: str) -> InsightVerdict:
    """Pull the three numbered categorical labels out of grader output,
    tolerating markup and surrounding prose; the first hit per number
    wins (graders often restate labels inside their explanations)."""
    found = {}
    for number, labels in _LABELS.items():
        m = _label_pattern(number, labels).search(text)
        if not m:
            raise UnparseableLabelsError(f"no label found for line {number}")
        key = re.sub(r"\s+", " ", m.group(1).lower())
        found[number] = labels[key]
    return InsightVerdict(depth=found[1], expression=found[2], coverage=found[3])


def evaluate_insightfulness(
    question: str,
    judge_model: str,
    candidate_model: str,
    gateway: ChatGateway,
    max_tokens: int = 2048,
    candidate_extra: dict | None = None,
) -> InsightVerdict:
    """Generate an insight with the candidate, grade it with the judge.

    ``candidate_extra`` passes provider toggles (e.g. disabling long
    reasoning) through to the generation call untouched.
    """
    gen_template = load_template(TemplateId.INSIGHT_GENERATION)
    insight = gateway.complete(
        CompletionRequest.simple(
            candidate_model,
            fill(gen_template, {"question": question}),
            max_tokens=max_tokens,
            extra=candidate_extra,
        )
    ).text

    eval_template = load_template(TemplateId.INSIGHT_EVALUATION)
    graded = gateway.complete(
        CompletionRequest.simple(
            judge_model,
            fill(eval_template, {"question": question, "insight": insight}),
            max_tokens=max_tokens,
        )
    ).text
    verdict = parse_insight_labels(graded)
    return InsightVerdict(
        depth=verdict.depth,
        expression=verdict.expression,
        coverage=verdict.coverage,
        insight_text=insight,
    )


# --- file formats -------------------------------------------------------------


def load_benchmark_spec(path, name: str | None = None) -> BenchmarkSpec:
    """Read a benchmark spec JSONL file of {"id", "question"} lines."""
    import json
    from pathlib import Path

    path = Path(path)
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj or "question" not in obj:
                raise ValueError(f"{path}:{line_no}: benchmark lines need id and question")
            items.append((str(obj["id"]), obj["question"]))
    return BenchmarkSpec(name=name or path.stem, items=tuple(items))


def load_proof_source(path) -> dict[str, str]:
    """Read a proof source JSONL file of {"id", "proof"} lines."""
    import json

    proofs = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if "id" not in obj or "proof" not in obj:
                raise ValueError(f"{path}:{line_no}: proof lines need id and proof")
            proofs[str(obj["id"])] = obj["proof"]
    return proofs


def report_to_dict(report: BenchmarkReport) -> dict:
    """JSON-ready view of a benchmark report."""
    return {
        "benchmark": report.name,
        "summary": {
            "items": len(report.items),
            "mean_total": report.mean_total,
            "max_total": report.max_total,
            "mismatch_rate": report.mismatch_rate,
            "flagged": report.flagged,
        },
        "items": [
            {
                "id": r.item_id,
                "total": r.total,
                "flag": r.flag,
                "judges": [
                    {
                        "judge": v.judge_id,
                        "validity": v.validity,
                        "completeness": v.completeness,
                        "clarity": v.clarity,
                        "total": v.total,
                        "literal_total": v.literal_total,
                        "literal_mismatch": v.literal_mismatch,
                    }
                    for v in (r.aggregated.verdicts if r.aggregated else ())
                ],
            }
            for r in report.items
        ],
    }
