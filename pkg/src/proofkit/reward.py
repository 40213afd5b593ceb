"""Verifier-based reward engine.

Scores live on an 11-value grid {0.0, 0.1, ..., 1.0}.  Instead of
trusting the verifier's single score token, each dimension's score is
read as a distribution: the logprobs of grid-valued tokens at the
sub-score position are softmaxed and the reward is the
probability-weighted expected score.  Four dimension scores combine
into a weighted total (insight 0.30, validity 0.30, completeness 0.25,
clarity 0.15), and groups of rollouts get mean/std-normalized
advantages.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .gateway import ChatGateway, CompletionRequest, GatewayError, TokenLogprobs
from .prompts import TemplateId, fill, load_template

GRID = tuple(i / 10 for i in range(11))

# Logit assigned to grid values absent from the top-k alternatives:
# far enough below the observed minimum to be negligible, finite enough
# to keep the softmax well-defined.
MISSING_VALUE_LOGIT_GAP = 10.0

# Degenerate-group cutoff for advantage normalization.
STD_EPSILON = 1e-8

_ANCHORS = (
    ("insight", '"insight_quality":'),
    ("validity", '"logical_validity":'),
    ("completeness", '"completeness":'),
    ("clarity", '"clarity":'),
)

_LITERAL_SCORE_RE = re.compile(r"[^0-9]*([01](?:\.\d+)?)")
_TOTAL_SCORE_RE = re.compile(r"<score>\s*([01](?:\.\d+)?)\s*</score>", re.IGNORECASE)


class NonFiniteInputError(ValueError):
    pass


class OutOfRangeDimensionError(ValueError):
    pass


class NoScoreFoundError(ValueError):
    def __init__(self, anchor: str):
        super().__init__(f"no grid-valued token or literal sub-score found after {anchor!r}")
        self.anchor = anchor


class ExtractionMode(Enum):
    LOGPROB_WEIGHTED = "logprob_weighted"
    ARGMAX_FALLBACK = "argmax_fallback"


@dataclass(frozen=True)
class ScoreDistribution:
    """Probabilities over the 11 grid values, index i <-> score i/10."""

    probs: tuple[float, ...]

    def __post_init__(self):
        if len(self.probs) != len(GRID):
            raise ValueError(f"need {len(GRID)} probabilities")
        if any(p < 0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if abs(math.fsum(self.probs) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def delta(cls, grid_index: int) -> ScoreDistribution:
        probs = [0.0] * len(GRID)
        probs[grid_index] = 1.0
        return cls(tuple(probs))


@dataclass(frozen=True)
class RewardWeights:
    insight: float = 0.30
    validity: float = 0.30
    completeness: float = 0.25
    clarity: float = 0.15

    def __post_init__(self):
        total = math.fsum((self.insight, self.validity, self.completeness, self.clarity))
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {total}")


@dataclass(frozen=True)
class RewardBreakdown:
    insight: float
    validity: float
    completeness: float
    clarity: float
    raw_total: float
    snapped_total: float
    extraction_mode: ExtractionMode = ExtractionMode.LOGPROB_WEIGHTED
    # The verifier's own <score> literal, kept for drift detection; the
    # recomputed total above is authoritative.
    verifier_literal_total: float | None = None
    literal_mismatch: bool = False

    @property
    def dimensions(self) -> tuple[float, float, float, float]:
        return (self.insight, self.validity, self.completeness, self.clarity)


@dataclass(frozen=True)
class ResponseScore:
    reward: float
    breakdown: RewardBreakdown | None = None
    failed: bool = False
    failure_detail: str | None = None


@dataclass(frozen=True)
class RolloutGroup:
    question_id: str
    size: int
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]

    def __post_init__(self):
        if self.size < 1 or len(self.rewards) != self.size or len(self.advantages) != self.size:
            raise ValueError("group size must match rewards and advantages")


# --- pure arithmetic -------------------------------------------------------


def distribution_from_logits(logits) -> ScoreDistribution:
    """Overflow-safe softmax over the 11 grid logits."""
    values = [float(x) for x in logits]
    if len(values) != len(GRID):
        raise ValueError(f"need {len(GRID)} logits")
    if not all(math.isfinite(x) for x in values):
        raise NonFiniteInputError("logits must all be finite")
    m = max(values)
    exps = [math.exp(x - m) for x in values]
    total = math.fsum(exps)
    return ScoreDistribution(tuple(e / total for e in exps))


def expected_score(dist: ScoreDistribution) -> float:
    """Probability-weighted expected score, Σ p_i · (i/10)."""
    return math.fsum(p * GRID[i] for i, p in enumerate(dist.probs))


def snap_to_grid(x: float) -> float:
    """Nearest grid value; exact midpoints round up.

    Distances are compared in exact rational arithmetic so the tie rule
    is applied to the value itself, not to a re-rounded float.
    """
    xf = Fraction(x)
    best = 0
    best_dist = abs(xf - Fraction(0, 10))
    for i in range(1, len(GRID)):
        dist = abs(xf - Fraction(i, 10))
        if dist <= best_dist:
            best = i
            best_dist = dist
    return GRID[best]


def weighted_total(
    dims,
    weights: RewardWeights | None = None,
    extraction_mode: ExtractionMode = ExtractionMode.LOGPROB_WEIGHTED,
    verifier_literal_total: float | None = None,
) -> RewardBreakdown:
    """Combine the four dimension scores; order is (insight, validity,
    completeness, clarity)."""
    weights = weights or RewardWeights()
    dims = tuple(float(d) for d in dims)
    if len(dims) != 4:
        raise ValueError("exactly four dimension scores required")
    for d in dims:
        if not 0.0 <= d <= 1.0:
            raise OutOfRangeDimensionError(f"dimension score {d} outside [0, 1]")
    w = (weights.insight, weights.validity, weights.completeness, weights.clarity)
    raw = math.fsum(wi * di for wi, di in zip(w, dims))
    snapped = snap_to_grid(raw)
    mismatch = verifier_literal_total is not None and snap_to_grid(verifier_literal_total) != snapped
    return RewardBreakdown(
        insight=dims[0],
        validity=dims[1],
        completeness=dims[2],
        clarity=dims[3],
        raw_total=raw,
        snapped_total=snapped,
        extraction_mode=extraction_mode,
        verifier_literal_total=verifier_literal_total,
        literal_mismatch=mismatch,
    )


def group_advantages(rewards) -> tuple[float, ...]:
    """Group-relative advantages A_j = (r_j - mean) / population std.

    Degenerate groups (population std below 1e-8, including G=1) get all
    zeros rather than amplified noise.  Population std, not sample std:
    with small G the distinction is material and the group here is the
    whole population of rollouts for the question.
    """
    rewards = [float(r) for r in rewards]
    if not rewards:
        raise ValueError("empty group")
    n = len(rewards)
    mean = math.fsum(rewards) / n
    variance = math.fsum((r - mean) ** 2 for r in rewards) / n
    std = math.sqrt(variance)
    if std < STD_EPSILON:
        return tuple(0.0 for _ in rewards)
    return tuple((r - mean) / std for r in rewards)


# --- logprob extraction ----------------------------------------------------


def _canonical_grid_index(surface: str) -> int | None:
    """Map a token surface to a grid index: "0"/"0.0" -> 0, "0.7" -> 7,
    "1"/"1.0" -> 10.  Anything else (including "0.75") is off-grid."""
    s = surface.strip()
    if s in ("0", "0.0"):
        return 0
    if s in ("1", "1.0"):
        return 10
    if len(s) == 3 and s[0] == "0" and s[1] == "." and s[2].isdigit():
        return int(s[2])
    return None


def _logaddexp(a: float, b: float) -> float:
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


def _distribution_from_observed(observed: dict[int, float]) -> ScoreDistribution:
    floor = min(observed.values()) - MISSING_VALUE_LOGIT_GAP
    logits = [observed.get(i, floor) for i in range(len(GRID))]
    return distribution_from_logits(logits)


def _candidates_at(entry: TokenLogprobs) -> list[tuple[str, float]]:
    # The sampled token participates alongside its alternatives; when the
    # provider repeats it in top_logprobs the higher logprob wins later.
    return [(entry.token, entry.logprob), *entry.top_alternatives]


def _starts_grid_value(surface: str) -> bool:
    s = surface.strip()
    return bool(s) and s[0] in "01"


def extract_score_distribution(
    token_logprobs: tuple[TokenLogprobs, ...] | None,
    dimension_anchor: str,
    text: str | None = None,
) -> tuple[ScoreDistribution, ExtractionMode]:
    """Distribution over grid values for one sub-score.

    The token stream is rebuilt into text to locate ``dimension_anchor``
    (e.g. '"clarity":').  The first token after the anchor whose surface
    starts a grid value is the candidate.  Grid values split across
    tokens ("0" + "." + "7") resolve at the token carrying the tenths
    digit, with the integer part fixed by the leading token.  Without
    usable logprobs the literal sub-score in ``text`` becomes a delta
    distribution (ArgmaxFallback).
    """
    if token_logprobs:
        rebuilt = "".join(t.token for t in token_logprobs)
        anchor_at = rebuilt.find(dimension_anchor)
        if anchor_at >= 0:
            observed = _extract_after(token_logprobs, rebuilt, anchor_at + len(dimension_anchor))
            if observed:
                return _distribution_from_observed(observed), ExtractionMode.LOGPROB_WEIGHTED
        if text is None:
            text = rebuilt

    if text is not None:
        anchor_at = text.find(dimension_anchor)
        if anchor_at >= 0:
            m = _LITERAL_SCORE_RE.match(text, anchor_at + len(dimension_anchor))
            if m:
                idx = _literal_to_index(m.group(1))
                return ScoreDistribution.delta(idx), ExtractionMode.ARGMAX_FALLBACK
    raise NoScoreFoundError(dimension_anchor)


def _literal_to_index(literal: str) -> int:
    value = float(literal)
    return GRID.index(snap_to_grid(min(max(value, 0.0), 1.0)))


def _extract_after(token_logprobs, rebuilt: str, start_char: int) -> dict[int, float] | None:
    # Walk tokens, find the first one at/after start_char that begins a
    # grid value.
    pos = 0
    candidate = None
    for i, entry in enumerate(token_logprobs):
        end = pos + len(entry.token)
        if end > start_char and _starts_grid_value(entry.token) and pos >= start_char:
            candidate = i
            break
        pos = end
    if candidate is None:
        return None

    lead = token_logprobs[candidate].token.strip()
    nxt = token_logprobs[candidate + 1].token if candidate + 1 < len(token_logprobs) else ""

    observed: dict[int, float] = {}

    def collect(entries: list[tuple[str, float]], to_index) -> None:
        # Dedupe by surface first (providers repeat the sampled token in
        # top_logprobs); distinct surfaces for one grid value ("1" and
        # "1.0") then combine by probability mass.
        by_surface: dict[str, float] = {}
        for surface, logprob in entries:
            if surface not in by_surface or logprob > by_surface[surface]:
                by_surface[surface] = logprob
        for surface, logprob in by_surface.items():
            idx = to_index(surface)
            if idx is None:
                continue
            observed[idx] = _logaddexp(observed[idx], logprob) if idx in observed else logprob

    if lead in ("0", "1") and nxt.strip().startswith("."):
        # Split rendering: the decisive distribution sits on the token
        # carrying the tenths digit.
        int_part = lead
        dot_token = nxt.strip()
        if len(dot_token) >= 2 and dot_token[1].isdigit():
            decisive = candidate + 1

            def to_index(surface: str) -> int | None:
                s = surface.strip()
                if len(s) >= 2 and s[0] == "." and s[1].isdigit():
                    return _fraction_index(int_part, s[1])
                return None

        else:
            if candidate + 2 >= len(token_logprobs):
                return None
            decisive = candidate + 2

            def to_index(surface: str) -> int | None:
                s = surface.strip()
                if s and s[0].isdigit():
                    return _fraction_index(int_part, s[0])
                return None

        collect(_candidates_at(token_logprobs[decisive]), to_index)
    else:
        collect(_candidates_at(token_logprobs[candidate]), lambda s: _canonical_grid_index(s))
    return observed or None


def _fraction_index(int_part: str, tenths: str) -> int | None:
    if int_part == "0":
        return int(tenths)
    # "1.d" is on-grid only for d = 0.
    return 10 if tenths == "0" else None


def parse_verifier_literal_total(text: str) -> float | None:
    """The verifier's own <score> value, if present and well-formed."""
    m = _TOTAL_SCORE_RE.search(text)
    return float(m.group(1)) if m else None


# --- rollout-group scoring -------------------------------------------------


@dataclass(frozen=True)
class VerifierConfig:
    model: str
    temperature: float = 0.0
    max_tokens: int = 2048
    top_logprobs: int = 20
    max_in_flight: int = 8
    weights: RewardWeights = field(default_factory=RewardWeights)
    extra: dict | None = None


def build_verifier_request(question: str, response: str, config: VerifierConfig) -> CompletionRequest:
    template = load_template(TemplateId.HIERARCHICAL_VERIFIER)
    prompt = fill(template, {"question": question, "response": response})
    return CompletionRequest.simple(
        config.model,
        prompt,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        top_logprobs=config.top_logprobs,
        extra=config.extra,
    )


def score_response_text(
    text: str,
    token_logprobs: tuple[TokenLogprobs, ...] | None,
    weights: RewardWeights | None = None,
) -> RewardBreakdown:
    """Score one verifier reply: extract all four dimension
    distributions, take expected scores, combine."""
    dims = []
    modes = []
    for _, anchor in _ANCHORS:
        dist, mode = extract_score_distribution(token_logprobs, anchor, text=text)
        dims.append(expected_score(dist))
        modes.append(mode)
    overall = (
        ExtractionMode.LOGPROB_WEIGHTED
        if all(m is ExtractionMode.LOGPROB_WEIGHTED for m in modes)
        else ExtractionMode.ARGMAX_FALLBACK
    )
    return weighted_total(
        dims,
        weights=weights,
        extraction_mode=overall,
        verifier_literal_total=parse_verifier_literal_total(text),
    )


def score_rollout_group(
    question_id: str,
    question: str,
    responses: list[str],
    gateway: ChatGateway,
    config: VerifierConfig,
) -> tuple[RolloutGroup, list[ResponseScore]]:
    """Verify G rollouts of one question and compute group advantages.

    Verifier failures (transport errors, unparseable replies) score 0 -
    a hard-failure penalty - so the group keeps its size and stays
    deterministic.  Advantages are over raw totals; snapped totals ride
    along in each breakdown.
    """
    if not responses:
        raise ValueError("empty rollout group")
    reqs = [build_verifier_request(question, r, config) for r in responses]
    results = gateway.complete_batch(reqs, max_in_flight=config.max_in_flight)

    scores: list[ResponseScore] = []
    for _, outcome in results:
        if isinstance(outcome, GatewayError):
            scores.append(ResponseScore(reward=0.0, failed=True, failure_detail=str(outcome)))
            continue
        try:
            breakdown = score_response_text(outcome.text, outcome.token_logprobs, config.weights)
        except NoScoreFoundError as exc:
            scores.append(ResponseScore(reward=0.0, failed=True, failure_detail=str(exc)))
            continue
        scores.append(ResponseScore(reward=breakdown.raw_total, breakdown=breakdown))

    rewards = tuple(s.reward for s in scores)
    group = RolloutGroup(
        question_id=question_id,
        size=len(rewards),
        rewards=rewards,
        advantages=group_advantages(rewards),
    )
    return group, scores
