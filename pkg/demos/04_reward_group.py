"""
From verifier text to group-relative advantages.

A verifier model scores each candidate proof on four dimensions over the
grid 0.0, 0.1, ..., 1.0. The four dimension scores combine into one
reward, and rewards are normalized within each rollout group (subtract
the group mean, divide by the group standard deviation) so the policy
update only sees how a sample compares to its siblings. No value network
anywhere.

The verifier here is a mock HTTP server with scripted replies, so the
numbers are fully reproducible.
"""

from __future__ import annotations

import math
import os

from proofkit.gateway import ChatGateway, RetryPolicy, TokenLogprobs
from proofkit.mockllm import MockLLMServer
from proofkit.reward import (
    ScoreDistribution,
    VerifierConfig,
    distribution_from_logits,
    expected_score,
    group_advantages,
    score_response_text,
    score_rollout_group,
    snap_to_grid,
    weighted_total,
)

os.environ.setdefault("PROOFKIT_API_KEY", "demo-key")

GRID = [i / 10 for i in range(11)]

# === PART 1: WHAT ONE DIMENSION SCORE IS ===

# When the verifier's token logprobs are available, a dimension score is
# not the single token the model sampled but the expectation over the
# whole grid under the model's own distribution. Build a distribution
# where the model puts most mass on 0.8 with some doubt toward 0.6.
logits = [-14.0] * 11
logits[8] = -0.3   # 0.8
logits[6] = -1.6   # 0.6
dist = distribution_from_logits(logits)
print("grid probabilities (only visible mass):",
      {GRID[i]: round(p, 4) for i, p in enumerate(dist.probs) if p > 1e-3})
score = expected_score(dist)
print(f"expected score: {score:.4f} (between the two candidate grid points)")
print(f"snapped to the grid for reporting: {snap_to_grid(score)}\n")

# A flat distribution must land exactly in the middle of the grid.
flat = ScoreDistribution(tuple([1 / 11] * 11))
assert expected_score(flat) == 0.5

# === PART 2: FOUR DIMENSIONS, ONE REWARD ===

# Weights: insight 0.30, validity 0.30, completeness 0.25, clarity 0.15.
# Insight is weighted as heavily as logical validity on purpose; a correct
# but idea-free proof should not max out the reward.
breakdown = weighted_total((0.0, 1.0, 1.0, 1.0))
print(f"correct-but-uninsightful proof: raw={breakdown.raw_total:.4f} "
      f"snapped={breakdown.snapped_total}")
breakdown = weighted_total((1.0, 1.0, 0.8, 0.6))
print(f"insightful with rough edges:    raw={breakdown.raw_total:.4f} "
      f"snapped={breakdown.snapped_total}\n")

# === PART 3: SCORING A ROLLOUT GROUP OVER HTTP ===

QUESTION = "Prove that $2^n > n$ for every positive integer $n$."

# Six candidate proofs of varying quality. The scripted verifier answers
# them in order with decreasing scores; response five is scripted to be a
# malformed verifier reply, which becomes reward 0 with a failure flag
# rather than an exception.
def verifier_reply(i: float, v: float, c: float, cl: float) -> str:
    total = 0.30 * i + 0.30 * v + 0.25 * c + 0.15 * cl
    return (
        f"<score>\n{total:.2f}\n</score>\n<exp>\n"
        f'"insight_quality": {i}\nexplanation: idea quality\n'
        f'"logical_validity": {v}\nexplanation: soundness\n'
        f'"completeness": {c}\nexplanation: case coverage\n'
        f'"clarity": {cl}\nexplanation: readability\n</exp>'
    )


script = [
    verifier_reply(0.9, 1.0, 0.9, 0.8),
    verifier_reply(0.6, 0.9, 0.8, 0.8),
    verifier_reply(0.5, 0.7, 0.6, 0.7),
    verifier_reply(0.2, 0.5, 0.4, 0.6),
    "The proof looks fine to me!",
    verifier_reply(0.1, 0.2, 0.3, 0.4),
]
responses = [f"candidate proof {k}" for k in range(6)]

with MockLLMServer(script=script) as server:
    gateway = ChatGateway(
        server.url, retry=RetryPolicy(retries=1, base_delay=0.01, max_delay=0.02)
    )
    group, scores = score_rollout_group(
        "demo-q1",
        QUESTION,
        responses,
        gateway,
        VerifierConfig(model="verifier-demo", max_in_flight=1),
    )

print("=== rollout group ===")
print(f"{'idx':>3} {'reward':>8} {'advantage':>10}  note")
for k, (reward, adv, rs) in enumerate(zip(group.rewards, group.advantages, scores)):
    note = rs.failure_detail if rs.failed else ""
    print(f"{k:>3} {reward:>8.4f} {adv:>+10.4f}  {note}")

# The advantages are an exact zero-sum, unit-variance recentering of the
# rewards, so they are invariant to shifting or rescaling the reward.
assert abs(sum(group.advantages)) < 1e-9
mean = sum(group.rewards) / len(group.rewards)
var = sum((r - mean) ** 2 for r in group.rewards) / len(group.rewards)
print(f"\nsum of advantages: {sum(group.advantages):+.1e}")
print(f"population std of rewards: {math.sqrt(var):.4f}")
shifted = group_advantages([r + 0.3 for r in group.rewards])
for a, b in zip(shifted, group.advantages):
    assert abs(a - b) < 1e-9
print("shifting every reward by +0.3 leaves the advantages unchanged")

# A degenerate group where every reward ties gives all-zero advantages
# instead of dividing by zero. Those samples simply produce no gradient.
assert group_advantages([0.7] * 8) == (0.0,) * 8
print("constant group: advantages are all zero, not NaN\n")

# === PART 4: LOGPROB-WEIGHTED EXTRACTION ===

# When the serving stack returns token logprobs, each dimension score is
# read from the distribution at the score-token position rather than from
# the sampled text. Below the verifier sampled 0.7 for insight but kept
# 22% of its mass on 0.8; the reward uses the mixture.
def tlp(token: str, logprob: float = -0.01, top=None) -> TokenLogprobs:
    return TokenLogprobs(token, logprob, tuple(top) if top else ())


tokens = (
    tlp('<score>\n0.76\n</score>\n<exp>\n"insight_quality":'),
    tlp(" "),
    tlp("0.7", -0.35, [("0.7", -0.35), ("0.8", -1.60), ("0.6", -3.1)]),
    tlp('\nexplanation: solid idea\n"logical_validity":'),
    tlp(" "),
    tlp("0.9", -0.1, [("0.9", -0.1), ("1.0", -2.6)]),
    tlp('\nexplanation: sound\n"completeness":'),
    tlp(" "),
    tlp("0.8", -0.2, [("0.8", -0.2), ("0.7", -2.1)]),
    tlp('\nexplanation: full\n"clarity":'),
    tlp(" "),
    tlp("0.6", -0.3, [("0.6", -0.3), ("0.7", -1.7)]),
    tlp("\n</exp>"),
)
text = "".join(t.token for t in tokens)
breakdown = score_response_text(text, tokens)
print("=== logprob-weighted scoring ===")
print(f"extraction mode: {breakdown.extraction_mode.value}")
print(f"insight dimension: {breakdown.insight:.4f} "
      "(pulled above the sampled 0.7 by mass on 0.8)")
assert 0.7 < breakdown.insight < 0.8
print(f"raw total {breakdown.raw_total:.4f}, snapped {breakdown.snapped_total}")
print(f"verifier's own literal total was {breakdown.verifier_literal_total}, "
      f"mismatch flag: {breakdown.literal_mismatch}")
