"""Shared fixtures and randomized-record generators for the test suite."""

from __future__ import annotations

import random

from proofkit.hierarchy import (
    HierarchicalRecord,
    InsightBlock,
    StageView,
    TechniqueAnnotation,
    TechniqueCategory,
)

# A fully tagged record (tail bound for integrable g(X)).  The category
# lines carry the reference construction/theorem-call values used by the
# parser contract checks.
WORKED_CONSTRUCTION = "Event inclusion $\\{X > x\\} \\subseteq \\{g(X) \\ge g(x)\\}$ via monotonicity of $g$"
WORKED_THEOREM_CALL = "Markov's inequality and Dominated Convergence Theorem"

WORKED_QUESTION = (
    "Let $X$ be a non-negative random variable and $g : [0, \\infty) \\to [0, \\infty)$ "
    "a monotone nondecreasing function with $g(x) \\to \\infty$. If $E[g(X)] < \\infty$, "
    "prove that $\\lim_{x \\to \\infty} g(x)P(X > x) = 0$."
)

WORKED_EXAMPLE = f"""<tech>
Let's analyze the conditions in this question. Monotonicity of $g$ ties the tail event to a sublevel event of $g(X)$, and integrability invites a mean-based tail bound; domination then lets the limit pass inside the expectation. Therefore, the potential techniques are summarized as:
<construction>: {WORKED_CONSTRUCTION}
<theorem call>: {WORKED_THEOREM_CALL}
<transformation>: no
</tech>
<sketch>
1. From monotonicity, $\\{{X > x\\}} \\subseteq \\{{g(X) \\ge g(x)\\}}$, so $P(X > x) \\le P(g(X) \\ge g(x))$.
2. Markov's inequality bounds $g(x)P(X > x)$ by $E[g(X)\\mathbf{{1}}_{{\\{{g(X) \\ge g(x)\\}}}}]$.
3. The integrand tends to $0$ pointwise and is dominated by $g(X)$, so the expectation vanishes.
</sketch>
<proof>
Since $g$ is nondecreasing, $X > x$ implies $g(X) \\ge g(x)$, hence $P(X > x) \\le P(g(X) \\ge g(x))$. Markov's inequality applied to the nonnegative $g(X)$ gives $g(x)P(X > x) \\le E[g(X)\\mathbf{{1}}_{{\\{{g(X) \\ge g(x)\\}}}}]$. The integrand converges to $0$ pointwise as $x \\to \\infty$ and is dominated by the integrable $g(X)$, so by dominated convergence the bound tends to $0$; the squeeze gives $g(x)P(X > x) \\to 0$.
</proof>"""

_LATEX_BITS = [
    "$x^2 + y^2 = z^2$",
    "\\frac{a_n}{b_n} \\to 0",
    "$\\{X > x\\}$",
    "\\int_0^\\infty f(t)\\,dt < \\infty",
    "π ≤ ∑ a_i",
    "Let $n \\ge 2$ be an integer.",
    "suppose $f$ is convex;",
    "$0 < ε < 1$",
    "a*b ≡ c (mod p)",
    "\\begin{align} u &= v \\end{align}",
]

_WORDS = (
    "we have thus hence bound apply choose fix let then series limit "
    "measure induction contradiction minimal case both sides estimate"
).split()


def random_payload(rng: random.Random, max_parts: int = 6) -> str:
    parts = []
    for _ in range(rng.randint(1, max_parts)):
        if rng.random() < 0.35:
            parts.append(rng.choice(_LATEX_BITS))
        else:
            parts.append(" ".join(rng.choice(_WORDS) for _ in range(rng.randint(1, 5))))
    sep = "\n" if rng.random() < 0.3 else " "
    return sep.join(parts).strip() or "q.e.d."


def random_insight(rng: random.Random) -> InsightBlock:
    techniques = []
    for category in TechniqueCategory:
        if rng.random() < 0.3:
            techniques.append(TechniqueAnnotation(category, None))
        else:
            techniques.append(TechniqueAnnotation(category, random_payload(rng, max_parts=2)))
    analysis = "" if rng.random() < 0.1 else random_payload(rng)
    return InsightBlock(analysis=analysis, techniques=tuple(techniques))


def random_record(rng: random.Random, view: StageView | None = None, with_identity: bool = False) -> HierarchicalRecord:
    """A structurally valid record whose widest view is ``view`` (random
    when not given)."""
    view = view or rng.choice(list(StageView))
    insight = random_insight(rng) if view is StageView.FULL else None
    sketch = random_payload(rng) if view in (StageView.FULL, StageView.SKETCH_PROOF) else None
    kwargs = {}
    if with_identity:
        kwargs = {"id": f"rec-{rng.randrange(10**6):06d}", "question": random_payload(rng)}
    return HierarchicalRecord(proof=random_payload(rng), insight=insight, sketch=sketch, **kwargs)
