"""Token-entropy traces, spike detection, and a toy-model bound checker.

Entropy is measured in nats over the renormalized top-k alternative
distribution at each position.  Spikes are positions whose entropy
stands out against a rolling local baseline; the rule (z-score over the
previous `window` entropies, plus a global-median gate) is a heuristic
and fully configurable.

The toy autoregressive model exists to verify, by exhaustive
enumeration, that capping every technique symbol's conditional below
delta forces any sequence containing k technique symbols to have
probability at most delta^k.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import TokenLogprobs

DEFAULT_WINDOW = 32
DEFAULT_THRESHOLD = 2.0
ENUMERATION_GUARD = 10_000_000
BOUND_SLACK = 1e-12


class EmptyDistributionError(ValueError):
    pass


class InvalidModelError(ValueError):
    pass


class EnumerationTooLargeError(ValueError):
    pass


class OffsetMismatchError(ValueError):
    pass


# --- traces -------------------------------------------------------------------


@dataclass(frozen=True)
class TracePoint:
    token: str
    entropy: float
    coverage: float
    low_coverage: bool = False

    def __post_init__(self):
        if self.entropy < 0 or not math.isfinite(self.entropy):
            raise ValueError(f"entropy must be finite and non-negative, got {self.entropy}")


@dataclass(frozen=True)
class EntropyTrace:
    points: tuple[TracePoint, ...]
    spike_indices: tuple[int, ...] = ()

    def __post_init__(self):
        previous = -1
        for idx in self.spike_indices:
            if not 0 <= idx < len(self.points):
                raise ValueError(f"spike index {idx} outside trace of {len(self.points)}")
            if idx <= previous:
                raise ValueError("spike indices must be strictly increasing")
            previous = idx

    @property
    def entropies(self) -> tuple[float, ...]:
        return tuple(p.entropy for p in self.points)

    def __len__(self) -> int:
        return len(self.points)


def token_entropy(probabilities: Sequence[float]) -> float:
    """Entropy in nats of a renormalized distribution; 0·ln 0 counts as 0."""
    if len(probabilities) == 0:
        raise EmptyDistributionError("no alternatives to take entropy over")
    for p in probabilities:
        if not math.isfinite(p) or p < 0:
            raise ValueError(f"probabilities must be finite and non-negative, got {p}")
    mass = math.fsum(probabilities)
    if mass <= 0:
        raise EmptyDistributionError("distribution has zero total mass")
    h = -math.fsum(p / mass * math.log(p / mass) for p in probabilities if p > 0)
    return max(0.0, h)


def trace_from_logprobs(tokens: Sequence[TokenLogprobs]) -> EntropyTrace:
    """Per-position entropy of the alternatives carried by each token.

    Positions without alternatives (or whose alternatives underflow to
    zero mass) get entropy 0 and a low-coverage flag.  Coverage is the
    raw probability mass of the alternatives before renormalization, so
    small provider top-k shows up as coverage well below 1.
    """
    points = []
    for tok in tokens:
        probs = [math.exp(lp) for _, lp in tok.top_alternatives]
        coverage = math.fsum(probs)
        if coverage <= 0:
            points.append(TracePoint(tok.token, 0.0, coverage=coverage, low_coverage=True))
        else:
            points.append(TracePoint(tok.token, token_entropy(probs), coverage=coverage))
    return EntropyTrace(points=tuple(points))


@dataclass(frozen=True)
class SpikePolicy:
    window: int = DEFAULT_WINDOW
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")


def detect_spikes(trace: EntropyTrace, policy: SpikePolicy | None = None) -> tuple[int, ...]:
    """Indices whose entropy z-scores against the previous min(i, window)
    entropies exceed the threshold and also exceed the global median."""
    policy = policy or SpikePolicy()
    entropies = trace.entropies
    if not entropies:
        return ()
    median = statistics.median(entropies)
    spikes = []
    for i, e in enumerate(entropies):
        history = entropies[max(0, i - policy.window) : i]
        if not history:
            continue
        mean = math.fsum(history) / len(history)
        std = math.sqrt(math.fsum((h - mean) ** 2 for h in history) / len(history))
        if std > 0:
            z = (e - mean) / std
        else:
            z = math.inf if e > mean else 0.0
        if z > policy.threshold and e > median:
            spikes.append(i)
    return tuple(spikes)


def annotate_spikes(trace: EntropyTrace, policy: SpikePolicy | None = None) -> EntropyTrace:
    return replace(trace, spike_indices=detect_spikes(trace, policy))


# --- spike/technique alignment ------------------------------------------------


@dataclass(frozen=True)
class SpikeAlignment:
    spike_index: int
    char_offset: int
    matched_category: str | None
    distance: int | None

    @property
    def hit(self) -> bool:
        return self.matched_category is not None


@dataclass(frozen=True)
class AlignmentReport:
    alignments: tuple[SpikeAlignment, ...]
    hits: int
    misses: int


def align_spikes_to_techniques(trace: EntropyTrace, record, window: int = 40) -> AlignmentReport:
    """Map each spike to the nearest technique-description occurrence in
    the proof text, within a character window.

    Descriptive only: spikes with no nearby technique phrase are counted
    as misses, never raised.  The trace must tokenize the record's proof
    exactly (token surfaces concatenate back to the proof text).
    """
    joined = "".join(p.token for p in trace.points)
    if joined != record.proof:
        raise OffsetMismatchError(
            f"trace covers {len(joined)} characters but proof has {len(record.proof)}"
            if len(joined) != len(record.proof)
            else "trace tokens do not concatenate to the proof text"
        )

    candidates: list[tuple[int, str]] = []
    insight = getattr(record, "insight", None)
    if insight is not None:
        for technique in insight.techniques:
            if technique.description is None:
                continue
            start = 0
            while True:
                pos = record.proof.find(technique.description, start)
                if pos < 0:
                    break
                candidates.append((pos, technique.category.value))
                start = pos + 1

    offsets = []
    total = 0
    for point in trace.points:
        offsets.append(total)
        total += len(point.token)

    alignments = []
    for idx in trace.spike_indices:
        at = offsets[idx]
        best: tuple[int, str] | None = None
        for pos, category in candidates:
            distance = abs(pos - at)
            if distance <= window and (best is None or distance < best[0]):
                best = (distance, category)
        if best is None:
            alignments.append(SpikeAlignment(idx, at, None, None))
        else:
            alignments.append(SpikeAlignment(idx, at, best[1], best[0]))
    hits = sum(1 for a in alignments if a.hit)
    return AlignmentReport(tuple(alignments), hits=hits, misses=len(alignments) - hits)


# --- toy autoregressive model ---------------------------------------------------


@dataclass(frozen=True)
class ToyAutoregressiveModel:
    """Markov model over a small alphabet with capped technique symbols.

    ``table`` maps a context tuple (the last ``order`` symbols, shorter
    near the start of a sequence) to a row assigning every alphabet
    symbol a probability.  Construction enforces the cap: every
    technique symbol's conditional must stay strictly below delta in
    every row.
    """

    alphabet: tuple[str, ...]
    technique_symbols: frozenset
    order: int
    max_length: int
    delta: float
    table: dict = field(repr=False)

    def __post_init__(self):
        if not self.alphabet or len(set(self.alphabet)) != len(self.alphabet):
            raise InvalidModelError("alphabet must be non-empty and free of duplicates")
        if not set(self.technique_symbols) <= set(self.alphabet):
            raise InvalidModelError("technique symbols must be alphabet members")
        if self.order < 0:
            raise InvalidModelError("order must be non-negative")
        if self.max_length < 1:
            raise InvalidModelError("max_length must be at least 1")
        if not 0 < self.delta < 1:
            raise InvalidModelError(f"delta must lie in (0, 1), got {self.delta}")
        symbols = set(self.alphabet)
        for context, row in self.table.items():
            if len(context) > self.order or not set(context) <= symbols:
                raise InvalidModelError(f"bad context {context!r}")
            if set(row) != symbols:
                raise InvalidModelError(f"row {context!r} must cover the whole alphabet")
            for sym, p in row.items():
                if not math.isfinite(p) or p < 0:
                    raise InvalidModelError(f"P({sym!r}|{context!r}) = {p} is not a probability")
                if sym in self.technique_symbols and not p < self.delta:
                    raise InvalidModelError(
                        f"P({sym!r}|{context!r}) = {p} is not below the cap {self.delta}"
                    )
            total = math.fsum(row.values())
            if abs(total - 1.0) > 1e-9:
                raise InvalidModelError(f"row {context!r} sums to {total}, expected 1")

    def context_for(self, prefix: Sequence[str]) -> tuple[str, ...]:
        if self.order == 0:
            return ()
        return tuple(prefix[-self.order :])

    def row_for(self, prefix: Sequence[str]) -> dict:
        context = self.context_for(prefix)
        try:
            return self.table[context]
        except KeyError:
            raise InvalidModelError(f"no conditional row for context {context!r}") from None

    def sequence_factors(self, sequence: Sequence[str]) -> list[float]:
        factors = []
        for i, sym in enumerate(sequence):
            row = self.row_for(sequence[:i])
            if sym not in row:
                raise InvalidModelError(f"symbol {sym!r} not in alphabet")
            factors.append(row[sym])
        return factors

    def sequence_probability(self, sequence: Sequence[str]) -> float:
        prob = 1.0
        for f in self.sequence_factors(sequence):
            prob *= f
        return prob

    def with_lower_delta(self, new_delta: float) -> ToyAutoregressiveModel:
        """Shrink the cap and rescale each row to respect it.

        Technique mass in every row is scaled by new_delta/delta; the
        freed mass is redistributed proportionally across the reasoning
        symbols of the same row.  Rows keep summing to 1, and the new
        cap holds automatically since old conditionals were below the
        old cap.
        """
        if not 0 < new_delta <= self.delta:
            raise InvalidModelError(f"new delta {new_delta} must lie in (0, {self.delta}]")
        scale = new_delta / self.delta
        new_table = {}
        for context, row in self.table.items():
            tech_mass = math.fsum(p for s, p in row.items() if s in self.technique_symbols)
            reasoning_mass = 1.0 - tech_mass
            if tech_mass > 0 and reasoning_mass <= 0:
                raise InvalidModelError(
                    f"row {context!r} has no reasoning mass to absorb the rescale"
                )
            freed = tech_mass * (1.0 - scale)
            boost = 1.0 + freed / reasoning_mass if reasoning_mass > 0 else 1.0
            new_table[context] = {
                s: (p * scale if s in self.technique_symbols else p * boost)
                for s, p in row.items()
            }
        return replace(self, delta=new_delta, table=new_table)


def uniform_capped_model(
    alphabet: Sequence[str],
    technique_symbols: Iterable[str],
    max_length: int,
    delta: float,
    technique_prob: float,
    order: int = 0,
) -> ToyAutoregressiveModel:
    """Context-independent model: every technique symbol gets
    ``technique_prob`` and the reasoning symbols share the rest evenly."""
    alphabet = tuple(alphabet)
    techniques = frozenset(technique_symbols)
    reasoning = [s for s in alphabet if s not in techniques]
    if not reasoning:
        raise InvalidModelError("need at least one reasoning symbol")
    remaining = 1.0 - technique_prob * len(techniques)
    if remaining <= 0:
        raise InvalidModelError("technique mass exceeds 1")
    row = {s: (technique_prob if s in techniques else remaining / len(reasoning)) for s in alphabet}

    contexts: list[tuple[str, ...]] = [()]
    for length in range(1, min(order, max_length - 1) + 1):
        frontier = [()]
        for _ in range(length):
            frontier = [ctx + (s,) for ctx in frontier for s in alphabet]
        contexts.extend(frontier)
    table = {ctx: dict(row) for ctx in contexts}
    return ToyAutoregressiveModel(
        alphabet=alphabet,
        technique_symbols=techniques,
        order=order,
        max_length=max_length,
        delta=delta,
        table=table,
    )


def random_capped_model(
    rng,
    alphabet: Sequence[str],
    technique_symbols: Iterable[str],
    max_length: int,
    delta: float,
    order: int = 1,
) -> ToyAutoregressiveModel:
    """Random rows whose technique conditionals stay below delta."""
    alphabet = tuple(alphabet)
    techniques = frozenset(technique_symbols)
    reasoning = [s for s in alphabet if s not in techniques]
    if not reasoning:
        raise InvalidModelError("need at least one reasoning symbol")
    # Draw in alphabet order, not set order, so a seed reproduces the same
    # table regardless of hash randomization.
    technique_order = [s for s in alphabet if s in techniques]

    def one_row():
        row = {t: rng.uniform(0.0, delta * 0.95) for t in technique_order}
        spare = 1.0 - math.fsum(row.values())
        weights = [rng.uniform(0.1, 1.0) for _ in reasoning]
        scale = spare / math.fsum(weights)
        row.update({s: w * scale for s, w in zip(reasoning, weights)})
        return {s: row[s] for s in alphabet}

    contexts: list[tuple[str, ...]] = [()]
    for length in range(1, min(order, max_length - 1) + 1):
        frontier = [()]
        for _ in range(length):
            frontier = [ctx + (s,) for ctx in frontier for s in alphabet]
        contexts.extend(frontier)
    table = {ctx: one_row() for ctx in contexts}
    return ToyAutoregressiveModel(
        alphabet=alphabet,
        technique_symbols=techniques,
        order=order,
        max_length=max_length,
        delta=delta,
        table=table,
    )


# --- bound checking -------------------------------------------------------------


@dataclass(frozen=True)
class BoundRow:
    sequence: tuple[str, ...]
    k: int
    probability: float
    bound: float
    satisfied: bool


@dataclass(frozen=True)
class BoundCheckResult:
    n_sequences: int
    all_satisfied: bool
    total_probability: float
    max_ratio: float
    violations: tuple[BoundRow, ...]
    technique_marginals: tuple[dict, ...]
    marginals_ok: bool
    rows: tuple[BoundRow, ...] | None = None


def check_bound(model: ToyAutoregressiveModel, keep_rows: bool = False) -> BoundCheckResult:
    """Exhaustively enumerate all complete sequences of the model.

    Verifies probability <= delta^k (k = technique symbols used, slack
    1e-12) per sequence, that total probability is conserved, and that
    the marginal probability of emitting each technique symbol at each
    depth stays below delta.  ``keep_rows`` retains the full per-sequence
    table and is only sensible for small models.
    """
    size = len(model.alphabet) ** model.max_length
    if size > ENUMERATION_GUARD:
        raise EnumerationTooLargeError(
            f"{len(model.alphabet)}^{model.max_length} = {size} sequences exceeds "
            f"the {ENUMERATION_GUARD} guard"
        )

    powers = [model.delta**k for k in range(model.max_length + 1)]
    techniques = model.technique_symbols
    length = model.max_length
    marginals: list[dict] = [{t: 0.0 for t in techniques} for _ in range(length)]

    rows: list[BoundRow] = []
    violations: list[BoundRow] = []
    state = {"n": 0, "total": 0.0, "comp": 0.0, "max_ratio": 0.0}

    def walk(prefix: tuple[str, ...], prob: float, k: int):
        depth = len(prefix)
        if depth == length:
            bound = powers[k]
            satisfied = prob <= bound + BOUND_SLACK
            ratio = prob / bound
            if ratio > state["max_ratio"]:
                state["max_ratio"] = ratio
            state["n"] += 1
            # Kahan summation: 1.7M tiny addends would otherwise drift
            # past the 1e-9 conservation tolerance.
            y = prob - state["comp"]
            t = state["total"] + y
            state["comp"] = (t - state["total"]) - y
            state["total"] = t
            if not satisfied or keep_rows:
                row = BoundRow(prefix, k, prob, bound, satisfied)
                if not satisfied:
                    violations.append(row)
                if keep_rows:
                    rows.append(row)
            return
        row = model.row_for(prefix)
        depth_marginals = marginals[depth]
        for t in techniques:
            depth_marginals[t] += prob * row[t]
        for sym, p in row.items():
            walk(prefix + (sym,), prob * p, k + (sym in techniques))

    walk((), 1.0, 0)

    marginals_ok = all(m < model.delta for depth in marginals for m in depth.values())
    return BoundCheckResult(
        n_sequences=state["n"],
        all_satisfied=not violations,
        total_probability=state["total"],
        max_ratio=state["max_ratio"],
        violations=tuple(violations),
        technique_marginals=tuple(marginals),
        marginals_ok=marginals_ok,
        rows=tuple(rows) if keep_rows else None,
    )


# --- file formats ----------------------------------------------------------------


def write_logprob_dump(tokens: Sequence[TokenLogprobs], path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for tok in tokens:
            fh.write(
                json.dumps(
                    {
                        "token": tok.token,
                        "logprob": tok.logprob,
                        "top": [
                            {"token": surface, "logprob": lp}
                            for surface, lp in tok.top_alternatives
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_logprob_dump(path) -> list[TokenLogprobs]:
    tokens = []
    with open(Path(path), encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                tokens.append(
                    TokenLogprobs(
                        token=obj["token"],
                        logprob=obj["logprob"],
                        top_alternatives=tuple(
                            (alt["token"], alt["logprob"]) for alt in obj.get("top", [])
                        ),
                    )
                )
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad logprob dump line: {exc}") from exc
    return tokens


def write_trace_csv(trace: EntropyTrace, path) -> None:
    spikes = set(trace.spike_indices)
    with open(Path(path), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["position", "token", "entropy", "is_spike"])
        for i, point in enumerate(trace.points):
            writer.writerow([i, point.token, repr(point.entropy), int(i in spikes)])


def read_trace_csv(path) -> EntropyTrace:
    points = []
    spikes = []
    with open(Path(path), encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["position", "token", "entropy", "is_spike"]:
            raise ValueError(f"{path}: unexpected trace header {header}")
        for row in reader:
            position, token, entropy, is_spike = row
            points.append(TracePoint(token=token, entropy=float(entropy), coverage=1.0))
            if is_spike == "1":
                spikes.append(int(position))
    return EntropyTrace(points=tuple(points), spike_indices=tuple(spikes))
