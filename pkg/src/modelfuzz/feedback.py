"""Per-state failure statistics and their deterministic text summary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .harness import FAILURE_CLASSES, SequenceOutcome
from .seqgen import MessageSequence

# number of lines after the per-state block in a rendered summary
FOOTER_LINES = 4


@dataclass(frozen=True)
class StateCounts:
    requests: int = 0
    failures: int = 0

    @property
    def failure_rate(self) -> float | None:
        return self.failures / self.requests if self.requests else None


@dataclass(frozen=True)
class FailureStats:
    per_state: dict[str, StateCounts] = field(default_factory=dict)
    sequences: int = 0
    messages: int = 0
    failures: int = 0
    crashes: int = 0
    # distinct (state, first response byte, outcome class) triples
    responses: frozenset = frozenset()

    @classmethod
    def empty(cls, states: Iterable[str] = ()) -> "FailureStats":
        return cls(per_state={s: StateCounts() for s in states})

    @property
    def overall_failure_rate(self) -> float:
        return self.failures / self.messages if self.messages else 0.0

    @property
    def distinct_responses(self) -> int:
        return len(self.responses)

    def to_dict(self) -> dict:
        return {
            "per_state": {
                s: {"requests": c.requests, "failures": c.failures, "failure_rate": c.failure_rate}
                for s, c in sorted(self.per_state.items())
            },
            "sequences": self.sequences,
            "messages": self.messages,
            "failures": self.failures,
            "overall_failure_rate": self.overall_failure_rate,
            "crashes": self.crashes,
            "distinct_responses": self.distinct_responses,
        }


def accumulate(stats: FailureStats, seq: MessageSequence, outcome: SequenceOutcome) -> FailureStats:
    """Fold one sequence's outcome into ``stats`` (returns a new value)."""
    if seq.id != outcome.sequence_id:
        raise ValueError(f"outcome {outcome.sequence_id} does not belong to sequence {seq.id}")
    if len(outcome.results) > len(seq.states):
        raise ValueError("outcome has more results than the sequence has messages")
    per_state = dict(stats.per_state)
    failures = 0
    keys = set()
    for state, result in outcome.results:
        failed = result.cls in FAILURE_CLASSES
        failures += failed
        c = per_state.get(state, StateCounts())
        per_state[state] = StateCounts(c.requests + 1, c.failures + failed)
        keys.add((state, result.first_byte, result.cls))
    return FailureStats(
        per_state=per_state,
        sequences=stats.sequences + 1,
        messages=stats.messages + len(outcome.results),
        failures=stats.failures + failures,
        crashes=stats.crashes + outcome.crashed,
        responses=stats.responses | keys if keys - stats.responses else stats.responses,
    )


def merge(a: FailureStats, b: FailureStats) -> FailureStats:
    per_state = dict(a.per_state)
    for s, c in b.per_state.items():
        prev = per_state.get(s, StateCounts())
        per_state[s] = StateCounts(prev.requests + c.requests, prev.failures + c.failures)
    return FailureStats(
        per_state=per_state,
        sequences=a.sequences + b.sequences,
        messages=a.messages + b.messages,
        failures=a.failures + b.failures,
        crashes=a.crashes + b.crashes,
        responses=a.responses | b.responses,
    )


@dataclass(frozen=True)
class ResultSummary:
    stats: FailureStats
    text: str


def render(stats: FailureStats) -> str:
    lines = []
    for state, c in sorted(stats.per_state.items()):
        rate = f"{c.failure_rate:.4f}" if c.requests else "n/a"
        lines.append(f"{state}: requests={c.requests} failures={c.failures} failure_rate={rate}")
    lines.append(f"TOTAL sequences={stats.sequences} messages={stats.messages}")
    lines.append(f"TOTAL failures={stats.failures} overall_failure_rate={stats.overall_failure_rate:.4f}")
    lines.append(f"TOTAL crashes={stats.crashes}")
    lines.append(f"TOTAL distinct_responses={stats.distinct_responses}")
    return "\n".join(lines)


def summarize(stats: FailureStats) -> ResultSummary:
    if stats.messages == 0:
        raise ValueError("cannot summarize statistics with no recorded messages")
    return ResultSummary(stats, render(stats))
