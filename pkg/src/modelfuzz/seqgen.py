"""Interpret a :class:`~modelfuzz.model.StateModel` as a random sequence generator."""

from __future__ import annotations

import json
import random
from bisect import bisect
from dataclasses import dataclass
from itertools import accumulate
from typing import IO, Iterable, Sequence

from .model import StateModel, validate_model
from .seeding import derive_seed

# hard cap so a pathological model cannot loop forever
MAX_SEQUENCE_LENGTH = 4096


class InvalidModelError(ValueError):
    pass


@dataclass(frozen=True)
class MessageSequence:
    id: int
    states: tuple[str, ...]
    seed: int

    def to_dict(self) -> dict:
        return {"id": self.id, "seed": self.seed, "states": list(self.states)}


@dataclass(frozen=True)
class BatchStats:
    total_cases: int
    unique_cases: int
    avg_length: float

    def to_dict(self) -> dict:
        return {"total_cases": self.total_cases, "unique_cases": self.unique_cases, "avg_length": self.avg_length}


class _Sampler:
    """Precomputed cumulative weights for fast repeated sampling from one model."""

    def __init__(self, model: StateModel):
        report = validate_model(model)
        if not report.ok:
            raise InvalidModelError("cannot generate from an invalid model: " + "; ".join(report.messages()))
        self.initial = model.initial_state
        self.stop = model.stop_probability
        rule = model.reconnect_rule
        self.terminal = rule.state if rule else None
        self.reconnect = rule.probability if rule else 0.0
        # (targets, cumulative weights, total, last index): the same draw random.choices makes
        self.table = {
            src: ([t for t, _ in edges], cum, cum[-1] + 0.0, len(cum) - 1)
            for src, edges in model.transitions.items()
            if edges
            for cum in [list(accumulate(w for _, w in edges))]
        }

    def sample(self, rng: random.Random) -> list[str]:
        current = self.initial
        states = [current]
        # stop check follows every append, including the initial state
        if rng.random() < self.stop:
            return states
        while len(states) < MAX_SEQUENCE_LENGTH:
            if current == self.terminal:
                if rng.random() >= self.reconnect:
                    break
                nxt = self.initial
            else:
                entry = self.table.get(current)
                if entry is None:
                    break
                targets, cum, total, hi = entry
                nxt = targets[bisect(cum, rng.random() * total, 0, hi)]
            states.append(nxt)
            current = nxt
            if rng.random() < self.stop:
                break
        return states


def generate_sequence(model: StateModel, rng: random.Random, seq_id: int = 0, seed: int = 0) -> MessageSequence:
    return MessageSequence(seq_id, tuple(_Sampler(model).sample(rng)), seed)


def sequence_from_seed(model: StateModel, seed: int, seq_id: int = 0) -> MessageSequence:
    return generate_sequence(model, random.Random(seed), seq_id, seed)


def generate_batch(model: StateModel, n: int, master_seed: int, start_id: int = 0) -> list[MessageSequence]:
    """Generate ``n`` sequences; sequence ``i`` is seeded by ``derive_seed(master_seed, i)``."""
    if n < 1:
        raise ValueError("batch size must be >= 1")
    sampler = _Sampler(model)
    # reseeding one generator yields the same stream as a fresh Random(seed), at half the cost
    rng = random.Random()
    out = []
    for i in range(n):
        seed = derive_seed(master_seed, i)
        rng.seed(seed)
        out.append(MessageSequence(start_id + i, tuple(sampler.sample(rng)), seed))
    return out


def batch_stats(batch: Sequence[MessageSequence], encoded_lengths: Sequence[int]) -> BatchStats:
    if not batch:
        raise ValueError("batch_stats of an empty batch")
    if len(encoded_lengths) != len(batch):
        raise ValueError("encoded_lengths must align with batch")
    unique = len({s.states for s in batch})
    return BatchStats(len(batch), unique, sum(encoded_lengths) / len(encoded_lengths))


def is_valid_path(model: StateModel, states: Sequence[str]) -> bool:
    """True when ``states`` starts at the initial state and only takes model edges."""
    if not states or states[0] != model.initial_state:
        return False
    edge_sets = {src: {t for t, _ in edges} for src, edges in model.transitions.items()}
    for a, b in zip(states, states[1:]):
        if model.is_terminal(a):
            if b != model.initial_state:
                return False
        elif b not in edge_sets.get(a, ()):
            return False
    return True


def write_jsonl(batch: Iterable[MessageSequence], fh: IO[str]) -> None:
    for seq in batch:
        fh.write(json.dumps(seq.to_dict(), separators=(",", ":")) + "\n")


def read_jsonl(fh: IO[str]) -> list[MessageSequence]:
    out = []
    for line in fh:
        if line.strip():
            d = json.loads(line)
            out.append(MessageSequence(int(d["id"]), tuple(d["states"]), int(d["seed"])))
    return out
