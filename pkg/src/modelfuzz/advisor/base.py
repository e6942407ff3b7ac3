from __future__ import annotations

import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Iterable

from ..feedback import ResultSummary
from ..model import AdvisorDecision, StateModel
from ..protocols import ProtocolProfile, get_profile
from .ledger import TokenLedger

DEFAULT_MAX_CANDIDATES = 32
_STATE_NAME = re.compile(r"^[A-Z][A-Z0-9_]{0,63}$")


@dataclass(frozen=True)
class SelectionResult:
    entries: tuple[tuple[str, str], ...]
    # the universe the selection was drawn from
    candidates: tuple[str, ...] = ()
    protocol: str = ""

    @property
    def states(self) -> tuple[str, ...]:
        return tuple(s for s, _ in self.entries)

    def to_dict(self) -> dict:
        return {"states": [{"select": s, "reason": r} for s, r in self.entries]}


def validate_selection(states: Iterable[str], candidates: Iterable[str], k: int, initial: str | None) -> list[str]:
    states = list(states)
    cands = set(candidates)
    problems = []
    unknown = [s for s in states if s not in cands]
    if unknown:
        problems.append(f"states not among the candidates: {unknown}")
    if len(set(states)) != len(states):
        problems.append("states must be distinct")
    if len(states) != k:
        problems.append(f"expected exactly {k} states, got {len(states)}")
    if initial is not None and initial in cands and initial not in states:
        problems.append(f"the selection must include the initial state {initial}")
    return problems


def merge_candidates(
    candidates: Iterable[str],
    proposed: Iterable[str],
    is_known: Callable[[str], bool],
    limit: int = DEFAULT_MAX_CANDIDATES,
) -> tuple[str, ...]:
    """Merge advisor-proposed states into ``candidates``, dropping anything unverifiable."""
    merged = list(dict.fromkeys(candidates))
    for s in proposed:
        if len(merged) >= limit:
            break
        if isinstance(s, str) and _STATE_NAME.match(s) and s not in merged and is_known(s):
            merged.append(s)
    return tuple(merged)


class Advisor(ABC):
    """Selects states, proposes transition models and decides adjustments."""

    name = "advisor"
    ledger: TokenLedger

    def profile(self, protocol: str) -> ProtocolProfile:
        return get_profile(protocol)

    def augment_states(
        self, candidates: tuple[str, ...], protocol: str, documentation: str, is_known: Callable[[str], bool]
    ) -> tuple[str, ...]:
        return tuple(candidates)

    @abstractmethod
    def select_states(self, candidates: tuple[str, ...], k: int, protocol: str) -> SelectionResult:
        ...

    @abstractmethod
    def propose_model(self, selection: SelectionResult, protocol: str) -> StateModel:
        ...

    @abstractmethod
    def decide_adjustment(self, summary: ResultSummary, model: StateModel) -> AdvisorDecision:
        ...
