"""Deterministic, LLM-free advisor driven by a fixed priority table and thresholds."""

from __future__ import annotations

from dataclasses import dataclass

from ..feedback import ResultSummary
from ..model import AdvisorDecision, ReconnectRule, StateModel, validate_model
from .backends import AdvisorError
from .base import Advisor, SelectionResult, validate_selection
from .ledger import TokenLedger


@dataclass(frozen=True)
class HeuristicThresholds:
    delete_failure_rate: float = 0.9
    delete_min_requests: int = 100
    add_overall_rate: float = 0.01


class HeuristicAdvisor(Advisor):
    """Pure function of (summary, model, priority table); never calls out."""

    name = "heuristic"

    def __init__(self, thresholds: HeuristicThresholds | None = None):
        self.thresholds = thresholds or HeuristicThresholds()
        self.ledger = TokenLedger()

    def select_states(self, candidates, k, protocol):
        if k > len(candidates):
            raise AdvisorError(f"cannot select {k} states from {len(candidates)} candidates")
        prof = self.profile(protocol)
        ranked = sorted(candidates, key=prof.rank)
        chosen = ranked[:k]
        if prof.initial_state in candidates and prof.initial_state not in chosen and k > 0:
            chosen = [prof.initial_state] + chosen[:-1]
        problems = validate_selection(chosen, candidates, k, prof.initial_state)
        if problems:
            raise AdvisorError("; ".join(problems))
        entries = tuple((s, prof.reasons.get(s, "selected by priority order")) for s in chosen)
        return SelectionResult(entries, tuple(candidates), prof.name)

    def propose_model(self, selection, protocol):
        prof = self.profile(protocol)
        return synthesize_model(prof.name, selection.candidates or prof.candidates, selection.states,
                                prof.initial_state, prof.terminal_state)

    def decide_adjustment(self, summary: ResultSummary, model: StateModel) -> AdvisorDecision:
        t = self.thresholds
        stats = summary.stats
        prof = self.profile(model.protocol)
        deletable = []
        for state in model.selected_states:
            if state == model.initial_state:
                continue
            c = stats.per_state.get(state)
            if c and c.requests >= t.delete_min_requests and c.failures / c.requests > t.delete_failure_rate:
                deletable.append((-c.failures / c.requests, -prof.rank(state), state, c))
        if deletable:
            _, _, state, c = min(deletable)
            return AdvisorDecision(
                "DELETE", state,
                f"{state} failed {c.failures}/{c.requests} requests (rate {c.failures / c.requests:.4f} > "
                f"{t.delete_failure_rate})",
                source=self.name,
            )
        unselected = [s for s in model.candidate_states if s not in model.selected_states]
        if stats.overall_failure_rate < t.add_overall_rate and unselected:
            state = min(unselected, key=prof.rank)
            return AdvisorDecision(
                "ADD", state,
                f"overall failure rate {stats.overall_failure_rate:.4f} < {t.add_overall_rate}; "
                f"widening the search space with {state}",
                source=self.name,
            )
        return AdvisorDecision("KEEP", None, "no threshold crossed", source=self.name)


def synthesize_model(
    protocol: str,
    candidates: tuple[str, ...],
    selected: tuple[str, ...],
    initial: str,
    terminal: str | None,
    stop_probability: float = 0.5,
) -> StateModel:
    """Fixed topology: the initial state fans out uniformly, every other state
    fans out uniformly over the non-initial states (so each reaches the
    session-ending state when it is selected), and the session-ending state
    reconnects to the initial state half of the time."""
    if initial not in selected:
        raise AdvisorError(f"selection lacks the initial state {initial}")
    terminal = terminal if terminal in selected else None
    others = [s for s in selected if s != initial]
    transitions = {initial: [(s, 1) for s in others] or [(initial, 1)]}
    for s in others:
        if s == terminal:
            continue
        targets = others if terminal is not None else list(selected)
        transitions[s] = [(t, 1) for t in targets]
    model = StateModel(
        protocol=protocol,
        candidate_states=tuple(candidates),
        selected_states=tuple(selected),
        initial_state=initial,
        transitions=transitions,
        stop_probability=stop_probability,
        reconnect_rule=ReconnectRule(terminal, 0.5) if terminal else None,
    )
    report = validate_model(model)
    if not report.ok:
        raise AdvisorError("synthesized model is invalid: " + "; ".join(report.messages()))
    return model
