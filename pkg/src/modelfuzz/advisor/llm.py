"""Advisor backed by a chat model.

Every reply passes through validation before it can influence the model:
unknown states, malformed JSON and invalid transition documents trigger one
reprompt and then either a hard error (construction) or a KEEP fallback
(adjustment).
"""

from __future__ import annotations

import json
import logging
import math
from typing import Any, Callable

from ..feedback import ResultSummary
from ..model import AdvisorDecision, ModelFormatError, StateModel, validate_model
from .backends import AdvisorError, ChatBackend
from .base import DEFAULT_MAX_CANDIDATES, Advisor, SelectionResult, merge_candidates, validate_selection
from .parsing import ReplyParseError, extract_json
from .prompts import render

log = logging.getLogger(__name__)

_DECISION_ALIASES = {
    "ADD": "ADD",
    "DELETE": "DELETE",
    "REMOVE": "DELETE",
    "KEEP": "KEEP",
    "NONE": "KEEP",
    "NO_CHANGE": "KEEP",
}

_MODEL_EXAMPLE = json.dumps({
    "initial_state": "A",
    "transitions": {"A": [["B", 70], ["C", 30]], "B": [["C", 100]]},
    "stop_probability": 0.5,
    "reconnect_rule": {"state": "C", "probability": 0.5},
})


class _Rejected(ValueError):
    """A reply that parsed but failed validation."""


def _fmt_states(states) -> str:
    return json.dumps(list(states))


class LLMAdvisor(Advisor):
    name = "llm"

    def __init__(self, backend: ChatBackend, max_candidates: int = DEFAULT_MAX_CANDIDATES):
        self.backend = backend
        self.ledger = backend.ledger
        self.max_candidates = max_candidates
        # generation instruction from the autoprompting step, reused on re-proposal
        self._instruction: dict[str, str] = {}

    def _ask(self, template_id: str, prompt: str, parse: Callable[[str], Any]) -> tuple[Any, str, int]:
        """Send ``prompt``; on a rejected reply reprompt once.  Returns (value, raw reply, reprompts)."""
        reply = self.backend.chat(prompt, template_id)
        try:
            return parse(reply), reply, 0
        except (ReplyParseError, _Rejected, ModelFormatError) as exc:
            log.info("advisor reply for %s rejected (%s); reprompting", template_id, exc)
            retry = render("reprompt", prompt=prompt, error=str(exc), previous=reply)
            reply = self.backend.chat(retry, template_id)
            try:
                return parse(reply), reply, 1
            except (ReplyParseError, _Rejected, ModelFormatError) as exc2:
                raise AdvisorError(f"{template_id}: reply rejected after reprompt: {exc2}") from exc2

    def augment_states(self, candidates, protocol, documentation, is_known):
        if not documentation.strip():
            return tuple(candidates)
        prompt = render("augment_states", protocol=protocol, documentation=documentation,
                        states=_fmt_states(candidates))

        def parse(reply: str) -> list[str]:
            value = extract_json(reply)
            if not isinstance(value, list):
                raise _Rejected("expected a JSON array of state names")
            return [v if isinstance(v, str) else str(v.get("state", "")) if isinstance(v, dict) else "" for v in value]

        try:
            proposed, _, _ = self._ask("augment_states", prompt, parse)
        except AdvisorError as exc:
            log.warning("state augmentation skipped: %s", exc)
            return tuple(candidates)
        return merge_candidates(candidates, [p.upper() for p in proposed], is_known, self.max_candidates)

    def select_states(self, candidates, k, protocol):
        if k > len(candidates):
            raise AdvisorError(f"cannot select {k} states from {len(candidates)} candidates")
        prof = self.profile(protocol)
        example = render("select_states_example", number=k, protocol=prof.name)
        prompt = render("select_states", protocol=prof.name, number=k, states=_fmt_states(candidates), example=example)

        def parse(reply: str) -> tuple[tuple[str, str], ...]:
            value = extract_json(reply)
            if isinstance(value, dict):
                value = next((v for v in value.values() if isinstance(v, list)), None)
            if not isinstance(value, list):
                raise _Rejected("expected a JSON array")
            entries = []
            for item in value:
                if isinstance(item, str):
                    entries.append((item.strip(), ""))
                elif isinstance(item, dict) and isinstance(item.get("select"), str):
                    entries.append((item["select"].strip(), str(item.get("reason", ""))))
                else:
                    raise _Rejected(f"entry {item!r} lacks a string 'select' field")
            problems = validate_selection([s for s, _ in entries], candidates, k, prof.initial_state)
            if problems:
                raise _Rejected("; ".join(problems))
            return tuple(entries)

        entries, _, _ = self._ask("select_states", prompt, parse)
        return SelectionResult(entries, tuple(candidates), prof.name)

    def _generation_instruction(self, selection: SelectionResult, protocol: str) -> str:
        prof = self.profile(protocol)
        key = prof.name
        if key not in self._instruction:
            prompt = render("autoprompt", protocol=prof.name, states=_fmt_states(selection.states),
                            initial=prof.initial_state)
            reply = self.backend.chat(prompt, "autoprompt").strip()
            if not reply:
                raise AdvisorError("autoprompt returned an empty instruction")
            self._instruction[key] = reply
        return self._instruction[key]

    def propose_model(self, selection, protocol):
        prof = self.profile(protocol)
        instruction = self._generation_instruction(selection, protocol)
        prompt = render("propose_model", instruction=instruction, states=_fmt_states(selection.states),
                        initial=prof.initial_state, example=_MODEL_EXAMPLE)
        candidates = selection.candidates or prof.candidates

        def parse(reply: str) -> StateModel:
            value = extract_json(reply)
            if not isinstance(value, dict):
                raise _Rejected("expected a JSON object")
            doc = {
                "protocol": prof.name,
                "candidate_states": list(candidates),
                "selected_states": list(selection.states),
                "initial_state": value.get("initial_state", prof.initial_state),
                "transitions": _normalize_weights(value.get("transitions")),
                "stop_probability": value.get("stop_probability", 0.5),
            }
            if value.get("reconnect_rule") is not None:
                doc["reconnect_rule"] = value["reconnect_rule"]
            model = StateModel.from_document(doc)
            report = validate_model(model)
            if not report.ok:
                raise _Rejected("; ".join(report.messages()))
            return model

        model, _, _ = self._ask("propose_model", prompt, parse)
        return model

    def decide_adjustment(self, summary: ResultSummary, model: StateModel) -> AdvisorDecision:
        states = _fmt_states(model.selected_states)
        prompt = render("decide_adjustment", result_summary=summary.text, protocol=model.protocol, states=states)

        def parse(reply: str) -> tuple[str, str]:
            value = extract_json(reply)
            if not isinstance(value, dict) or not isinstance(value.get("decision"), str):
                raise _Rejected("expected an object with a string 'decision' field")
            kind = _DECISION_ALIASES.get(value["decision"].strip().upper())
            if kind is None:
                raise _Rejected(f"decision must be ADD or DELETE, got {value['decision']!r}")
            return kind, str(value.get("reason", ""))

        try:
            (kind, reason), raw, reprompts = self._ask("decide_adjustment", prompt, parse)
        except AdvisorError as exc:
            return AdvisorDecision("KEEP", None, "advisor unparseable", raw_reply=str(exc), source="fallback", reprompts=1)
        if kind == "KEEP":
            return AdvisorDecision("KEEP", None, reason, raw_reply=raw, reprompts=reprompts)

        if kind == "ADD":
            pool = [s for s in model.candidate_states if s not in model.selected_states]
            template = "name_addition"
        else:
            pool = [s for s in model.selected_states if s != model.initial_state]
            template = "name_deletion"
        if not pool:
            return AdvisorDecision("KEEP", None, f"{kind} requested but no eligible state exists", raw_reply=raw,
                                   source="fallback", reprompts=reprompts)
        follow_up = render(template, result_summary=summary.text, protocol=model.protocol, states=states,
                           candidates=_fmt_states(pool))

        def parse_name(reply: str) -> tuple[str, str]:
            value = extract_json(reply)
            if isinstance(value, dict):
                name = value.get("state") or value.get("select")
                why = str(value.get("reason", ""))
            elif isinstance(value, list) and value and isinstance(value[0], str):
                name, why = value[0], ""
            else:
                raise _Rejected("expected an object with a 'state' field")
            if not isinstance(name, str) or name.strip() not in pool:
                raise _Rejected(f"{name!r} is not one of {pool}")
            return name.strip(), why

        try:
            (state, why), raw2, more = self._ask(template, follow_up, parse_name)
        except AdvisorError as exc:
            return AdvisorDecision("KEEP", None, f"advisor suggested an invalid state: {exc}",
                                   raw_reply=raw, source="fallback", reprompts=reprompts + 1)
        return AdvisorDecision(kind, state, why or reason, raw_reply=raw + "\n---\n" + raw2,
                               reprompts=reprompts + more)


def _normalize_weights(transitions: Any) -> Any:
    """Scale fractional weights (0.7, 0.3) to integers; leave anything odd for validation."""
    if not isinstance(transitions, dict):
        return transitions
    out = {}
    for src, edges in transitions.items():
        if isinstance(edges, list) and all(isinstance(e, (list, tuple)) and len(e) == 2 for e in edges):
            weights = [e[1] for e in edges]
            if all(isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights) and any(
                isinstance(w, float) and not w.is_integer() for w in weights
            ):
                edges = [[t, max(1, int(math.floor(w * 100 + 0.5)))] for t, w in edges]
        out[src] = edges
    return out
