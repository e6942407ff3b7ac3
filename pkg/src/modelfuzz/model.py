"""Coarse-grained protocol state model: definition, validation and adjustment.

A :class:`StateModel` is a weighted transition graph over a subset of a
protocol's candidate states.  It is immutable; every operation here returns a
new value.  The JSON document produced by :meth:`StateModel.to_document` is
also the format advisors emit when proposing a model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Sequence

DEFAULT_STOP_PROBABILITY = 0.5

Edge = tuple[str, int]


class ModelFormatError(ValueError):
    """A model document is structurally malformed (missing keys, wrong types)."""


class AdjustmentError(ValueError):
    """An adjustment cannot be applied to the given model."""


@dataclass(frozen=True)
class ReconnectRule:
    state: str
    # probability of jumping back to the initial state instead of stopping
    probability: float


@dataclass(frozen=True)
class StateModel:
    protocol: str
    candidate_states: tuple[str, ...]
    selected_states: tuple[str, ...]
    initial_state: str
    transitions: Mapping[str, tuple[Edge, ...]]
    stop_probability: float = DEFAULT_STOP_PROBABILITY
    reconnect_rule: ReconnectRule | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidate_states", tuple(self.candidate_states))
        object.__setattr__(self, "selected_states", tuple(self.selected_states))
        frozen = {
            src: tuple((str(t), w) for t, w in edges) for src, edges in dict(self.transitions).items()
        }
        object.__setattr__(self, "transitions", MappingProxyType(frozen))

    def edges(self, state: str) -> tuple[Edge, ...]:
        return self.transitions.get(state, ())

    def is_terminal(self, state: str) -> bool:
        return self.reconnect_rule is not None and self.reconnect_rule.state == state

    def to_document(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "protocol": self.protocol,
            "candidate_states": list(self.candidate_states),
            "selected_states": list(self.selected_states),
            "initial_state": self.initial_state,
            "transitions": {src: [[t, w] for t, w in edges] for src, edges in self.transitions.items()},
            "stop_probability": self.stop_probability,
        }
        if self.reconnect_rule is not None:
            doc["reconnect_rule"] = {
                "state": self.reconnect_rule.state,
                "probability": self.reconnect_rule.probability,
            }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True)

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "StateModel":
        if not isinstance(doc, Mapping):
            raise ModelFormatError("model document must be a JSON object")
        missing = [k for k in ("protocol", "candidate_states", "selected_states", "initial_state", "transitions") if k not in doc]
        if missing:
            raise ModelFormatError(f"model document missing keys: {', '.join(missing)}")
        transitions = doc["transitions"]
        if not isinstance(transitions, Mapping):
            raise ModelFormatError("transitions must be an object mapping state -> [[target, weight], ...]")
        parsed: dict[str, tuple[Edge, ...]] = {}
        for src, edges in transitions.items():
            if not isinstance(edges, (list, tuple)):
                raise ModelFormatError(f"edges of {src!r} must be a list")
            out = []
            for edge in edges:
                if isinstance(edge, Mapping):
                    edge = (edge.get("target"), edge.get("weight"))
                if not isinstance(edge, (list, tuple)) or len(edge) != 2 or not isinstance(edge[0], str):
                    raise ModelFormatError(f"edge {edge!r} of {src!r} must be a [target, weight] pair")
                out.append((edge[0], _coerce_weight(edge[1])))
            parsed[str(src)] = tuple(out)
        for key in ("candidate_states", "selected_states"):
            if not isinstance(doc[key], (list, tuple)) or not all(isinstance(s, str) for s in doc[key]):
                raise ModelFormatError(f"{key} must be a list of state names")
        rule = doc.get("reconnect_rule")
        reconnect = None
        if rule is not None:
            if isinstance(rule, Mapping):
                reconnect = ReconnectRule(str(rule.get("state")), _coerce_probability(rule.get("probability")))
            elif isinstance(rule, (list, tuple)) and len(rule) == 2:
                reconnect = ReconnectRule(str(rule[0]), _coerce_probability(rule[1]))
            else:
                raise ModelFormatError("reconnect_rule must be {state, probability}")
        return cls(
            protocol=str(doc["protocol"]),
            candidate_states=tuple(doc["candidate_states"]),
            selected_states=tuple(doc["selected_states"]),
            initial_state=str(doc["initial_state"]),
            transitions=parsed,
            stop_probability=_coerce_probability(doc.get("stop_probability", DEFAULT_STOP_PROBABILITY)),
            reconnect_rule=reconnect,
        )

    @classmethod
    def from_json(cls, text: str) -> "StateModel":
        try:
            return cls.from_document(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"invalid JSON: {exc}") from exc


def _coerce_weight(value: Any) -> Any:
    # integral floats (70.0) are accepted; anything else is left for validate_model to flag
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def _coerce_probability(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ModelFormatError(f"probability must be a number, got {value!r}")
    return float(value)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[tuple[str, str], ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [f"{rule}: {msg}" for rule, msg in self.violations]


def validate_model(model: StateModel) -> ValidationReport:
    """Collect every well-formedness violation of ``model``; never raises."""
    out: list[tuple[str, str]] = []
    selected = set(model.selected_states)
    candidates = set(model.candidate_states)

    if len(selected) != len(model.selected_states):
        out.append(("duplicate-state", "selected_states contains duplicates"))
    for s in model.selected_states:
        if s not in candidates:
            out.append(("unknown-selected-state", f"selected state {s!r} is not a candidate state"))
    if model.initial_state not in selected:
        out.append(("initial-not-selected", f"initial state {model.initial_state!r} is not selected"))
    if not 0.0 <= model.stop_probability <= 1.0:
        out.append(("stop-probability-range", f"stop_probability {model.stop_probability} outside [0, 1]"))

    for src, edges in model.transitions.items():
        if src not in selected:
            out.append(("unknown-transition-source", f"unknown transition source {src!r}"))
        for target, weight in edges:
            if target not in selected:
                out.append(("unknown-transition-target", f"unknown transition target {target!r} (from {src!r})"))
            if isinstance(weight, bool) or not isinstance(weight, int) or weight <= 0:
                out.append(("non-positive-weight", f"edge {src!r} -> {target!r} has invalid weight {weight!r}"))

    rule = model.reconnect_rule
    if rule is not None:
        if rule.state not in selected:
            out.append(("unknown-reconnect-state", f"reconnect state {rule.state!r} is not selected"))
        if not 0.0 <= rule.probability <= 1.0:
            out.append(("reconnect-probability-range", f"reconnect probability {rule.probability} outside [0, 1]"))

    # with stop_probability 1 every sequence is just the initial state, so no edges are needed
    if model.stop_probability < 1.0:
        for s in model.selected_states:
            if not model.is_terminal(s) and not model.edges(s):
                out.append(("dead-end", f"non-terminal state {s!r} has no outgoing transitions"))
        if model.stop_probability == 0.0 and (rule is None or rule.probability >= 1.0):
            out.append(("no-termination", "stop_probability 0 without a terminating reconnect rule never ends"))

    return ValidationReport(tuple(out))


@dataclass(frozen=True)
class AdvisorDecision:
    kind: str  # ADD | DELETE | KEEP
    state: str | None = None
    reason: str = ""
    raw_reply: str = ""
    # optional outgoing edges for an ADDed state
    edges: tuple[Edge, ...] = ()
    # how the decision was reached: "advisor", "fallback", ...
    source: str = "advisor"
    reprompts: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "state": self.state,
            "reason": self.reason,
            "raw_reply": self.raw_reply,
            "source": self.source,
            "reprompts": self.reprompts,
        }


KEEP = AdvisorDecision("KEEP")


def _fair_weight(edges: Sequence[Edge]) -> int:
    if not edges:
        return 1
    return max(1, round(sum(w for _, w in edges) / len(edges)))


def apply_adjustment(model: StateModel, decision: AdvisorDecision) -> StateModel:
    """Apply a validated ADD/DELETE/KEEP decision, returning a new valid model."""
    kind = decision.kind.upper()
    if kind == "KEEP":
        return model
    state = decision.state
    if kind == "ADD":
        if state not in model.candidate_states:
            raise AdjustmentError(f"cannot ADD {state!r}: not a candidate state")
        if state in model.selected_states:
            raise AdjustmentError(f"cannot ADD {state!r}: already selected")
        transitions = {src: list(edges) for src, edges in model.transitions.items()}
        for src in model.selected_states:
            if model.is_terminal(src):
                continue
            existing = transitions.setdefault(src, [])
            existing.append((state, _fair_weight(existing)))
        own = list(decision.edges) or [(model.initial_state, 1)]
        known = set(model.selected_states) | {state}
        own = [(t, w) for t, w in own if t in known]
        transitions[state] = own or [(model.initial_state, 1)]
        new = StateModel(
            protocol=model.protocol,
            candidate_states=model.candidate_states,
            selected_states=model.selected_states + (state,),
            initial_state=model.initial_state,
            transitions=transitions,
            stop_probability=model.stop_probability,
            reconnect_rule=model.reconnect_rule,
        )
    elif kind == "DELETE":
        if state == model.initial_state:
            raise AdjustmentError(f"cannot DELETE the initial state {state!r}")
        if state not in model.selected_states:
            raise AdjustmentError(f"cannot DELETE {state!r}: not selected")
        transitions = {}
        for src, edges in model.transitions.items():
            if src == state:
                continue
            kept = [(t, w) for t, w in edges if t != state]
            if not kept and edges:
                kept = [(model.initial_state, 1)]
            transitions[src] = kept
        rule = model.reconnect_rule
        if rule is not None and rule.state == state:
            rule = None
        new = StateModel(
            protocol=model.protocol,
            candidate_states=model.candidate_states,
            selected_states=tuple(s for s in model.selected_states if s != state),
            initial_state=model.initial_state,
            transitions=transitions,
            stop_probability=model.stop_probability,
            reconnect_rule=rule,
        )
    else:
        raise AdjustmentError(f"unknown decision kind {decision.kind!r}")

    report = validate_model(new)
    if not report.ok:
        raise AdjustmentError("adjusted model is invalid: " + "; ".join(report.messages()))
    return new


def reset_to_initial(current: StateModel, snapshot: StateModel) -> StateModel:
    """Random restart: discard ``current`` and return a fresh copy of ``snapshot``."""
    del current
    return StateModel.from_document(snapshot.to_document())


def example_mqtt_model() -> StateModel:
    """Hand-written 7-state MQTT generator model with CONNECT as entry point."""
    from .protocols import MQTT_STATES

    return StateModel(
        protocol="MQTT",
        candidate_states=MQTT_STATES,
        selected_states=("CONNECT", "CONNACK", "PUBLISH", "SUBSCRIBE", "DISCONNECT", "PINGREQ", "PUBACK"),
        initial_state="CONNECT",
        transitions={
            "CONNECT": (("CONNACK", 70), ("SUBSCRIBE", 30)),
            "CONNACK": (("PUBLISH", 50), ("SUBSCRIBE", 30), ("DISCONNECT", 20)),
            "PUBLISH": (("PUBACK", 60), ("SUBSCRIBE", 30), ("DISCONNECT", 10)),
            "SUBSCRIBE": (("PUBLISH", 40), ("DISCONNECT", 30), ("PINGREQ", 30)),
            "PINGREQ": (("DISCONNECT", 70), ("PUBACK", 30)),
            "PUBACK": (("PUBLISH", 60), ("DISCONNECT", 40)),
        },
        stop_probability=0.5,
        reconnect_rule=ReconnectRule("DISCONNECT", 0.5),
    )
