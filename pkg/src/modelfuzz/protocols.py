"""Static per-protocol knowledge: candidate state universes and heuristic priorities."""

from __future__ import annotations

from dataclasses import dataclass

MQTT_STATES = (
    "CONNECT", "CONNACK", "PUBLISH",
    "PUBACK", "PUBREC", "PUBREL",
    "PUBCOMP", "SUBSCRIBE", "SUBACK",
    "UNSUBSCRIBE", "UNSUBACK", "PINGREQ",
    "PINGRESP", "DISCONNECT", "AUTH",
)

MODBUS_STATES = (
    "READ_COILS",
    "READ_HOLDING_REGISTERS",
    "WRITE_SINGLE_REGISTER",
    "WRITE_MULTIPLE_REGISTERS",
    "READ_FILE_RECORD",
    "READ_DEVICE_IDENTIFICATION",
)


@dataclass(frozen=True)
class ProtocolProfile:
    name: str
    candidates: tuple[str, ...]
    initial_state: str
    # state that may reconnect to the initial state instead of ending a sequence
    terminal_state: str | None
    # heuristic selection order, most essential first
    priority: tuple[str, ...]
    default_select: int
    reasons: dict[str, str]

    def rank(self, state: str) -> int:
        try:
            return self.priority.index(state)
        except ValueError:
            return len(self.priority) + self.candidates.index(state) if state in self.candidates else 10_000


MQTT = ProtocolProfile(
    name="MQTT",
    candidates=MQTT_STATES,
    initial_state="CONNECT",
    terminal_state="DISCONNECT",
    priority=(
        "CONNECT", "PUBLISH", "SUBSCRIBE", "DISCONNECT", "PINGREQ", "CONNACK", "PUBACK",
        "UNSUBSCRIBE", "PUBREC", "PUBREL", "PUBCOMP", "SUBACK", "UNSUBACK", "PINGRESP", "AUTH",
    ),
    default_select=7,
    reasons={
        "CONNECT": "every session starts here; exercises authentication and session setup",
        "PUBLISH": "core data path; topic parsing and QoS handling",
        "SUBSCRIBE": "topic filter parsing and subscription bookkeeping",
        "DISCONNECT": "session teardown and reconnect handling",
        "PINGREQ": "keep-alive handling, reachable in any session state",
        "CONNACK": "wrong-direction packet; tests broker input validation",
        "PUBACK": "QoS 1 acknowledgement flow",
        "UNSUBSCRIBE": "subscription removal",
        "PUBREC": "QoS 2 flow, first step",
        "PUBREL": "QoS 2 flow, second step",
        "PUBCOMP": "QoS 2 flow, completion",
        "SUBACK": "wrong-direction acknowledgement",
        "UNSUBACK": "wrong-direction acknowledgement",
        "PINGRESP": "wrong-direction keep-alive reply",
        "AUTH": "extended authentication exchange",
    },
)

MODBUS = ProtocolProfile(
    name="MODBUS",
    candidates=MODBUS_STATES,
    initial_state="READ_DEVICE_IDENTIFICATION",
    terminal_state=None,
    priority=(
        "READ_DEVICE_IDENTIFICATION", "READ_HOLDING_REGISTERS", "WRITE_MULTIPLE_REGISTERS",
        "WRITE_SINGLE_REGISTER", "READ_COILS", "READ_FILE_RECORD",
    ),
    default_select=4,
    reasons={
        "READ_DEVICE_IDENTIFICATION": "encapsulated interface transport; identifies the device",
        "READ_HOLDING_REGISTERS": "most common register read path",
        "WRITE_MULTIPLE_REGISTERS": "variable-length write with byte count field",
        "WRITE_SINGLE_REGISTER": "fixed-length write",
        "READ_COILS": "bit-oriented read path",
        "READ_FILE_RECORD": "nested sub-request parsing",
    },
)

PROFILES = {"mqtt": MQTT, "modbus": MODBUS}


def get_profile(protocol: str) -> ProtocolProfile:
    try:
        return PROFILES[protocol.lower()]
    except KeyError:
        raise ValueError(f"unsupported protocol {protocol!r}; expected one of {sorted(PROFILES)}") from None
